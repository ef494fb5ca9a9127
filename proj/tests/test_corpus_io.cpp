#include <doctest.h>

#include <cstring>

#include "test_util.hpp"
#include "vocex/corpus_io.hpp"
#include "vocex/rng.hpp"

using namespace vocex;
using vocex::test::TempDir;
using vocex::test::read_file;
using vocex::test::write_file;

TEST_SUITE_BEGIN("corpus_io");

TEST_CASE("vocab loads in file order") {
  TempDir tmp("vocab_basic");
  write_file(tmp.file("v.txt"), "a\nb\nc\n");
  const Vocabulary v = load_vocab(tmp.file("v.txt"));
  CHECK(v.size() == 3);
  CHECK(v.id_of("b") == 1);
  CHECK(v.token(0) == "a");
  CHECK(v.token(2) == "c");
  CHECK_FALSE(v.id_of("missing").has_value());
}

TEST_CASE("vocab duplicate token names both lines") {
  TempDir tmp("vocab_dup");
  write_file(tmp.file("v.txt"), "a\nb\na\n");
  try {
    load_vocab(tmp.file("v.txt"));
    FAIL("expected duplicate-token error");
  } catch (const IoError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("lines 1 and 3") != std::string::npos);
  }
}

TEST_CASE("empty vocab file is rejected") {
  TempDir tmp("vocab_empty");
  write_file(tmp.file("v.txt"), "");
  CHECK_THROWS_AS(load_vocab(tmp.file("v.txt")), IoError);
}

TEST_CASE("vocab round trip preserves order and bytes") {
  TempDir tmp("vocab_rt");
  Rng rng(7);
  std::vector<std::string> tokens;
  for (int i = 0; i < 50; ++i)
    tokens.push_back(vocex::test::random_word(rng, 1, 8) + std::to_string(i));
  const Vocabulary v(tokens);
  save_vocab(v, tmp.file("v.txt"));
  const Vocabulary back = load_vocab(tmp.file("v.txt"));
  REQUIRE(back.size() == v.size());
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(back.token(i) == v.token(i));
}

TEST_CASE("word2vec text format basics") {
  TempDir tmp("w2v_basic");
  write_file(tmp.file("w.vec"), "2 3\ncat 1 0 0\ndog 0 1 0\n");
  const WordVectorStore store = load_word_vectors(tmp.file("w.vec"));
  CHECK(store.size() == 2);
  CHECK(store.dim() == 3);
  CHECK(store.word(0) == "cat");
  CHECK(store.vector(1)[1] == 1.0);
}

TEST_CASE("word2vec count and dimension mismatches") {
  TempDir tmp("w2v_bad");
  write_file(tmp.file("extra.vec"), "2 3\ncat 1 0 0\ndog 0 1 0\nfox 0 0 1\n");
  CHECK_THROWS_AS(load_word_vectors(tmp.file("extra.vec")), IoError);
  write_file(tmp.file("fewer.vec"), "2 3\ncat 1 0 0\n");
  CHECK_THROWS_AS(load_word_vectors(tmp.file("fewer.vec")), IoError);
  write_file(tmp.file("short_row.vec"), "1 3\ncat 1 0\n");
  CHECK_THROWS_AS(load_word_vectors(tmp.file("short_row.vec")), IoError);
  write_file(tmp.file("long_row.vec"), "1 2\ncat 1 0 0\n");
  CHECK_THROWS_AS(load_word_vectors(tmp.file("long_row.vec")), IoError);
  write_file(tmp.file("nonfinite.vec"), "1 2\ncat nan 0\n");
  CHECK_THROWS_AS(load_word_vectors(tmp.file("nonfinite.vec")), IoError);
  write_file(tmp.file("dup.vec"), "2 1\ncat 1\ncat 2\n");
  CHECK_THROWS_AS(load_word_vectors(tmp.file("dup.vec")), IoError);
}

TEST_CASE("word2vec round trip is exact") {
  TempDir tmp("w2v_rt");
  Rng rng(42);
  std::vector<std::string> words;
  Matrix vec(30, 5);
  for (int i = 0; i < 30; ++i) words.push_back(vocex::test::random_word(rng, 2, 9) + std::to_string(i));
  for (double& v : vec.data) v = rng.next_gaussian() * std::pow(10.0, rng.next_below(7)) - 3.0;
  const WordVectorStore store(words, vec);
  save_word_vectors(store, tmp.file("w.vec"));
  const WordVectorStore back = load_word_vectors(tmp.file("w.vec"));
  REQUIRE(back.size() == store.size());
  REQUIRE(back.dim() == store.dim());
  for (std::size_t i = 0; i < store.size(); ++i) {
    CHECK(back.word(i) == store.word(i));
    for (std::size_t d = 0; d < store.dim(); ++d) CHECK(back.vector(i)[d] == store.vector(i)[d]);
  }
}

TEST_CASE("matrix file round trip is bit-exact") {
  TempDir tmp("mat_rt");
  SUBCASE("small known matrix") {
    Matrix m(2, 2);
    m.data = {1.0, 2.0, 3.0, 4.0};
    save_matrix(m, tmp.file("m.vxm"));
    const Matrix back = load_matrix(tmp.file("m.vxm"));
    REQUIRE(back.rows == 2);
    REQUIRE(back.cols == 2);
    CHECK(std::memcmp(back.data.data(), m.data.data(), sizeof(double) * 4) == 0);
  }
  SUBCASE("random matrices") {
    Rng rng(5);
    for (int trial = 0; trial < 5; ++trial) {
      Matrix m(1 + rng.next_below(10), 1 + rng.next_below(10));
      for (double& v : m.data) v = rng.next_gaussian() * 1e3;
      save_matrix(m, tmp.file("r.vxm"));
      const Matrix back = load_matrix(tmp.file("r.vxm"));
      REQUIRE(back.rows == m.rows);
      REQUIRE(back.cols == m.cols);
      CHECK(std::memcmp(back.data.data(), m.data.data(), sizeof(double) * m.data.size()) == 0);
    }
  }
}

TEST_CASE("matrix file error paths") {
  TempDir tmp("mat_bad");
  Matrix m(3, 3);
  for (std::size_t i = 0; i < 9; ++i) m.data[i] = static_cast<double>(i);
  save_matrix(m, tmp.file("m.vxm"));

  SUBCASE("truncated file") {
    std::string bytes = read_file(tmp.file("m.vxm"));
    bytes.resize(bytes.size() - 11);
    write_file(tmp.file("short.vxm"), bytes);
    CHECK_THROWS_AS(load_matrix(tmp.file("short.vxm")), IoError);
  }
  SUBCASE("trailing bytes") {
    std::string bytes = read_file(tmp.file("m.vxm"));
    bytes += std::string(8, '\0');
    write_file(tmp.file("long.vxm"), bytes);
    CHECK_THROWS_AS(load_matrix(tmp.file("long.vxm")), IoError);
  }
  SUBCASE("bad magic") {
    std::string bytes = read_file(tmp.file("m.vxm"));
    bytes[0] = 'X';
    write_file(tmp.file("magic.vxm"), bytes);
    CHECK_THROWS_AS(load_matrix(tmp.file("magic.vxm")), IoError);
  }
  SUBCASE("non-finite refused on save") {
    Matrix bad(1, 1);
    bad.data[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(save_matrix(bad, tmp.file("nan.vxm")), IoError);
  }
}

TEST_CASE("named tensor container round trip") {
  TempDir tmp("tensors");
  Rng rng(11);
  NamedTensors tensors;
  for (int i = 0; i < 4; ++i) {
    Matrix m(1 + rng.next_below(6), 1 + rng.next_below(6));
    for (double& v : m.data) v = rng.next_gaussian();
    tensors.emplace_back("tensor." + std::to_string(i), std::move(m));
  }
  save_tensors(tensors, tmp.file("t.vxt"));
  const NamedTensors back = load_tensors(tmp.file("t.vxt"));
  REQUIRE(back.size() == tensors.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    CHECK(back[i].first == tensors[i].first);
    REQUIRE(back[i].second.rows == tensors[i].second.rows);
    CHECK(std::memcmp(back[i].second.data.data(), tensors[i].second.data.data(),
                      sizeof(double) * tensors[i].second.data.size()) == 0);
  }
}

TEST_CASE("init report accounting and round trip") {
  TempDir tmp("report");
  InitReport report;
  report.copied = 1;
  report.predicted = 1;
  report.random = 1;
  report.total = 3;
  report.tags = {Provenance::Copied, Provenance::Predicted, Provenance::Random};
  const Vocabulary vocab(std::vector<std::string>{"a", "b,with,commas", "c\"quoted\""});
  save_init_report(report, vocab, tmp.file("r.csv"));
  const InitReport back = load_init_report(tmp.file("r.csv"));
  CHECK(back.copied == 1);
  CHECK(back.predicted == 1);
  CHECK(back.random == 1);
  CHECK(back.total == 3);
  CHECK(back.tags == report.tags);

  InitReport bad = report;
  bad.copied = 2;
  CHECK_THROWS_AS(bad.validate(), IoError);
}

TEST_SUITE_END();
