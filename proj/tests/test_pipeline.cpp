#include <doctest.h>

#include <filesystem>

#include "test_util.hpp"
#include "vocex/pipeline.hpp"

using namespace vocex;
namespace fs = std::filesystem;

namespace {

BenchmarkConfig tiny_benchmark_config(std::uint64_t seed) {
  BenchmarkConfig c;
  c.n_source = 48;
  c.n_target = 24;
  c.overlap = 6;
  c.word_dim = 6;
  c.coord_dim = 8;
  c.embed_dim = 10;
  c.n_sentence_pairs = 12;
  c.min_sentence_len = 2;
  c.max_sentence_len = 4;
  c.seed = seed;
  return c;
}

PipelineConfig tiny_pipeline_config(const std::string& bench_dir, const std::string& out_dir) {
  PipelineConfig c;
  c.benchmark_dir = bench_dir;
  c.out_dir = out_dir;
  c.rank = 8;
  c.seed = 3;
  c.retrieval_k = 3;
  c.training.epochs = 3;
  c.training.batch_size = 8;
  c.training.learning_rate = 1e-3;
  c.training.dropout = 0.0;
  c.training.hidden_dim = 8;
  c.training.num_layers = 1;
  c.training.validation_fraction = 0.125;
  c.training.patience = 0;
  return c;
}

}  // namespace

TEST_SUITE_BEGIN("pipeline");

TEST_CASE("hyper run produces the eight artifacts and reruns identically") {
  vocex::test::TempDir tmp("pipe_hyper");
  save_benchmark(generate_benchmark(tiny_benchmark_config(11)), tmp.file("bench"));

  PipelineConfig config = tiny_pipeline_config(tmp.file("bench"), tmp.file("run_a"));
  const PipelineResult a = run_pipeline(config);
  CHECK(a.artifacts.size() == 8);
  for (const auto& e : a.artifacts) CHECK(fs::exists(fs::path(tmp.file("run_a")) / e.relpath));

  config.out_dir = tmp.file("run_b");
  const PipelineResult b = run_pipeline(config);
  CHECK(vocex::test::read_file(a.manifest_path) == vocex::test::read_file(b.manifest_path));
  CHECK(a.config_hash == b.config_hash);
}

TEST_CASE("non-training strategies produce six artifacts") {
  vocex::test::TempDir tmp("pipe_ofa");
  save_benchmark(generate_benchmark(tiny_benchmark_config(13)), tmp.file("bench"));
  PipelineConfig config = tiny_pipeline_config(tmp.file("bench"), tmp.file("run_ofa"));
  config.strategy = InitStrategy::Ofa;
  CHECK(run_pipeline(config).artifacts.size() == 6);
  config.strategy = InitStrategy::Random;
  config.out_dir = tmp.file("run_rand");
  CHECK(run_pipeline(config).artifacts.size() == 6);
}

TEST_CASE("compare emits one block per strategy on the shared benchmark") {
  vocex::test::TempDir tmp("pipe_cmp");
  save_benchmark(generate_benchmark(tiny_benchmark_config(17)), tmp.file("bench"));
  PipelineConfig config = tiny_pipeline_config(tmp.file("bench"), tmp.file("cmp"));
  const auto results = compare_strategies(
      config, {InitStrategy::Hyper, InitStrategy::Ofa, InitStrategy::Random});
  CHECK(results.size() == 3);
  CHECK(results.count("hyper") == 1);
  CHECK(results.count("ofa") == 1);
  CHECK(results.count("random") == 1);
  const std::string compare_csv = vocex::test::read_file(tmp.file("cmp/compare.csv"));
  CHECK(compare_csv.find("hyper,") != std::string::npos);
  CHECK(compare_csv.find("ofa,") != std::string::npos);
  CHECK(compare_csv.find("random,") != std::string::npos);
  // All three strategies share copied-token accounting.
  CHECK(results.at("hyper").metrics.at("copied") == results.at("random").metrics.at("copied"));
}

TEST_CASE("stage failure reports the stage and leaves a partial manifest") {
  vocex::test::TempDir tmp("pipe_fail");
  PipelineConfig config = tiny_pipeline_config(tmp.file("missing_bench"), tmp.file("run"));
  try {
    run_pipeline(config);
    FAIL("expected PipelineError");
  } catch (const PipelineError& e) {
    CHECK(e.stage() == "load");
  }
  CHECK(fs::exists(fs::path(tmp.file("run")) / "manifest.csv"));
}

TEST_CASE("pipeline config json round trip") {
  PipelineConfig c;
  c.benchmark_dir = "bench";
  c.out_dir = "out";
  c.strategy = InitStrategy::Ofa;
  c.rank = 17;
  c.match.strip_marker = MarkerStyle::SentencePiece;
  c.match.lowercase = true;
  c.match.max_matches = 33;
  c.training.epochs = 41;
  c.training.tau = 0.25;
  c.ofa_k = 4;
  c.ofa_temp = 0.2;
  c.retrieval_k = 5;
  c.seed = 123;
  const PipelineConfig back = pipeline_config_from_json(pipeline_config_to_json(c));
  CHECK(back.benchmark_dir == c.benchmark_dir);
  CHECK(back.strategy == InitStrategy::Ofa);
  CHECK(back.rank == 17);
  CHECK(back.match.strip_marker == MarkerStyle::SentencePiece);
  CHECK(back.match.lowercase);
  CHECK(back.match.max_matches == 33);
  CHECK(back.training.epochs == 41);
  CHECK(back.training.tau == 0.25);
  CHECK(back.ofa_k == 4);
  CHECK(back.ofa_temp == 0.2);
  CHECK(back.retrieval_k == 5);
  CHECK(back.seed == 123);
}

TEST_SUITE_END();
