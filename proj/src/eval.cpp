#include "vocex/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "vocex/rng.hpp"

namespace vocex {

namespace {

double row_cosine(const double* a, const double* b, std::size_t dim) {
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    d += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return d / std::max(std::sqrt(na) * std::sqrt(nb), 1e-12);
}

std::string random_letters(Rng& rng, std::size_t min_len, std::size_t max_len) {
  const std::size_t len = min_len + rng.next_below(max_len - min_len + 1);
  std::string s(len, 'a');
  for (char& c : s) c = static_cast<char>('a' + rng.next_below(26));
  return s;
}

Matrix orthonormal_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows > cols) throw std::invalid_argument("orthonormal_rows: rows must be <= cols");
  Matrix m(rows, cols);
  for (double& v : m.data) v = rng.next_gaussian();
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t p = 0; p < r; ++p) {
        double proj = 0.0;
        for (std::size_t c = 0; c < cols; ++c) proj += m(r, c) * m(p, c);
        for (std::size_t c = 0; c < cols; ++c) m(r, c) -= proj * m(p, c);
      }
      double norm = 0.0;
      for (std::size_t c = 0; c < cols; ++c) norm += m(r, c) * m(r, c);
      norm = std::sqrt(norm);
      for (std::size_t c = 0; c < cols; ++c) m(r, c) /= norm;
    }
  }
  return m;
}

}  // namespace

EvalResult heldout_cosine_eval(const HypernetParams& params,
                               const std::vector<TrainingExample>& heldout) {
  if (heldout.empty()) throw std::invalid_argument("heldout_cosine_eval: empty held-out set");
  EvalResult result;
  result.metric = "heldout_cosine";
  for (const auto& ex : heldout) {
    const Batch pred = hypernet_forward(params, {ex.inputs}, false, 0);
    result.per_item.push_back(cosine_similarity(pred[0], ex.target));
  }
  double sum = 0.0;
  for (double v : result.per_item) sum += v;
  result.value = sum / static_cast<double>(result.per_item.size());
  return result;
}

EvalResult topk_retrieval_accuracy(const Matrix& query_reps, const Matrix& candidate_reps,
                                   const std::vector<std::size_t>& gold, std::size_t k) {
  if (query_reps.rows != gold.size())
    throw std::invalid_argument("topk_retrieval_accuracy: gold size must match query count");
  if (query_reps.cols != candidate_reps.cols)
    throw std::invalid_argument("topk_retrieval_accuracy: representation dimensions differ");
  if (k == 0 || k > candidate_reps.rows)
    throw std::invalid_argument("topk_retrieval_accuracy: k out of range");
  std::unordered_set<std::size_t> seen;
  for (std::size_t g : gold) {
    if (g >= candidate_reps.rows)
      throw std::invalid_argument("topk_retrieval_accuracy: gold id out of range");
    if (!seen.insert(g).second)
      throw std::invalid_argument("topk_retrieval_accuracy: gold map is not a bijection");
  }

  EvalResult result;
  result.metric = "top" + std::to_string(k) + "_accuracy";
  std::size_t hits = 0;
  for (std::size_t q = 0; q < query_reps.rows; ++q) {
    const double* qv = query_reps.row_ptr(q);
    const double gold_sim = row_cosine(qv, candidate_reps.row_ptr(gold[q]), query_reps.cols);
    std::size_t rank = 1;
    for (std::size_t c = 0; c < candidate_reps.rows && rank <= k; ++c) {
      if (c == gold[q]) continue;
      const double sim = row_cosine(qv, candidate_reps.row_ptr(c), query_reps.cols);
      if (sim > gold_sim || (sim == gold_sim && c < gold[q])) ++rank;
    }
    const bool hit = rank <= k;
    hits += hit ? 1 : 0;
    result.per_item.push_back(hit ? 1.0 : 0.0);
  }
  result.value = static_cast<double>(hits) / static_cast<double>(query_reps.rows);
  return result;
}

Matrix sentence_representations(const Matrix& embeddings,
                                const std::vector<std::vector<std::size_t>>& sentences) {
  Matrix reps(sentences.size(), embeddings.cols);
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    if (sentences[s].empty())
      throw std::invalid_argument("sentence_representations: empty sentence");
    double* out = reps.row_ptr(s);
    for (std::size_t id : sentences[s]) {
      if (id >= embeddings.rows)
        throw std::invalid_argument("sentence_representations: token id out of range");
      const double* row = embeddings.row_ptr(id);
      for (std::size_t d = 0; d < embeddings.cols; ++d) out[d] += row[d];
    }
    const double inv = 1.0 / static_cast<double>(sentences[s].size());
    for (std::size_t d = 0; d < embeddings.cols; ++d) out[d] *= inv;
  }
  return reps;
}

SyntheticBenchmark generate_benchmark(const BenchmarkConfig& config) {
  if (config.n_source < 32) throw std::invalid_argument("benchmark: n_source must be >= 32");
  if (config.coord_dim < 8) throw std::invalid_argument("benchmark: coord_dim must be >= 8");
  if (config.overlap > std::min(config.n_source, config.n_target))
    throw std::invalid_argument("benchmark: overlap larger than a vocabulary");
  if (config.embed_dim < config.coord_dim)
    throw std::invalid_argument("benchmark: embed_dim must be >= coord_dim");
  if (config.min_words_per_token < 1 ||
      config.min_words_per_token > config.max_words_per_token)
    throw std::invalid_argument("benchmark: bad words_per_token range");

  SyntheticBenchmark bench;
  bench.config = config;
  Rng rng(mix_seed(config.seed, 77));

  // Unique token strings; the target shares `overlap` of the source tokens.
  std::unordered_set<std::string> used;
  auto fresh_token = [&]() {
    for (;;) {
      std::string t = random_letters(rng, 4, 7);
      if (used.insert(t).second) return t;
    }
  };
  std::vector<std::string> source_tokens(config.n_source);
  for (auto& t : source_tokens) t = fresh_token();
  std::vector<std::size_t> overlap_pick(config.n_source);
  for (std::size_t i = 0; i < config.n_source; ++i) overlap_pick[i] = i;
  rng.shuffle(overlap_pick);
  std::vector<std::string> target_tokens;
  for (std::size_t i = 0; i < config.overlap; ++i)
    target_tokens.push_back(source_tokens[overlap_pick[i]]);
  while (target_tokens.size() < config.n_target) target_tokens.push_back(fresh_token());

  // Every token gets words that contain it, so each one matches at least once.
  std::vector<std::string> all_tokens = source_tokens;
  for (const auto& t : target_tokens)
    if (std::find(source_tokens.begin(), source_tokens.end(), t) == source_tokens.end())
      all_tokens.push_back(t);

  std::vector<std::string> words;
  std::unordered_set<std::string> word_set;
  for (const auto& token : all_tokens) {
    const std::size_t m = config.min_words_per_token +
                          rng.next_below(config.max_words_per_token -
                                         config.min_words_per_token + 1);
    for (std::size_t i = 0; i < m; ++i) {
      std::string w;
      do {
        w = random_letters(rng, 0, 2) + token + random_letters(rng, 0, 2);
      } while (!word_set.insert(w).second);
      words.push_back(std::move(w));
    }
  }
  Matrix vectors(words.size(), config.word_dim);
  for (double& v : vectors.data) v = rng.next_gaussian();
  bench.store = WordVectorStore(std::move(words), std::move(vectors));

  bench.source_vocab = Vocabulary(source_tokens);
  bench.target_vocab = Vocabulary(target_tokens);
  NormalizationConfig match_config;  // raw matching
  bench.source_matches = build_match_table(bench.source_vocab, bench.store, match_config);
  bench.target_matches = build_match_table(bench.target_vocab, bench.store, match_config);

  // Ground truth: per unique token, coords = map(mean matched vector) + noise.
  Matrix map(config.coord_dim, config.word_dim);
  const double map_scale = 1.0 / std::sqrt(static_cast<double>(config.word_dim));
  for (double& v : map.data) v = rng.next_gaussian() * map_scale;

  Vocabulary all_vocab(all_tokens);
  const MatchTable all_matches = build_match_table(all_vocab, bench.store, match_config);
  Matrix coords_by_token(all_tokens.size(), config.coord_dim);
  for (std::size_t t = 0; t < all_tokens.size(); ++t) {
    const auto& entry = all_matches.entries[t];
    if (entry.empty())
      throw std::runtime_error("benchmark: generated token without matches (internal)");
    std::vector<double> rep(config.word_dim, 0.0);
    for (std::uint32_t w : entry) {
      const double* v = bench.store.vector(w);
      for (std::size_t d = 0; d < rep.size(); ++d) rep[d] += v[d];
    }
    for (double& x : rep) x /= static_cast<double>(entry.size());
    double* out = coords_by_token.row_ptr(t);
    for (std::size_t r = 0; r < config.coord_dim; ++r) {
      double y = 0.0;
      const double* mr = map.row_ptr(r);
      for (std::size_t d = 0; d < config.word_dim; ++d) y += mr[d] * rep[d];
      if (config.nonlinear) y = std::tanh(config.nonlinear_scale * y);
      out[r] = y;
    }
    Rng noise_rng(mix_seed(config.seed, 500000 + t));
    for (std::size_t r = 0; r < config.coord_dim; ++r)
      out[r] += config.noise * noise_rng.next_gaussian();
  }

  bench.f_source_true = Matrix(config.n_source, config.coord_dim);
  for (std::size_t i = 0; i < config.n_source; ++i) {
    const std::size_t at = *all_vocab.id_of(source_tokens[i]);
    std::copy(coords_by_token.row_ptr(at), coords_by_token.row_ptr(at) + config.coord_dim,
              bench.f_source_true.row_ptr(i));
  }
  bench.f_target_true = Matrix(config.n_target, config.coord_dim);
  for (std::size_t j = 0; j < config.n_target; ++j) {
    const std::size_t at = *all_vocab.id_of(target_tokens[j]);
    std::copy(coords_by_token.row_ptr(at), coords_by_token.row_ptr(at) + config.coord_dim,
              bench.f_target_true.row_ptr(j));
  }

  bench.p_true = orthonormal_rows(config.coord_dim, config.embed_dim, rng);
  bench.e_source = matmul(bench.f_source_true, bench.p_true);
  bench.e_target_true = matmul(bench.f_target_true, bench.p_true);

  // Parallel sentences: a target sentence plus its token-wise nearest source
  // tokens in ground-truth coordinate space.
  std::vector<std::size_t> nearest_source(config.n_target);
  for (std::size_t j = 0; j < config.n_target; ++j) {
    double best = -2.0;
    std::size_t arg = 0;
    for (std::size_t s = 0; s < config.n_source; ++s) {
      const double sim = row_cosine(bench.f_target_true.row_ptr(j),
                                    bench.f_source_true.row_ptr(s), config.coord_dim);
      if (sim > best) {
        best = sim;
        arg = s;
      }
    }
    nearest_source[j] = arg;
  }
  for (std::size_t p = 0; p < config.n_sentence_pairs; ++p) {
    const std::size_t len = config.min_sentence_len +
                            rng.next_below(config.max_sentence_len -
                                           config.min_sentence_len + 1);
    std::vector<std::size_t> tgt(len), src(len);
    for (std::size_t i = 0; i < len; ++i) {
      tgt[i] = rng.next_below(config.n_target);
      src[i] = nearest_source[tgt[i]];
    }
    bench.target_sentences.push_back(std::move(tgt));
    bench.source_sentences.push_back(std::move(src));
  }
  return bench;
}

void save_sentences(const std::vector<std::vector<std::size_t>>& sentences,
                    const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << "sentence_id,token_ids\n";
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    out << s << ',';
    for (std::size_t i = 0; i < sentences[s].size(); ++i) {
      if (i) out << ';';
      out << sentences[s][i];
    }
    out << '\n';
  }
  if (!out) throw IoError(path + ": write failed");
}

std::vector<std::vector<std::size_t>> load_sentences(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open for reading");
  std::vector<std::vector<std::size_t>> sentences;
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": empty sentence file");
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = csv_split_line(line);
    if (fields.size() != 2) throw IoError(path + ": malformed sentence row");
    std::vector<std::size_t> ids;
    std::stringstream ss(fields[1]);
    std::string part;
    while (std::getline(ss, part, ';'))
      if (!part.empty()) ids.push_back(std::stoull(part));
    sentences.push_back(std::move(ids));
  }
  return sentences;
}

void save_benchmark(const SyntheticBenchmark& bench, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto at = [&](const char* name) { return (fs::path(dir) / name).string(); };
  save_vocab(bench.source_vocab, at("source_vocab.txt"));
  save_vocab(bench.target_vocab, at("target_vocab.txt"));
  save_word_vectors(bench.store, at("word_vectors.vec"));
  save_matrix(bench.e_source, at("source_embeddings.vxm"));
  save_matrix(bench.e_target_true, at("target_embeddings_true.vxm"));
  save_matrix(bench.f_source_true, at("coords_true_source.vxm"));
  save_matrix(bench.f_target_true, at("coords_true_target.vxm"));
  save_sentences(bench.source_sentences, at("sentences_source.csv"));
  save_sentences(bench.target_sentences, at("sentences_target.csv"));

  nlohmann::json j;
  j["seed"] = bench.config.seed;
  j["n_source"] = bench.config.n_source;
  j["n_target"] = bench.config.n_target;
  j["overlap"] = bench.config.overlap;
  j["word_dim"] = bench.config.word_dim;
  j["coord_dim"] = bench.config.coord_dim;
  j["embed_dim"] = bench.config.embed_dim;
  j["min_words_per_token"] = bench.config.min_words_per_token;
  j["max_words_per_token"] = bench.config.max_words_per_token;
  j["noise"] = bench.config.noise;
  j["nonlinear"] = bench.config.nonlinear;
  j["nonlinear_scale"] = bench.config.nonlinear_scale;
  j["n_sentence_pairs"] = bench.config.n_sentence_pairs;
  j["min_sentence_len"] = bench.config.min_sentence_len;
  j["max_sentence_len"] = bench.config.max_sentence_len;
  std::ofstream out(at("benchmark.json"), std::ios::binary);
  if (!out) throw IoError(at("benchmark.json") + ": cannot open for writing");
  out << j.dump(2) << '\n';
}

}  // namespace vocex
