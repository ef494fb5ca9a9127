#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vocex/corpus_io.hpp"
#include "vocex/hypernet.hpp"
#include "vocex/matching.hpp"
#include "vocex/matrix.hpp"

namespace vocex {

struct EvalResult {
  std::string metric;
  double value = 0.0;
  std::vector<double> per_item;
  std::string config_echo;
};

// Mean cosine between eval-mode predictions and true coordinates.
EvalResult heldout_cosine_eval(const HypernetParams& params,
                               const std::vector<TrainingExample>& heldout);

// Fraction of queries whose gold candidate is among the k nearest candidates
// by cosine. Ties resolve by candidate index, gold included.
EvalResult topk_retrieval_accuracy(const Matrix& query_reps, const Matrix& candidate_reps,
                                   const std::vector<std::size_t>& gold, std::size_t k);

// Static-mean sentence representation: mean of the tokens' embedding rows.
Matrix sentence_representations(const Matrix& embeddings,
                                const std::vector<std::vector<std::size_t>>& sentences);

struct BenchmarkConfig {
  std::size_t n_source = 576;
  std::size_t n_target = 160;
  std::size_t overlap = 32;
  std::size_t word_dim = 24;
  std::size_t coord_dim = 32;
  std::size_t embed_dim = 48;
  std::size_t min_words_per_token = 1;
  std::size_t max_words_per_token = 4;
  double noise = 0.05;
  bool nonlinear = false;        // coords = tanh(scale * linear) instead of linear
  double nonlinear_scale = 1.5;
  std::size_t n_sentence_pairs = 64;
  std::size_t min_sentence_len = 3;
  std::size_t max_sentence_len = 8;
  std::uint64_t seed = 0;
};

// Self-contained desk-scale benchmark. Ground-truth coordinates are a fixed
// seeded map of each token's mean matched word vector plus Gaussian noise, so
// the hypernetwork's target function is learnable by construction.
struct SyntheticBenchmark {
  BenchmarkConfig config;
  Vocabulary source_vocab;
  Vocabulary target_vocab;
  WordVectorStore store;
  MatchTable source_matches;
  MatchTable target_matches;
  Matrix f_source_true;   // n_source × coord_dim
  Matrix f_target_true;   // n_target × coord_dim
  Matrix p_true;          // coord_dim × embed_dim, orthonormal rows
  Matrix e_source;        // f_source_true · p_true
  Matrix e_target_true;   // f_target_true · p_true
  std::vector<std::vector<std::size_t>> source_sentences;
  std::vector<std::vector<std::size_t>> target_sentences;
};

SyntheticBenchmark generate_benchmark(const BenchmarkConfig& config);

void save_benchmark(const SyntheticBenchmark& benchmark, const std::string& dir);

void save_sentences(const std::vector<std::vector<std::size_t>>& sentences,
                    const std::string& path);
std::vector<std::vector<std::size_t>> load_sentences(const std::string& path);

}  // namespace vocex
