#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vocex/corpus_io.hpp"
#include "vocex/hypernet.hpp"
#include "vocex/matching.hpp"
#include "vocex/matrix.hpp"

namespace vocex {

enum class InitStrategy : std::uint8_t { Hyper, Ofa, Random };

const char* init_strategy_name(InitStrategy s);
InitStrategy init_strategy_from_name(const std::string& name);

struct GaussianParams {
  std::vector<double> mean;      // per coordinate dimension
  std::vector<double> variance;  // per coordinate dimension
};

// Partition of the target vocabulary into the three initialization steps.
struct InitPlan {
  InitStrategy strategy = InitStrategy::Hyper;
  std::vector<std::pair<std::size_t, std::size_t>> overlap;  // target id -> source id
  std::vector<std::size_t> predicted;                        // target ids
  std::vector<std::size_t> random_set;                       // target ids
  std::size_t target_size = 0;
  GaussianParams gaussian;  // filled by random_init
};

// Rows produced by one initialization step, keyed by target token id.
struct InitRows {
  std::vector<std::size_t> token_ids;
  Matrix rows;
};

struct InitResult {
  Matrix f_target;
  InitReport report;
  std::optional<Matrix> e_target;
};

// Overlap tokens are matched on raw strings by default; with
// marker_normalized_overlap both sides are compared after normalize_token.
// If several source tokens normalize to the same string the smallest id wins.
InitPlan plan_init(const Vocabulary& source_vocab, const Vocabulary& target_vocab,
                   const MatchTable& target_matches, InitStrategy strategy,
                   bool marker_normalized_overlap = false,
                   const NormalizationConfig& normalization = {});

// Step 1: bit-exact copy of overlapping rows.
InitRows copy_overlap(const InitPlan& plan, const Matrix& f_source);

// OFA-style baseline: each predicted row is a softmax(cos/temp)-weighted
// convex combination of the coordinate rows of the k most similar source
// tokens, where token similarity is the cosine of mean matched word vectors.
InitRows ofa_init(const InitPlan& plan, const Matrix& f_source, const MatchTable& source_matches,
                  const MatchTable& target_matches, const WordVectorStore& store, std::size_t k,
                  double temperature);

// Step 2 for the hypernetwork strategy: delegate to predict_coordinates.
InitRows hyper_init(const InitPlan& plan, const HypernetParams& params,
                    const MatchTable& target_matches, const WordVectorStore& store,
                    std::size_t max_context);

// Step 3: i.i.d. per-dimension Gaussian rows from the column statistics of
// F^s. Fills plan.gaussian.
InitRows random_init(InitPlan& plan, const Matrix& f_source, std::uint64_t seed);

// Writes every target row exactly once and produces the accounting report.
// primitive may be null when emit_full is false.
InitResult assemble(const InitPlan& plan, const InitRows& copied, const InitRows& predicted,
                    const InitRows& random_rows, const Matrix* primitive, bool emit_full);

}  // namespace vocex
