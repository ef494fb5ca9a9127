#include "vocex/initializer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "vocex/rng.hpp"

namespace vocex {

namespace {

std::vector<double> mean_matched_vector(const std::vector<std::uint32_t>& word_ids,
                                        const WordVectorStore& store) {
  std::vector<double> rep(store.dim(), 0.0);
  for (std::uint32_t w : word_ids) {
    const double* v = store.vector(w);
    for (std::size_t d = 0; d < rep.size(); ++d) rep[d] += v[d];
  }
  const double inv = 1.0 / static_cast<double>(word_ids.size());
  for (double& x : rep) x *= inv;
  return rep;
}

}  // namespace

const char* init_strategy_name(InitStrategy s) {
  switch (s) {
    case InitStrategy::Hyper: return "hyper";
    case InitStrategy::Ofa: return "ofa";
    case InitStrategy::Random: return "random";
  }
  return "?";
}

InitStrategy init_strategy_from_name(const std::string& name) {
  if (name == "hyper") return InitStrategy::Hyper;
  if (name == "ofa") return InitStrategy::Ofa;
  if (name == "random") return InitStrategy::Random;
  throw std::invalid_argument("unknown init strategy \"" + name + "\" (expected hyper|ofa|random)");
}

InitPlan plan_init(const Vocabulary& source_vocab, const Vocabulary& target_vocab,
                   const MatchTable& target_matches, InitStrategy strategy,
                   bool marker_normalized_overlap, const NormalizationConfig& normalization) {
  if (target_matches.size() != target_vocab.size())
    throw std::invalid_argument("plan_init: match table does not cover the target vocabulary");

  InitPlan plan;
  plan.strategy = strategy;
  plan.target_size = target_vocab.size();

  std::unordered_map<std::string, std::size_t> source_index;
  if (marker_normalized_overlap) {
    for (std::size_t s = 0; s < source_vocab.size(); ++s)
      source_index.emplace(normalize_token(source_vocab.token(s), normalization), s);
  }

  for (std::size_t j = 0; j < target_vocab.size(); ++j) {
    std::optional<std::size_t> src;
    if (marker_normalized_overlap) {
      auto it = source_index.find(normalize_token(target_vocab.token(j), normalization));
      if (it != source_index.end()) src = it->second;
    } else {
      src = source_vocab.id_of(target_vocab.token(j));
    }
    if (src) {
      plan.overlap.emplace_back(j, *src);
    } else if (strategy != InitStrategy::Random && !target_matches.entries[j].empty()) {
      plan.predicted.push_back(j);
    } else {
      plan.random_set.push_back(j);
    }
  }
  return plan;
}

InitRows copy_overlap(const InitPlan& plan, const Matrix& f_source) {
  InitRows out;
  out.rows = Matrix(plan.overlap.size(), f_source.cols);
  for (std::size_t i = 0; i < plan.overlap.size(); ++i) {
    const auto [tgt, src] = plan.overlap[i];
    if (src >= f_source.rows)
      throw std::invalid_argument("copy_overlap: source id out of range");
    out.token_ids.push_back(tgt);
    std::copy(f_source.row_ptr(src), f_source.row_ptr(src) + f_source.cols, out.rows.row_ptr(i));
  }
  return out;
}

InitRows ofa_init(const InitPlan& plan, const Matrix& f_source, const MatchTable& source_matches,
                  const MatchTable& target_matches, const WordVectorStore& store, std::size_t k,
                  double temperature) {
  if (k == 0) throw std::invalid_argument("ofa_init: k must be positive");
  if (!(temperature > 0.0)) throw std::invalid_argument("ofa_init: temperature must be positive");
  if (source_matches.size() != f_source.rows)
    throw std::invalid_argument("ofa_init: source match table does not cover F^s");

  // Only source tokens with at least one matched word can serve as neighbors.
  std::vector<std::size_t> eligible;
  std::vector<std::vector<double>> source_reps;
  for (std::size_t s = 0; s < source_matches.size(); ++s) {
    if (source_matches.entries[s].empty()) continue;
    eligible.push_back(s);
    source_reps.push_back(mean_matched_vector(source_matches.entries[s], store));
  }
  if (eligible.empty())
    throw std::invalid_argument("ofa_init: no source token has a non-empty match set");

  InitRows out;
  out.rows = Matrix(plan.predicted.size(), f_source.cols);
  const std::size_t k_eff = std::min(k, eligible.size());
  std::vector<std::size_t> order(eligible.size());
  for (std::size_t row = 0; row < plan.predicted.size(); ++row) {
    const std::size_t j = plan.predicted[row];
    const auto& entry = target_matches.entries.at(j);
    if (entry.empty())
      throw std::invalid_argument("ofa_init: target token " + std::to_string(j) +
                                  " has an empty match set");
    const std::vector<double> rep = mean_matched_vector(entry, store);
    std::vector<double> sims(eligible.size());
    for (std::size_t e = 0; e < eligible.size(); ++e)
      sims[e] = cosine_similarity(rep, source_reps[e]);

    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k_eff),
                      order.end(), [&](std::size_t a, std::size_t b) {
                        if (sims[a] != sims[b]) return sims[a] > sims[b];
                        return eligible[a] < eligible[b];
                      });

    double max_logit = -1e300;
    for (std::size_t i = 0; i < k_eff; ++i)
      max_logit = std::max(max_logit, sims[order[i]] / temperature);
    double z = 0.0;
    std::vector<double> weights(k_eff);
    for (std::size_t i = 0; i < k_eff; ++i) {
      weights[i] = std::exp(sims[order[i]] / temperature - max_logit);
      z += weights[i];
    }
    double* target_row = out.rows.row_ptr(row);
    for (std::size_t i = 0; i < k_eff; ++i) {
      const double w = weights[i] / z;
      const double* src_row = f_source.row_ptr(eligible[order[i]]);
      for (std::size_t d = 0; d < f_source.cols; ++d) target_row[d] += w * src_row[d];
    }
    out.token_ids.push_back(j);
  }
  return out;
}

InitRows hyper_init(const InitPlan& plan, const HypernetParams& params,
                    const MatchTable& target_matches, const WordVectorStore& store,
                    std::size_t max_context) {
  InitRows out;
  out.token_ids = plan.predicted;
  out.rows = predict_coordinates(params, target_matches, store, plan.predicted, max_context);
  return out;
}

InitRows random_init(InitPlan& plan, const Matrix& f_source, std::uint64_t seed) {
  if (f_source.rows == 0) throw std::invalid_argument("random_init: empty source coordinates");
  const std::size_t dim = f_source.cols;
  plan.gaussian.mean.assign(dim, 0.0);
  plan.gaussian.variance.assign(dim, 0.0);
  for (std::size_t d = 0; d < dim; ++d) {
    // A bitwise-constant column stays exactly constant in the samples.
    bool constant = true;
    for (std::size_t i = 1; i < f_source.rows && constant; ++i)
      constant = (f_source(i, d) == f_source(0, d));
    if (constant) {
      plan.gaussian.mean[d] = f_source(0, d);
      plan.gaussian.variance[d] = 0.0;
      continue;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < f_source.rows; ++i) sum += f_source(i, d);
    const double mean = sum / static_cast<double>(f_source.rows);
    double ss = 0.0;
    for (std::size_t i = 0; i < f_source.rows; ++i) {
      const double diff = f_source(i, d) - mean;
      ss += diff * diff;
    }
    plan.gaussian.mean[d] = mean;
    plan.gaussian.variance[d] =
        f_source.rows > 1 ? ss / static_cast<double>(f_source.rows - 1) : 0.0;
  }

  InitRows out;
  out.token_ids = plan.random_set;
  out.rows = Matrix(plan.random_set.size(), dim);
  Rng rng(mix_seed(seed, 9001));
  for (std::size_t i = 0; i < plan.random_set.size(); ++i) {
    double* row = out.rows.row_ptr(i);
    for (std::size_t d = 0; d < dim; ++d)
      row[d] = plan.gaussian.mean[d] + std::sqrt(plan.gaussian.variance[d]) * rng.next_gaussian();
  }
  return out;
}

InitResult assemble(const InitPlan& plan, const InitRows& copied, const InitRows& predicted,
                    const InitRows& random_rows, const Matrix* primitive, bool emit_full) {
  std::size_t dim = 0;
  for (const InitRows* part : {&copied, &predicted, &random_rows})
    if (part->rows.rows > 0) dim = part->rows.cols;
  if (dim == 0) throw std::invalid_argument("assemble: all step outputs are empty");

  InitResult result;
  result.f_target = Matrix(plan.target_size, dim);
  result.report.total = plan.target_size;
  result.report.tags.assign(plan.target_size, Provenance::Random);
  std::vector<std::uint8_t> written(plan.target_size, 0);

  auto place = [&](const InitRows& part, Provenance tag) {
    if (part.token_ids.size() != part.rows.rows)
      throw std::invalid_argument("assemble: step output ids and rows disagree");
    for (std::size_t i = 0; i < part.token_ids.size(); ++i) {
      const std::size_t id = part.token_ids[i];
      if (id >= plan.target_size)
        throw std::runtime_error("assemble: token id " + std::to_string(id) + " out of range");
      if (written[id])
        throw std::runtime_error("assemble: token id " + std::to_string(id) + " written twice");
      written[id] = 1;
      std::copy(part.rows.row_ptr(i), part.rows.row_ptr(i) + dim, result.f_target.row_ptr(id));
      result.report.tags[id] = tag;
    }
  };
  place(copied, Provenance::Copied);
  place(predicted, Provenance::Predicted);
  place(random_rows, Provenance::Random);

  for (std::size_t id = 0; id < plan.target_size; ++id)
    if (!written[id])
      throw std::runtime_error("assemble: token id " + std::to_string(id) + " left uncovered");

  result.report.copied = copied.token_ids.size();
  result.report.predicted = predicted.token_ids.size();
  result.report.random = random_rows.token_ids.size();
  result.report.validate();

  if (emit_full) {
    if (primitive == nullptr) throw std::invalid_argument("assemble: emit_full needs a primitive");
    result.e_target = matmul(result.f_target, *primitive);
  }
  return result;
}

}  // namespace vocex
