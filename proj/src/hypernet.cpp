#include "vocex/hypernet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "vocex/rng.hpp"

namespace vocex {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

using Seq = std::vector<std::vector<double>>;  // T × dim

// y += W·x
void gemv_acc(const Matrix& w, const double* x, double* y) {
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double* wr = w.row_ptr(r);
    double s = 0.0;
    for (std::size_t c = 0; c < w.cols; ++c) s += wr[c] * x[c];
    y[r] += s;
  }
}

// y += Wᵀ·x
void gemv_t_acc(const Matrix& w, const double* x, double* y) {
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    const double* wr = w.row_ptr(r);
    for (std::size_t c = 0; c < w.cols; ++c) y[c] += xr * wr[c];
  }
}

// G += y·xᵀ
void outer_acc(Matrix& g, const double* y, const double* x) {
  for (std::size_t r = 0; r < g.rows; ++r) {
    const double yr = y[r];
    if (yr == 0.0) continue;
    double* gr = g.row_ptr(r);
    for (std::size_t c = 0; c < g.cols; ++c) gr[c] += yr * x[c];
  }
}

struct DirectionCache {
  Seq i, f, g, o;  // gate activations by position
  Seq c, h;        // cell and hidden state by position
};

struct LayerCache {
  Seq input;    // what the layer actually consumed (post-dropout)
  Seq output;   // T × 2H, pre-dropout
  Seq mask;     // dropout mask applied to output; empty when none
  DirectionCache fwd, bwd;
};

struct ExampleCache {
  Seq raw;        // original word vectors
  Seq proj;       // projected inputs, pre-dropout
  Seq proj_mask;  // empty when no dropout
  std::vector<LayerCache> layers;
  std::vector<double> rep;  // 2H readout
  std::vector<double> prediction;
};

std::vector<std::size_t> position_order(std::size_t t_len, bool reverse) {
  std::vector<std::size_t> order(t_len);
  std::iota(order.begin(), order.end(), 0);
  if (reverse) std::reverse(order.begin(), order.end());
  return order;
}

void lstm_direction_forward(const LstmDirectionParams& p, const Seq& x, bool reverse,
                            std::size_t hidden, DirectionCache& cache) {
  const std::size_t t_len = x.size();
  cache.i.assign(t_len, std::vector<double>(hidden));
  cache.f.assign(t_len, std::vector<double>(hidden));
  cache.g.assign(t_len, std::vector<double>(hidden));
  cache.o.assign(t_len, std::vector<double>(hidden));
  cache.c.assign(t_len, std::vector<double>(hidden));
  cache.h.assign(t_len, std::vector<double>(hidden));

  const auto order = position_order(t_len, reverse);
  std::vector<double> prev_h(hidden, 0.0), prev_c(hidden, 0.0);
  std::vector<double> acts(4 * hidden);
  for (std::size_t step = 0; step < t_len; ++step) {
    const std::size_t t = order[step];
    std::copy(p.bias.begin(), p.bias.end(), acts.begin());
    gemv_acc(p.w_ih, x[t].data(), acts.data());
    gemv_acc(p.w_hh, prev_h.data(), acts.data());
    for (std::size_t j = 0; j < hidden; ++j) {
      const double iv = sigmoid(acts[j]);
      const double fv = sigmoid(acts[hidden + j]);
      const double gv = std::tanh(acts[2 * hidden + j]);
      const double ov = sigmoid(acts[3 * hidden + j]);
      const double cv = fv * prev_c[j] + iv * gv;
      cache.i[t][j] = iv;
      cache.f[t][j] = fv;
      cache.g[t][j] = gv;
      cache.o[t][j] = ov;
      cache.c[t][j] = cv;
      cache.h[t][j] = ov * std::tanh(cv);
    }
    prev_h = cache.h[t];
    prev_c = cache.c[t];
  }
}

// dh_by_pos holds the gradient flowing into each position's hidden output.
// Accumulates parameter gradients and the gradient w.r.t. the layer input.
void lstm_direction_backward(const LstmDirectionParams& p, const DirectionCache& cache,
                             const Seq& x, bool reverse, std::size_t hidden, const Seq& dh_by_pos,
                             LstmDirectionParams& grad, Seq& dx) {
  const std::size_t t_len = x.size();
  const auto order = position_order(t_len, reverse);
  std::vector<double> dh_carry(hidden, 0.0), dc_carry(hidden, 0.0);
  std::vector<double> da(4 * hidden);
  const std::vector<double> zero(hidden, 0.0);
  for (std::size_t step = t_len; step-- > 0;) {
    const std::size_t t = order[step];
    const std::vector<double>& prev_h = (step > 0) ? cache.h[order[step - 1]] : zero;
    const std::vector<double>& prev_c = (step > 0) ? cache.c[order[step - 1]] : zero;
    for (std::size_t j = 0; j < hidden; ++j) {
      const double dh = dh_by_pos[t][j] + dh_carry[j];
      const double tc = std::tanh(cache.c[t][j]);
      const double dc = dc_carry[j] + dh * cache.o[t][j] * (1.0 - tc * tc);
      const double iv = cache.i[t][j], fv = cache.f[t][j];
      const double gv = cache.g[t][j], ov = cache.o[t][j];
      da[j] = dc * gv * iv * (1.0 - iv);                       // input gate
      da[hidden + j] = dc * prev_c[j] * fv * (1.0 - fv);       // forget gate
      da[2 * hidden + j] = dc * iv * (1.0 - gv * gv);          // cell candidate
      da[3 * hidden + j] = dh * tc * ov * (1.0 - ov);          // output gate
      dc_carry[j] = dc * fv;
    }
    outer_acc(grad.w_ih, da.data(), x[t].data());
    outer_acc(grad.w_hh, da.data(), prev_h.data());
    for (std::size_t j = 0; j < 4 * hidden; ++j) grad.bias[j] += da[j];
    gemv_t_acc(p.w_ih, da.data(), dx[t].data());
    std::fill(dh_carry.begin(), dh_carry.end(), 0.0);
    gemv_t_acc(p.w_hh, da.data(), dh_carry.data());
  }
}

Seq make_dropout_mask(std::size_t t_len, std::size_t dim, double rate, std::uint64_t seed) {
  Seq mask(t_len, std::vector<double>(dim));
  Rng rng(seed);
  const double scale = 1.0 / (1.0 - rate);
  for (auto& row : mask)
    for (double& v : row) v = (rng.next_double() >= rate) ? scale : 0.0;
  return mask;
}

void apply_mask(Seq& seq, const Seq& mask) {
  for (std::size_t t = 0; t < seq.size(); ++t)
    for (std::size_t j = 0; j < seq[t].size(); ++j) seq[t][j] *= mask[t][j];
}

// Full forward pass for one example; the cache carries everything the
// reverse pass needs.
void forward_example(const HypernetParams& params, const std::vector<std::vector<double>>& inputs,
                     bool train_mode, std::uint64_t example_seed, ExampleCache& cache) {
  if (inputs.empty())
    throw std::invalid_argument("hypernet forward: empty input list (unmatched tokens must be "
                                "routed to random initialization)");
  const std::size_t t_len = inputs.size();
  const std::size_t hidden = params.hidden_dim;
  const bool use_dropout = train_mode && params.dropout > 0.0;

  cache.raw = inputs;
  cache.proj.assign(t_len, std::vector<double>(hidden));
  for (std::size_t t = 0; t < t_len; ++t) {
    if (inputs[t].size() != params.input_dim)
      throw std::invalid_argument("hypernet forward: word vector dimension mismatch");
    std::copy(params.b_in.begin(), params.b_in.end(), cache.proj[t].begin());
    gemv_acc(params.w_in, inputs[t].data(), cache.proj[t].data());
  }

  Seq layer_input = cache.proj;
  if (use_dropout) {
    cache.proj_mask = make_dropout_mask(t_len, hidden, params.dropout, mix_seed(example_seed, 0));
    apply_mask(layer_input, cache.proj_mask);
  }

  cache.layers.resize(params.num_layers);
  for (std::size_t l = 0; l < params.num_layers; ++l) {
    LayerCache& lc = cache.layers[l];
    lc.input = std::move(layer_input);
    lstm_direction_forward(params.fwd[l], lc.input, false, hidden, lc.fwd);
    lstm_direction_forward(params.bwd[l], lc.input, true, hidden, lc.bwd);
    lc.output.assign(t_len, std::vector<double>(2 * hidden));
    for (std::size_t t = 0; t < t_len; ++t) {
      std::copy(lc.fwd.h[t].begin(), lc.fwd.h[t].end(), lc.output[t].begin());
      std::copy(lc.bwd.h[t].begin(), lc.bwd.h[t].end(), lc.output[t].begin() + hidden);
    }
    layer_input = lc.output;
    if (use_dropout && l + 1 < params.num_layers) {
      lc.mask = make_dropout_mask(t_len, 2 * hidden, params.dropout, mix_seed(example_seed, l + 1));
      apply_mask(layer_input, lc.mask);
    }
  }

  const LayerCache& top = cache.layers.back();
  cache.rep.resize(2 * hidden);
  std::copy(top.fwd.h[t_len - 1].begin(), top.fwd.h[t_len - 1].end(), cache.rep.begin());
  std::copy(top.bwd.h[0].begin(), top.bwd.h[0].end(), cache.rep.begin() + hidden);

  cache.prediction.assign(params.b_out.begin(), params.b_out.end());
  gemv_acc(params.w_out, cache.rep.data(), cache.prediction.data());
}

void backward_example(const HypernetParams& params, const ExampleCache& cache,
                      const std::vector<double>& d_prediction, HypernetParams& grad) {
  const std::size_t hidden = params.hidden_dim;
  const std::size_t t_len = cache.raw.size();

  outer_acc(grad.w_out, d_prediction.data(), cache.rep.data());
  for (std::size_t j = 0; j < params.output_dim; ++j) grad.b_out[j] += d_prediction[j];
  std::vector<double> d_rep(2 * hidden, 0.0);
  gemv_t_acc(params.w_out, d_prediction.data(), d_rep.data());

  Seq d_out(t_len, std::vector<double>(2 * hidden, 0.0));
  for (std::size_t j = 0; j < hidden; ++j) {
    d_out[t_len - 1][j] += d_rep[j];
    d_out[0][hidden + j] += d_rep[hidden + j];
  }

  for (std::size_t l = params.num_layers; l-- > 0;) {
    const LayerCache& lc = cache.layers[l];
    Seq dh_fwd(t_len, std::vector<double>(hidden)), dh_bwd(t_len, std::vector<double>(hidden));
    for (std::size_t t = 0; t < t_len; ++t)
      for (std::size_t j = 0; j < hidden; ++j) {
        dh_fwd[t][j] = d_out[t][j];
        dh_bwd[t][j] = d_out[t][hidden + j];
      }
    Seq dx(t_len, std::vector<double>(lc.input[0].size(), 0.0));
    lstm_direction_backward(params.fwd[l], lc.fwd, lc.input, false, hidden, dh_fwd, grad.fwd[l], dx);
    lstm_direction_backward(params.bwd[l], lc.bwd, lc.input, true, hidden, dh_bwd, grad.bwd[l], dx);
    if (l > 0) {
      if (!cache.layers[l - 1].mask.empty()) apply_mask(dx, cache.layers[l - 1].mask);
      d_out = std::move(dx);
    } else {
      if (!cache.proj_mask.empty()) apply_mask(dx, cache.proj_mask);
      for (std::size_t t = 0; t < t_len; ++t) {
        outer_acc(grad.w_in, dx[t].data(), cache.raw[t].data());
        for (std::size_t j = 0; j < hidden; ++j) grad.b_in[j] += dx[t][j];
      }
    }
  }
}

void check_loss_shapes(const Batch& targets, const Batch& predictions) {
  if (targets.size() != predictions.size())
    throw std::invalid_argument("loss: batch sizes differ");
  if (targets.empty()) throw std::invalid_argument("loss: empty batch");
  for (std::size_t i = 0; i < targets.size(); ++i)
    if (targets[i].size() != predictions[i].size() || targets[i].size() != targets[0].size())
      throw std::invalid_argument("loss: vector dimensions differ");
}

constexpr double kNormEps = 1e-12;

double guarded_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  return dot(a, b) / std::max(norm2(a) * norm2(b), kNormEps);
}

}  // namespace

double contrastive_loss(const Batch& targets, const Batch& predictions, double tau) {
  check_loss_shapes(targets, predictions);
  const std::size_t b = targets.size();
  if (b < 2) throw std::invalid_argument("contrastive_loss: batch size must be >= 2");
  if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: tau must be positive");
  double total = 0.0;
  std::vector<double> logits(b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t k = 0; k < b; ++k)
      logits[k] = guarded_cosine(targets[k], predictions[i]) / tau;
    const double m = *std::max_element(logits.begin(), logits.end());
    double lse = 0.0;
    for (double v : logits) lse += std::exp(v - m);
    total += m + std::log(lse) - logits[i];
  }
  return total / static_cast<double>(b);
}

double l1_loss(const Batch& targets, const Batch& predictions) {
  check_loss_shapes(targets, predictions);
  const std::size_t b = targets.size();
  const std::size_t dim = targets[0].size();
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t d = 0; d < dim; ++d) total += std::abs(targets[i][d] - predictions[i][d]);
  return total / (static_cast<double>(b) * static_cast<double>(dim));
}

double combined_loss(const Batch& targets, const Batch& predictions, double lambda, double tau) {
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("combined_loss: lambda must be in [0, 1]");
  double loss = 0.0;
  if (lambda > 0.0) loss += lambda * contrastive_loss(targets, predictions, tau);
  if (lambda < 1.0) loss += (1.0 - lambda) * l1_loss(targets, predictions);
  return loss;
}

Batch combined_loss_gradient(const Batch& targets, const Batch& predictions, double lambda,
                             double tau, double* loss_out) {
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("combined_loss_gradient: lambda must be in [0, 1]");
  check_loss_shapes(targets, predictions);
  const std::size_t b = targets.size();
  const std::size_t dim = targets[0].size();
  Batch grad(b, std::vector<double>(dim, 0.0));
  double loss = 0.0;

  if (lambda < 1.0) {
    const double l1 = l1_loss(targets, predictions);
    loss += (1.0 - lambda) * l1;
    const double scale = (1.0 - lambda) / (static_cast<double>(b) * static_cast<double>(dim));
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t d = 0; d < dim; ++d) {
        const double diff = predictions[i][d] - targets[i][d];
        grad[i][d] += diff > 0.0 ? scale : (diff < 0.0 ? -scale : 0.0);
      }
  }

  if (lambda > 0.0) {
    if (b < 2) throw std::invalid_argument("contrastive_loss: batch size must be >= 2");
    if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: tau must be positive");
    std::vector<double> target_norms(b), pred_norms(b);
    for (std::size_t i = 0; i < b; ++i) {
      target_norms[i] = norm2(targets[i]);
      pred_norms[i] = norm2(predictions[i]);
    }
    double closs = 0.0;
    std::vector<double> sims(b), probs(b);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t k = 0; k < b; ++k)
        sims[k] = dot(targets[k], predictions[i]) /
                  std::max(target_norms[k] * pred_norms[i], kNormEps);
      double m = -1e300;
      for (std::size_t k = 0; k < b; ++k) m = std::max(m, sims[k] / tau);
      double lse = 0.0;
      for (std::size_t k = 0; k < b; ++k) lse += std::exp(sims[k] / tau - m);
      closs += m + std::log(lse) - sims[i] / tau;
      const double inv_pred_sq =
          pred_norms[i] > 0.0 ? 1.0 / (pred_norms[i] * pred_norms[i]) : 0.0;
      for (std::size_t k = 0; k < b; ++k) {
        probs[k] = std::exp(sims[k] / tau - m) / lse;
        const double coef = lambda * (probs[k] - (k == i ? 1.0 : 0.0)) /
                            (static_cast<double>(b) * tau);
        if (coef == 0.0) continue;
        const double denom = std::max(target_norms[k] * pred_norms[i], kNormEps);
        for (std::size_t d = 0; d < dim; ++d)
          grad[i][d] += coef * (targets[k][d] / denom -
                                sims[k] * predictions[i][d] * inv_pred_sq);
      }
    }
    loss += lambda * closs / static_cast<double>(b);
  }

  if (loss_out) *loss_out = loss;
  return grad;
}

HypernetParams HypernetParams::create(std::size_t input_dim, std::size_t hidden_dim,
                                      std::size_t num_layers, std::size_t output_dim,
                                      double dropout, std::uint64_t seed) {
  if (input_dim == 0 || hidden_dim == 0 || num_layers == 0 || output_dim == 0)
    throw std::invalid_argument("hypernet: all dimensions must be positive");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("hypernet: dropout must be in [0, 1)");
  HypernetParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.num_layers = num_layers;
  p.output_dim = output_dim;
  p.dropout = dropout;

  Rng rng(seed);
  auto uniform_fill = [&](std::vector<double>& v, double bound) {
    for (double& x : v) x = bound * (2.0 * rng.next_double() - 1.0);
  };

  p.w_in = Matrix(hidden_dim, input_dim);
  uniform_fill(p.w_in.data, 1.0 / std::sqrt(static_cast<double>(input_dim)));
  p.b_in.assign(hidden_dim, 0.0);

  const double lstm_bound = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  p.fwd.resize(num_layers);
  p.bwd.resize(num_layers);
  for (std::size_t l = 0; l < num_layers; ++l) {
    const std::size_t in_dim = (l == 0) ? hidden_dim : 2 * hidden_dim;
    for (LstmDirectionParams* dir : {&p.fwd[l], &p.bwd[l]}) {
      dir->w_ih = Matrix(4 * hidden_dim, in_dim);
      dir->w_hh = Matrix(4 * hidden_dim, hidden_dim);
      dir->bias.assign(4 * hidden_dim, 0.0);
      uniform_fill(dir->w_ih.data, lstm_bound);
      uniform_fill(dir->w_hh.data, lstm_bound);
      uniform_fill(dir->bias, lstm_bound);
    }
  }

  p.w_out = Matrix(output_dim, 2 * hidden_dim);
  uniform_fill(p.w_out.data, 1.0 / std::sqrt(static_cast<double>(2 * hidden_dim)));
  p.b_out.assign(output_dim, 0.0);
  return p;
}

HypernetParams HypernetParams::zeros_like(const HypernetParams& other) {
  HypernetParams p = other;
  for (auto* t : p.tensor_views()) std::fill(t->begin(), t->end(), 0.0);
  return p;
}

std::size_t hypernet_parameter_count(std::size_t input_dim, std::size_t hidden_dim,
                                     std::size_t num_layers, std::size_t output_dim) {
  std::size_t count = hidden_dim * input_dim + hidden_dim;  // projection
  for (std::size_t l = 0; l < num_layers; ++l) {
    const std::size_t in_dim = (l == 0) ? hidden_dim : 2 * hidden_dim;
    count += 2 * (4 * hidden_dim * in_dim + 4 * hidden_dim * hidden_dim + 4 * hidden_dim);
  }
  count += output_dim * 2 * hidden_dim + output_dim;  // head
  return count;
}

std::size_t HypernetParams::parameter_count() const {
  return hypernet_parameter_count(input_dim, hidden_dim, num_layers, output_dim);
}

bool HypernetParams::all_finite() const {
  for (const auto* t : tensor_views())
    for (double v : *t)
      if (!std::isfinite(v)) return false;
  return true;
}

std::vector<std::vector<double>*> HypernetParams::tensor_views() {
  std::vector<std::vector<double>*> views;
  views.push_back(&w_in.data);
  views.push_back(&b_in);
  for (std::size_t l = 0; l < num_layers; ++l) {
    views.push_back(&fwd[l].w_ih.data);
    views.push_back(&fwd[l].w_hh.data);
    views.push_back(&fwd[l].bias);
    views.push_back(&bwd[l].w_ih.data);
    views.push_back(&bwd[l].w_hh.data);
    views.push_back(&bwd[l].bias);
  }
  views.push_back(&w_out.data);
  views.push_back(&b_out);
  return views;
}

std::vector<const std::vector<double>*> HypernetParams::tensor_views() const {
  auto mutable_views = const_cast<HypernetParams*>(this)->tensor_views();
  return std::vector<const std::vector<double>*>(mutable_views.begin(), mutable_views.end());
}

Batch hypernet_forward(const HypernetParams& params,
                       const std::vector<std::vector<std::vector<double>>>& batch_inputs,
                       bool train_mode, std::uint64_t dropout_seed) {
  Batch out;
  out.reserve(batch_inputs.size());
  ExampleCache cache;
  for (std::size_t i = 0; i < batch_inputs.size(); ++i) {
    forward_example(params, batch_inputs[i], train_mode, mix_seed(dropout_seed, i), cache);
    out.push_back(cache.prediction);
  }
  return out;
}

LossAndGradients hypernet_backward(const HypernetParams& params,
                                   const std::vector<TrainingExample>& batch, double lambda,
                                   double tau, bool train_mode, std::uint64_t dropout_seed) {
  if (batch.empty()) throw std::invalid_argument("hypernet_backward: empty batch");
  std::vector<ExampleCache> caches(batch.size());
  Batch predictions(batch.size()), targets(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    forward_example(params, batch[i].inputs, train_mode, mix_seed(dropout_seed, i), caches[i]);
    predictions[i] = caches[i].prediction;
    targets[i] = batch[i].target;
  }

  LossAndGradients result;
  Batch d_pred = combined_loss_gradient(targets, predictions, lambda, tau, &result.loss);
  result.predictions = std::move(predictions);
  result.gradients = HypernetParams::zeros_like(params);
  for (std::size_t i = 0; i < batch.size(); ++i)
    backward_example(params, caches[i], d_pred[i], result.gradients);

  if (!std::isfinite(result.loss))
    throw NonFiniteError("hypernet_backward: non-finite loss");
  if (!result.gradients.all_finite())
    throw NonFiniteError("hypernet_backward: non-finite gradient");
  return result;
}

std::vector<TrainingExample> augment_examples(const std::vector<TrainingExample>& examples,
                                              std::uint64_t epoch_seed, bool shuffle,
                                              bool subset) {
  std::vector<TrainingExample> out = examples;
  for (std::size_t i = 0; i < out.size(); ++i) {
    Rng rng(mix_seed(epoch_seed, i));
    auto& inputs = out[i].inputs;
    if (shuffle) rng.shuffle(inputs);
    if (subset && rng.next_double() < 0.5) {
      const double fraction = 0.5 + 0.5 * rng.next_double();
      const std::size_t keep = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(inputs.size()))));
      if (keep < inputs.size()) inputs.resize(keep);
    }
  }
  return out;
}

void adam_step(HypernetParams& params, const HypernetParams& gradients, AdamState& state,
               double lr, double beta1, double beta2, double epsilon) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  auto p_views = params.tensor_views();
  auto g_views = gradients.tensor_views();
  auto m_views = state.m.tensor_views();
  auto v_views = state.v.tensor_views();
  for (std::size_t t = 0; t < p_views.size(); ++t) {
    auto& p = *p_views[t];
    const auto& g = *g_views[t];
    auto& m = *m_views[t];
    auto& v = *v_views[t];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
      v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
      p[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + epsilon);
    }
  }
}

namespace {

double mean_cosine(const Batch& predictions, const Batch& targets) {
  double s = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    s += guarded_cosine(predictions[i], targets[i]);
  return s / static_cast<double>(predictions.size());
}

}  // namespace

TrainResult train_hypernet(const std::vector<TrainingExample>& dataset,
                           const TrainingConfig& config) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  const std::size_t input_dim = dataset[0].inputs.empty() ? 0 : dataset[0].inputs[0].size();
  const std::size_t output_dim = dataset[0].target.size();
  for (const auto& ex : dataset) {
    if (ex.inputs.empty())
      throw std::invalid_argument("train: example with empty match set in dataset");
    for (const auto& v : ex.inputs)
      if (v.size() != input_dim) throw std::invalid_argument("train: input dimension mismatch");
    if (ex.target.size() != output_dim)
      throw std::invalid_argument("train: target dimension mismatch");
  }

  std::vector<TrainingExample> working = dataset;
  for (auto& ex : working)
    if (ex.inputs.size() > config.max_context) ex.inputs.resize(config.max_context);

  // Held-out split via seeded shuffle.
  std::vector<std::size_t> indices(working.size());
  std::iota(indices.begin(), indices.end(), 0);
  Rng split_rng(mix_seed(config.seed, 17));
  split_rng.shuffle(indices);
  std::size_t n_val = static_cast<std::size_t>(
      std::floor(config.validation_fraction * static_cast<double>(working.size())));
  if (n_val >= working.size()) n_val = working.size() - 1;
  std::vector<TrainingExample> val_set, train_set;
  for (std::size_t i = 0; i < indices.size(); ++i)
    (i < n_val ? val_set : train_set).push_back(working[indices[i]]);

  std::vector<std::vector<std::vector<double>>> val_inputs;
  Batch val_targets;
  for (const auto& ex : val_set) {
    val_inputs.push_back(ex.inputs);
    val_targets.push_back(ex.target);
  }

  TrainResult result;
  result.params = HypernetParams::create(input_dim, config.hidden_dim, config.num_layers,
                                         output_dim, config.dropout, mix_seed(config.seed, 23));
  AdamState adam{HypernetParams::zeros_like(result.params),
                 HypernetParams::zeros_like(result.params), 0};

  const bool early_stopping = config.patience > 0 && n_val > 0;
  HypernetParams best_params = result.params;
  HypernetParams last_good = result.params;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t epochs_since_improvement = 0;
  const double nan_value = std::numeric_limits<double>::quiet_NaN();

  result.initial_val_cosine = nan_value;
  if (n_val > 0)
    result.initial_val_cosine =
        mean_cosine(hypernet_forward(result.params, val_inputs, false, 0), val_targets);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.learning_rate *
                      std::pow(config.lr_decay_factor,
                               static_cast<double>(epoch / config.lr_decay_interval));

    std::vector<TrainingExample> augmented =
        (config.shuffle_augmentation || config.subset_augmentation)
            ? augment_examples(train_set, mix_seed(config.seed, 20000 + epoch),
                               config.shuffle_augmentation, config.subset_augmentation)
            : train_set;

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng(mix_seed(config.seed, 101 + epoch));
    order_rng.shuffle(order);

    // Batch boundaries; a trailing singleton is merged into the previous
    // batch so the contrastive term always sees at least two examples.
    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s < order.size(); s += config.batch_size) starts.push_back(s);
    if (starts.size() > 1 && order.size() - starts.back() == 1) starts.pop_back();

    double loss_sum = 0.0;
    std::size_t example_count = 0;
    bool epoch_failed = false;
    for (std::size_t bi = 0; bi < starts.size(); ++bi) {
      const std::size_t begin = starts[bi];
      const std::size_t end = (bi + 1 < starts.size()) ? starts[bi + 1] : order.size();
      std::vector<TrainingExample> batch;
      batch.reserve(end - begin);
      for (std::size_t s = begin; s < end; ++s) batch.push_back(augmented[order[s]]);
      try {
        LossAndGradients lg =
            hypernet_backward(result.params, batch, config.lambda_weight, config.tau, true,
                              mix_seed(mix_seed(config.seed, 40000 + epoch), bi));
        adam_step(result.params, lg.gradients, adam, lr, config.adam_beta1, config.adam_beta2,
                  config.adam_epsilon);
        loss_sum += lg.loss * static_cast<double>(batch.size());
        example_count += batch.size();
      } catch (const NonFiniteError&) {
        epoch_failed = true;
        break;
      }
    }

    if (epoch_failed || !result.params.all_finite()) {
      result.params = early_stopping && best_val < std::numeric_limits<double>::infinity()
                          ? best_params
                          : last_good;
      result.diverged = true;
      break;
    }

    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.train_loss = example_count ? loss_sum / static_cast<double>(example_count) : nan_value;
    stats.val_loss = nan_value;
    stats.val_cosine = nan_value;
    if (n_val > 0) {
      const Batch val_pred = hypernet_forward(result.params, val_inputs, false, 0);
      // The contrastive term needs two examples; a singleton split reports
      // only the L1 part.
      const double effective_lambda = val_set.size() >= 2 ? config.lambda_weight : 0.0;
      stats.val_loss = combined_loss(val_targets, val_pred, effective_lambda, config.tau);
      stats.val_cosine = mean_cosine(val_pred, val_targets);
    }
    result.curve.push_back(stats);
    last_good = result.params;

    if (early_stopping) {
      if (stats.val_loss < best_val - config.min_delta) {
        best_val = stats.val_loss;
        best_params = result.params;
        result.best_epoch = epoch + 1;
        epochs_since_improvement = 0;
      } else {
        ++epochs_since_improvement;
        if (epochs_since_improvement >= config.patience) break;
      }
    }
  }

  if (!result.diverged && early_stopping && result.best_epoch > 0) result.params = best_params;
  return result;
}

std::vector<TrainingExample> build_training_set(const MatchTable& table,
                                                const WordVectorStore& store, const Matrix& coords,
                                                std::size_t max_context) {
  if (table.size() != coords.rows)
    throw std::invalid_argument("build_training_set: table and coordinate row counts differ");
  std::vector<TrainingExample> out;
  for (std::size_t t = 0; t < table.size(); ++t) {
    const auto& entry = table.entries[t];
    if (entry.empty()) continue;
    TrainingExample ex;
    for (std::uint32_t w : cap_word_ids(entry, store, max_context))
      ex.inputs.push_back(store.vector_copy(w));
    ex.target.assign(coords.row_ptr(t), coords.row_ptr(t) + coords.cols);
    out.push_back(std::move(ex));
  }
  return out;
}

Matrix predict_coordinates(const HypernetParams& params, const MatchTable& table,
                           const WordVectorStore& store, const std::vector<std::size_t>& token_ids,
                           std::size_t max_context) {
  Matrix out(token_ids.size(), params.output_dim);
  for (std::size_t row = 0; row < token_ids.size(); ++row) {
    const std::size_t id = token_ids[row];
    if (id >= table.size())
      throw std::invalid_argument("predict: token id " + std::to_string(id) + " out of range");
    const auto& entry = table.entries[id];
    if (entry.empty())
      throw std::invalid_argument("predict: token id " + std::to_string(id) +
                                  " has an empty match set");
    std::vector<std::vector<double>> inputs;
    for (std::uint32_t w : cap_word_ids(entry, store, max_context))
      inputs.push_back(store.vector_copy(w));
    const Batch pred = hypernet_forward(params, {inputs}, false, 0);
    std::copy(pred[0].begin(), pred[0].end(), out.row_ptr(row));
  }
  return out;
}

void save_hypernet_params(const HypernetParams& params, const std::string& path) {
  NamedTensors tensors;
  Matrix meta(1, 6);
  meta.data = {1.0,
               static_cast<double>(params.input_dim),
               static_cast<double>(params.hidden_dim),
               static_cast<double>(params.num_layers),
               static_cast<double>(params.output_dim),
               params.dropout};
  tensors.emplace_back("meta", std::move(meta));
  auto vec_as_row = [](const std::vector<double>& v) {
    Matrix m(1, v.size());
    m.data = v;
    return m;
  };
  tensors.emplace_back("input.weight", params.w_in);
  tensors.emplace_back("input.bias", vec_as_row(params.b_in));
  for (std::size_t l = 0; l < params.num_layers; ++l) {
    const std::string base = "layer" + std::to_string(l);
    tensors.emplace_back(base + ".fwd.w_ih", params.fwd[l].w_ih);
    tensors.emplace_back(base + ".fwd.w_hh", params.fwd[l].w_hh);
    tensors.emplace_back(base + ".fwd.bias", vec_as_row(params.fwd[l].bias));
    tensors.emplace_back(base + ".bwd.w_ih", params.bwd[l].w_ih);
    tensors.emplace_back(base + ".bwd.w_hh", params.bwd[l].w_hh);
    tensors.emplace_back(base + ".bwd.bias", vec_as_row(params.bwd[l].bias));
  }
  tensors.emplace_back("head.weight", params.w_out);
  tensors.emplace_back("head.bias", vec_as_row(params.b_out));
  save_tensors(tensors, path);
}

HypernetParams load_hypernet_params(const std::string& path) {
  const NamedTensors tensors = load_tensors(path);
  auto find = [&](const std::string& name) -> const Matrix& {
    for (const auto& [n, m] : tensors)
      if (n == name) return m;
    throw IoError(path + ": missing tensor \"" + name + "\"");
  };
  const Matrix& meta = find("meta");
  if (meta.data.size() != 6 || meta.data[0] != 1.0)
    throw IoError(path + ": unsupported parameter file version");
  HypernetParams p;
  p.input_dim = static_cast<std::size_t>(meta.data[1]);
  p.hidden_dim = static_cast<std::size_t>(meta.data[2]);
  p.num_layers = static_cast<std::size_t>(meta.data[3]);
  p.output_dim = static_cast<std::size_t>(meta.data[4]);
  p.dropout = meta.data[5];
  p.w_in = find("input.weight");
  p.b_in = find("input.bias").data;
  p.fwd.resize(p.num_layers);
  p.bwd.resize(p.num_layers);
  for (std::size_t l = 0; l < p.num_layers; ++l) {
    const std::string base = "layer" + std::to_string(l);
    p.fwd[l].w_ih = find(base + ".fwd.w_ih");
    p.fwd[l].w_hh = find(base + ".fwd.w_hh");
    p.fwd[l].bias = find(base + ".fwd.bias").data;
    p.bwd[l].w_ih = find(base + ".bwd.w_ih");
    p.bwd[l].w_hh = find(base + ".bwd.w_hh");
    p.bwd[l].bias = find(base + ".bwd.bias").data;
  }
  p.w_out = find("head.weight");
  p.b_out = find("head.bias").data;
  if (!p.all_finite()) throw IoError(path + ": non-finite parameter value");
  return p;
}

void save_training_curve(const std::vector<EpochStats>& curve, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << "epoch,train_loss,val_loss,val_cosine\n";
  for (const auto& row : curve)
    out << row.epoch << ',' << format_double(row.train_loss) << ',' << format_double(row.val_loss)
        << ',' << format_double(row.val_cosine) << '\n';
  if (!out) throw IoError(path + ": write failed");
}

}  // namespace vocex
