#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vocex/corpus_io.hpp"
#include "vocex/matching.hpp"
#include "vocex/matrix.hpp"

namespace vocex {

// Raised when a loss or gradient turns non-finite; the trainer treats it as
// divergence and falls back to the last good checkpoint.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One direction of one stacked layer. Gate rows are ordered [i; f; g; o].
struct LstmDirectionParams {
  Matrix w_ih;               // 4H × in_dim
  Matrix w_hh;               // 4H × H
  std::vector<double> bias;  // 4H
};

// BiLSTM set-to-vector network: input projection, stacked bidirectional LSTM
// layers, linear head on the concatenated final states of both directions.
struct HypernetParams {
  std::size_t input_dim = 0;   // word-vector dimension
  std::size_t hidden_dim = 0;  // per direction
  std::size_t num_layers = 0;
  std::size_t output_dim = 0;  // coordinate dimension
  double dropout = 0.0;

  Matrix w_in;               // hidden × input_dim
  std::vector<double> b_in;  // hidden
  std::vector<LstmDirectionParams> fwd;  // one per layer
  std::vector<LstmDirectionParams> bwd;  // one per layer
  Matrix w_out;               // output_dim × 2·hidden
  std::vector<double> b_out;  // output_dim

  static HypernetParams create(std::size_t input_dim, std::size_t hidden_dim,
                               std::size_t num_layers, std::size_t output_dim, double dropout,
                               std::uint64_t seed);
  static HypernetParams zeros_like(const HypernetParams& other);

  std::size_t parameter_count() const;
  bool all_finite() const;

  // Flat view over every tensor, in a fixed order; gradients and optimizer
  // state reuse this struct, so the views line up across instances.
  std::vector<std::vector<double>*> tensor_views();
  std::vector<const std::vector<double>*> tensor_views() const;
};

// Closed form of parameter_count, usable before constructing anything.
std::size_t hypernet_parameter_count(std::size_t input_dim, std::size_t hidden_dim,
                                     std::size_t num_layers, std::size_t output_dim);

struct TrainingExample {
  std::vector<std::vector<double>> inputs;  // ≥ 1 word vectors
  std::vector<double> target;               // coordinate vector
};

struct TrainingConfig {
  // Loss
  double lambda_weight = 0.1;
  double tau = 0.5;
  // Optimizer and schedule
  double learning_rate = 1e-4;
  double lr_decay_factor = 0.95;
  std::size_t lr_decay_interval = 10;  // epochs
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  // Regularization / augmentation
  double dropout = 0.4;
  bool shuffle_augmentation = true;
  bool subset_augmentation = true;
  // Loop
  std::size_t max_context = 256;
  std::size_t batch_size = 32;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  std::size_t patience = 20;  // 0 disables early stopping
  double min_delta = 1e-4;
  // Architecture
  std::size_t hidden_dim = 64;
  std::size_t num_layers = 2;
};

using Batch = std::vector<std::vector<double>>;  // batch of coordinate vectors

// InfoNCE over in-batch negatives; sim is eps-guarded cosine, temperature
// applies inside every exponent. Requires batch size ≥ 2.
double contrastive_loss(const Batch& targets, const Batch& predictions, double tau);

// Mean over the batch of ‖F − F̂‖₁ / D'.
double l1_loss(const Batch& targets, const Batch& predictions);

// λ·contrastive + (1−λ)·l1. Endpoints skip the unused term, so λ=0 is valid
// for batches of one.
double combined_loss(const Batch& targets, const Batch& predictions, double lambda, double tau);

// Gradient of combined_loss w.r.t. each prediction; loss value returned too.
Batch combined_loss_gradient(const Batch& targets, const Batch& predictions, double lambda,
                             double tau, double* loss_out);

// Batched forward pass over variable-length inputs. Eval mode is a pure
// function of (params, inputs); train mode applies dropout with masks drawn
// deterministically from dropout_seed.
Batch hypernet_forward(const HypernetParams& params,
                       const std::vector<std::vector<std::vector<double>>>& batch_inputs,
                       bool train_mode, std::uint64_t dropout_seed);

struct LossAndGradients {
  double loss = 0.0;
  Batch predictions;
  HypernetParams gradients;  // same tensor layout as the parameters
};

// Forward + reverse pass for one batch under the combined loss.
LossAndGradients hypernet_backward(const HypernetParams& params,
                                   const std::vector<TrainingExample>& batch, double lambda,
                                   double tau, bool train_mode, std::uint64_t dropout_seed);

// Epoch-wise augmentation: per-example shuffle of the word-vector list, and
// with probability 1/2 truncation to a uniform fraction in [0.5, 1] of its
// length (floor, at least one vector kept).
std::vector<TrainingExample> augment_examples(const std::vector<TrainingExample>& examples,
                                              std::uint64_t epoch_seed, bool shuffle,
                                              bool subset);

struct AdamState {
  HypernetParams m;
  HypernetParams v;
  std::uint64_t step = 0;
};

void adam_step(HypernetParams& params, const HypernetParams& gradients, AdamState& state,
               double lr, double beta1, double beta2, double epsilon);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;    // NaN when there is no validation split
  double val_cosine = 0.0;  // NaN when there is no validation split
};

struct TrainResult {
  HypernetParams params;
  std::vector<EpochStats> curve;
  bool diverged = false;
  std::size_t best_epoch = 0;  // 1-based; 0 when early stopping never fired
  // Validation cosine of the freshly initialized network, before any update;
  // NaN without a validation split.
  double initial_val_cosine = 0.0;
};

TrainResult train_hypernet(const std::vector<TrainingExample>& dataset,
                           const TrainingConfig& config);

// One training example per token with a non-empty match set: inputs are the
// matched word vectors (id order, capped to max_context by the lexicographic
// rule), target is the token's coordinate row.
std::vector<TrainingExample> build_training_set(const MatchTable& table,
                                                const WordVectorStore& store, const Matrix& coords,
                                                std::size_t max_context);

// Eval-mode predictions for the given token ids. Every id must have a
// non-empty match set. Rows are aligned with token_ids.
Matrix predict_coordinates(const HypernetParams& params, const MatchTable& table,
                           const WordVectorStore& store, const std::vector<std::size_t>& token_ids,
                           std::size_t max_context);

void save_hypernet_params(const HypernetParams& params, const std::string& path);
HypernetParams load_hypernet_params(const std::string& path);

void save_training_curve(const std::vector<EpochStats>& curve, const std::string& path);

}  // namespace vocex
