#include <doctest.h>

#include <cmath>
#include <cstring>

#include "test_util.hpp"
#include "vocex/hypernet.hpp"
#include "vocex/rng.hpp"

using namespace vocex;

namespace {

std::vector<double> vec(std::initializer_list<double> v) { return std::vector<double>(v); }

TrainingExample example(std::vector<std::vector<double>> inputs, std::vector<double> target) {
  return TrainingExample{std::move(inputs), std::move(target)};
}

// Independent scalar recurrence for a one-step, single-layer network; the
// production path must agree with this to machine precision.
double hand_single_step(const HypernetParams& p, const std::vector<double>& x) {
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const std::size_t h = p.hidden_dim;
  std::vector<double> proj(h);
  for (std::size_t r = 0; r < h; ++r) {
    proj[r] = p.b_in[r];
    for (std::size_t c = 0; c < p.input_dim; ++c) proj[r] += p.w_in(r, c) * x[c];
  }
  std::vector<double> rep(2 * h);
  for (int dir = 0; dir < 2; ++dir) {
    const LstmDirectionParams& d = dir == 0 ? p.fwd[0] : p.bwd[0];
    for (std::size_t j = 0; j < h; ++j) {
      double ai = d.bias[j], af = d.bias[h + j], ag = d.bias[2 * h + j], ao = d.bias[3 * h + j];
      for (std::size_t c = 0; c < h; ++c) {
        ai += d.w_ih(j, c) * proj[c];
        af += d.w_ih(h + j, c) * proj[c];
        ag += d.w_ih(2 * h + j, c) * proj[c];
        ao += d.w_ih(3 * h + j, c) * proj[c];
      }
      const double cell = sig(ai) * std::tanh(ag);
      rep[dir * h + j] = sig(ao) * std::tanh(cell);
    }
  }
  double y = p.b_out[0];
  for (std::size_t c = 0; c < 2 * h; ++c) y += p.w_out(0, c) * rep[c];
  return y;
}

double loss_of(const HypernetParams& params, const std::vector<TrainingExample>& batch,
               double lambda, double tau, bool train_mode, std::uint64_t seed) {
  std::vector<std::vector<std::vector<double>>> inputs;
  Batch targets;
  for (const auto& ex : batch) {
    inputs.push_back(ex.inputs);
    targets.push_back(ex.target);
  }
  const Batch pred = hypernet_forward(params, inputs, train_mode, seed);
  return combined_loss(targets, pred, lambda, tau);
}

// Central-difference check over every parameter.
void check_gradients(HypernetParams& params, const std::vector<TrainingExample>& batch,
                     double lambda, double tau, std::uint64_t seed) {
  const LossAndGradients lg = hypernet_backward(params, batch, lambda, tau, true, seed);
  const double h = 1e-5;
  auto views = params.tensor_views();
  auto grad_views = lg.gradients.tensor_views();
  for (std::size_t t = 0; t < views.size(); ++t) {
    for (std::size_t j = 0; j < views[t]->size(); ++j) {
      const double saved = (*views[t])[j];
      (*views[t])[j] = saved + h;
      const double up = loss_of(params, batch, lambda, tau, true, seed);
      (*views[t])[j] = saved - h;
      const double down = loss_of(params, batch, lambda, tau, true, seed);
      (*views[t])[j] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = (*grad_views[t])[j];
      const double err = std::abs(numeric - analytic);
      const double mag = std::max(std::abs(numeric), std::abs(analytic));
      const bool ok = (err <= 1e-4 * mag) || (mag < 1e-3 && err <= 1e-7);
      if (!ok) {
        CAPTURE(t);
        CAPTURE(j);
        CAPTURE(analytic);
        CAPTURE(numeric);
      }
      CHECK(ok);
    }
  }
}

std::vector<TrainingExample> random_batch(Rng& rng, std::size_t count, std::size_t input_dim,
                                          std::size_t output_dim, std::size_t max_len) {
  std::vector<TrainingExample> batch;
  for (std::size_t i = 0; i < count; ++i) {
    TrainingExample ex;
    const std::size_t len = 1 + rng.next_below(max_len);
    for (std::size_t t = 0; t < len; ++t) {
      std::vector<double> v(input_dim);
      for (double& x : v) x = rng.next_gaussian();
      ex.inputs.push_back(std::move(v));
    }
    ex.target.resize(output_dim);
    for (double& x : ex.target) x = rng.next_gaussian();
    batch.push_back(std::move(ex));
  }
  return batch;
}

}  // namespace

TEST_SUITE_BEGIN("hypernet");

TEST_CASE("training config defaults follow the reference settings") {
  const TrainingConfig c;
  CHECK(c.lambda_weight == 0.1);
  CHECK(c.tau == 0.5);
  CHECK(c.dropout == 0.4);
  CHECK(c.max_context == 256);
  CHECK(c.learning_rate == 1e-4);
  CHECK(c.lr_decay_factor == 0.95);
  CHECK(c.lr_decay_interval == 10);
}

TEST_CASE("parameter count matches the tensors") {
  const HypernetParams p = HypernetParams::create(7, 5, 3, 4, 0.0, 1);
  std::size_t total = 0;
  for (const auto* t : p.tensor_views()) total += t->size();
  CHECK(total == p.parameter_count());
  CHECK(total == hypernet_parameter_count(7, 5, 3, 4));
}

TEST_CASE("contrastive loss golden values") {
  const Batch f = {vec({1.0, 0.0}), vec({0.0, 1.0})};
  SUBCASE("perfect predictions") {
    CHECK(std::abs(contrastive_loss(f, f, 0.5) - std::log(1.0 + std::exp(-2.0))) < 1e-9);
  }
  SUBCASE("perfectly wrong predictions") {
    const Batch swapped = {f[1], f[0]};
    CHECK(std::abs(contrastive_loss(f, swapped, 0.5) - std::log(1.0 + std::exp(2.0))) < 1e-9);
  }
  SUBCASE("uniform similarities give log(batch size)") {
    for (std::size_t b : {2, 5, 9}) {
      Batch same(b, vec({0.6, 0.8}));
      for (double tau : {0.5, 0.25, 2.0})
        CHECK(std::abs(contrastive_loss(same, same, tau) - std::log(double(b))) < 1e-9);
    }
  }
}

TEST_CASE("contrastive loss decreases with temperature at the optimum") {
  const Batch f = {vec({1.0, 0.0}), vec({0.0, 1.0})};
  double prev = contrastive_loss(f, f, 1.0);
  for (double tau : {0.5, 0.25, 0.1}) {
    const double cur = contrastive_loss(f, f, tau);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("contrastive loss is positive and needs a real batch") {
  Rng rng(3);
  const auto batch = random_batch(rng, 4, 2, 3, 1);
  Batch targets, preds;
  for (const auto& ex : batch) targets.push_back(ex.target);
  for (const auto& ex : batch) preds.push_back(ex.target);  // even perfect stays > 0
  CHECK(contrastive_loss(targets, preds, 0.5) > 0.0);
  CHECK_THROWS(contrastive_loss({targets[0]}, {preds[0]}, 0.5));
  CHECK_THROWS(contrastive_loss(targets, preds, 0.0));
}

TEST_CASE("l1 loss golden values and homogeneity") {
  CHECK(l1_loss({vec({1.0, 0.0})}, {vec({1.0, 0.0})}) == 0.0);
  CHECK(l1_loss({vec({1.0, 0.0})}, {vec({0.0, 0.0})}) == 0.5);
  Rng rng(8);
  Batch f = {vec({rng.next_gaussian(), rng.next_gaussian()}),
             vec({rng.next_gaussian(), rng.next_gaussian()})};
  Batch g = {vec({rng.next_gaussian(), rng.next_gaussian()}),
             vec({rng.next_gaussian(), rng.next_gaussian()})};
  const double base = l1_loss(f, g);
  const double c = -2.5;
  Batch fc = f, gc = g;
  for (auto& v : fc)
    for (double& x : v) x *= c;
  for (auto& v : gc)
    for (double& x : v) x *= c;
  CHECK(l1_loss(fc, gc) == doctest::Approx(std::abs(c) * base).epsilon(1e-12));
}

TEST_CASE("combined loss endpoints and mixture") {
  const Batch f = {vec({1.0, 0.0}), vec({0.0, 1.0})};
  const Batch zeros = {vec({0.0, 0.0}), vec({0.0, 0.0})};
  CHECK(combined_loss(f, f, 1.0, 0.5) == contrastive_loss(f, f, 0.5));
  CHECK(combined_loss(f, zeros, 0.0, 0.5) == l1_loss(f, zeros));
  // 0.1 * log(1+e^-2) + 0.9 * 0.5
  const double expected = 0.1 * std::log(1.0 + std::exp(-2.0)) + 0.9 * 0.5;
  const double mixture = 0.1 * contrastive_loss(f, f, 0.5) + 0.9 * l1_loss(f, zeros);
  CHECK(std::abs(mixture - expected) < 1e-12);
  CHECK(std::abs(expected - 0.462693) < 1e-6);
  // lambda=0 permits singleton batches
  CHECK(combined_loss({f[0]}, {zeros[0]}, 0.0, 0.5) == 0.5);
  CHECK_THROWS(combined_loss(f, f, 1.5, 0.5));
}

TEST_CASE("forward with zero parameters returns the head bias") {
  HypernetParams p = HypernetParams::zeros_like(HypernetParams::create(3, 4, 2, 2, 0.0, 1));
  p.b_out = {0.25, -1.5};
  Rng rng(4);
  const auto batch = random_batch(rng, 3, 3, 2, 4);
  std::vector<std::vector<std::vector<double>>> inputs;
  for (const auto& ex : batch) inputs.push_back(ex.inputs);
  const Batch out = hypernet_forward(p, inputs, false, 0);
  for (const auto& y : out) {
    CHECK(y[0] == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(y[1] == doctest::Approx(-1.5).epsilon(1e-15));
  }
}

TEST_CASE("single-step output matches a hand-unrolled recurrence") {
  HypernetParams p = HypernetParams::create(2, 2, 1, 1, 0.0, 99);
  const std::vector<double> x = {1.0, 0.0};
  const Batch out = hypernet_forward(p, {{x}}, false, 0);
  CHECK(out[0][0] == doctest::Approx(hand_single_step(p, x)).epsilon(1e-12));
}

TEST_CASE("eval mode is deterministic and rejects empty inputs") {
  HypernetParams p = HypernetParams::create(3, 4, 1, 2, 0.4, 7);
  Rng rng(5);
  const auto batch = random_batch(rng, 2, 3, 2, 3);
  std::vector<std::vector<std::vector<double>>> inputs;
  for (const auto& ex : batch) inputs.push_back(ex.inputs);
  const Batch a = hypernet_forward(p, inputs, false, 1);
  const Batch b = hypernet_forward(p, inputs, false, 2);  // seed ignored in eval
  CHECK(a == b);
  CHECK_THROWS(hypernet_forward(p, {{}}, false, 0));
}

TEST_CASE("single-word inputs are unaffected by augmentation") {
  std::vector<TrainingExample> one = {example({{vec({1.0, 2.0})}}, vec({0.5}))};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto aug = augment_examples(one, seed, true, true);
    CHECK(aug[0].inputs == one[0].inputs);
  }
}

TEST_CASE("augmentation respects the truncation rule and determinism") {
  Rng rng(12);
  std::vector<TrainingExample> batch = random_batch(rng, 40, 2, 1, 1);
  for (auto& ex : batch) ex.inputs.assign(4, vec({1.0, 2.0}));
  bool saw_truncation = false;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = augment_examples(batch, seed, true, true);
    const auto b = augment_examples(batch, seed, true, true);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].inputs == b[i].inputs);
      // floor(0.5*4)=2, so sizes stay in {2,3,4}
      CHECK(a[i].inputs.size() >= 2);
      CHECK(a[i].inputs.size() <= 4);
      if (a[i].inputs.size() < 4) saw_truncation = true;
    }
  }
  CHECK(saw_truncation);
  const auto no_subset = augment_examples(batch, 3, true, false);
  for (const auto& ex : no_subset) CHECK(ex.inputs.size() == 4);
}

TEST_CASE("gradients match central finite differences") {
  Rng rng(1234);
  const struct {
    double lambda;
    std::size_t layers;
    double dropout;
  } cases[] = {{0.0, 1, 0.0}, {1.0, 1, 0.0}, {0.1, 2, 0.0}, {0.1, 1, 0.3}};
  for (const auto& c : cases) {
    HypernetParams p = HypernetParams::create(2, 3, c.layers, 2, c.dropout, rng.next_u64());
    const auto batch = random_batch(rng, 2, 2, 2, 3);
    check_gradients(p, batch, c.lambda, 0.5, /*seed=*/42);
  }
}

TEST_CASE("head bias gradient under pure l1 is the propagated sign mean") {
  Rng rng(77);
  HypernetParams p = HypernetParams::create(2, 3, 1, 4, 0.0, 3);
  const auto batch = random_batch(rng, 3, 2, 4, 2);
  const LossAndGradients lg = hypernet_backward(p, batch, 0.0, 0.5, true, 0);
  const std::size_t dim = 4;
  for (std::size_t d = 0; d < dim; ++d) {
    double expected = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double diff = lg.predictions[i][d] - batch[i].target[d];
      expected += (diff > 0 ? 1.0 : diff < 0 ? -1.0 : 0.0);
    }
    expected /= static_cast<double>(batch.size()) * static_cast<double>(dim);
    CHECK(lg.gradients.b_out[d] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("exact fit with lambda zero gives exactly zero gradients") {
  HypernetParams p = HypernetParams::zeros_like(HypernetParams::create(2, 3, 1, 2, 0.0, 1));
  p.b_out = {0.7, -0.3};
  std::vector<TrainingExample> batch = {
      example({vec({1.0, 2.0}), vec({0.0, 1.0})}, p.b_out),
      example({vec({-1.0, 0.5})}, p.b_out),
  };
  const LossAndGradients lg = hypernet_backward(p, batch, 0.0, 0.5, true, 0);
  CHECK(lg.loss == 0.0);
  for (const auto* t : lg.gradients.tensor_views())
    for (double v : *t) CHECK(v == 0.0);
}

TEST_CASE("non-finite loss raises and the trainer keeps the last good params") {
  std::vector<TrainingExample> batch = {
      example({vec({1.0, 0.0})}, vec({1.5e308, 1.5e308})),
      example({vec({0.0, 1.0})}, vec({1.5e308, 1.5e308})),
  };
  HypernetParams p = HypernetParams::create(2, 3, 1, 2, 0.0, 5);
  CHECK_THROWS_AS(hypernet_backward(p, batch, 0.0, 0.5, true, 0), NonFiniteError);

  TrainingConfig config;
  config.epochs = 5;
  config.batch_size = 2;
  config.lambda_weight = 0.0;
  config.dropout = 0.0;
  config.validation_fraction = 0.0;
  config.hidden_dim = 3;
  config.num_layers = 1;
  const TrainResult result = train_hypernet(batch, config);
  CHECK(result.diverged);
  CHECK(result.params.all_finite());
  CHECK(result.curve.empty());
}

TEST_CASE("adam single-step update") {
  HypernetParams p = HypernetParams::zeros_like(HypernetParams::create(2, 2, 1, 1, 0.0, 1));
  HypernetParams g = HypernetParams::zeros_like(p);
  g.b_out[0] = 0.5;
  AdamState state{HypernetParams::zeros_like(p), HypernetParams::zeros_like(p), 0};
  adam_step(p, g, state, 1e-2, 0.9, 0.999, 1e-8);
  // With bias correction at t=1, the step is lr * g / (|g| + eps).
  CHECK(p.b_out[0] == doctest::Approx(-1e-2 * 0.5 / (0.5 + 1e-8)).epsilon(1e-9));
  CHECK(state.step == 1);
}

TEST_CASE("memorizes a tiny dataset") {
  Rng rng(31337);
  std::vector<TrainingExample> dataset = random_batch(rng, 8, 4, 8, 3);
  TrainingConfig config;
  config.lambda_weight = 0.1;
  config.tau = 0.25;
  config.learning_rate = 3e-3;
  config.dropout = 0.0;
  config.batch_size = 4;
  config.epochs = 200;
  config.validation_fraction = 0.0;
  config.patience = 0;
  config.hidden_dim = 32;
  config.num_layers = 1;
  config.seed = 7;
  const TrainResult result = train_hypernet(dataset, config);
  REQUIRE_FALSE(result.diverged);
  double best = 1e300;
  for (const auto& row : result.curve) best = std::min(best, row.train_loss);
  CHECK(best < 0.1);
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
  Rng rng(5150);
  std::vector<TrainingExample> dataset = random_batch(rng, 12, 3, 4, 3);
  TrainingConfig config;
  config.epochs = 6;
  config.batch_size = 4;
  config.learning_rate = 1e-3;
  config.hidden_dim = 6;
  config.num_layers = 1;
  config.seed = 99;
  const TrainResult a = train_hypernet(dataset, config);
  const TrainResult b = train_hypernet(dataset, config);
  REQUIRE(a.curve.size() == b.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    CHECK(a.curve[i].train_loss == b.curve[i].train_loss);
    CHECK(a.curve[i].val_loss == b.curve[i].val_loss);
  }
  auto va = a.params.tensor_views();
  auto vb = b.params.tensor_views();
  for (std::size_t t = 0; t < va.size(); ++t) CHECK(*va[t] == *vb[t]);
}

TEST_CASE("learns a linear map of mean inputs better than untrained") {
  Rng rng(2718);
  const std::size_t d_w = 6, d_out = 6;
  Matrix map(d_out, d_w);
  for (double& v : map.data) v = rng.next_gaussian() / std::sqrt(double(d_w));
  std::vector<TrainingExample> dataset;
  for (int i = 0; i < 80; ++i) {
    TrainingExample ex;
    const std::size_t len = 1 + rng.next_below(3);
    std::vector<double> mean(d_w, 0.0);
    for (std::size_t t = 0; t < len; ++t) {
      std::vector<double> v(d_w);
      for (double& x : v) x = rng.next_gaussian();
      for (std::size_t d = 0; d < d_w; ++d) mean[d] += v[d] / double(len);
      ex.inputs.push_back(std::move(v));
    }
    ex.target.assign(d_out, 0.0);
    for (std::size_t r = 0; r < d_out; ++r)
      for (std::size_t c = 0; c < d_w; ++c) ex.target[r] += map(r, c) * mean[c];
    dataset.push_back(std::move(ex));
  }
  TrainingConfig config;
  config.learning_rate = 2e-3;
  config.dropout = 0.0;
  config.batch_size = 16;
  config.epochs = 120;
  config.validation_fraction = 0.125;
  config.patience = 0;
  config.hidden_dim = 24;
  config.num_layers = 1;
  config.seed = 11;
  const TrainResult result = train_hypernet(dataset, config);
  REQUIRE_FALSE(result.diverged);
  CHECK(result.curve.back().val_cosine > result.initial_val_cosine + 0.05);
}

TEST_CASE("build_training_set skips unmatched tokens and caps context") {
  std::vector<std::string> words = {"aa", "ab", "ba", "bb"};
  Matrix vectors(4, 2);
  for (std::size_t i = 0; i < 4; ++i) vectors(i, 0) = double(i);
  const WordVectorStore store(words, vectors);
  MatchTable table;
  table.entries = {{0, 1, 2, 3}, {}, {2}};
  Matrix coords(3, 2);
  coords(0, 0) = 1.0;
  coords(2, 1) = -1.0;
  const auto dataset = build_training_set(table, store, coords, 2);
  REQUIRE(dataset.size() == 2);
  CHECK(dataset[0].inputs.size() == 2);  // capped from 4
  CHECK(dataset[0].target == vec({1.0, 0.0}));
  CHECK(dataset[1].inputs.size() == 1);
  CHECK(dataset[1].target == vec({0.0, -1.0}));
}

TEST_CASE("predict is deterministic, delegating and batch independent") {
  std::vector<std::string> words = {"aa", "ab", "ba"};
  Matrix vectors(3, 2);
  vectors(0, 0) = 1.0;
  vectors(1, 1) = 1.0;
  vectors(2, 0) = -1.0;
  const WordVectorStore store(words, vectors);
  MatchTable table;
  table.entries = {{0, 1}, {2}, {}};
  const HypernetParams params = HypernetParams::create(2, 4, 1, 3, 0.0, 21);

  const Matrix once = predict_coordinates(params, table, store, {0, 1}, 256);
  const Matrix twice = predict_coordinates(params, table, store, {0, 1}, 256);
  CHECK(once.data == twice.data);

  // Singleton match set equals a direct forward on that word vector.
  const Batch direct = hypernet_forward(params, {{store.vector_copy(2)}}, false, 0);
  for (std::size_t d = 0; d < 3; ++d)
    CHECK(once(1, d) == doctest::Approx(direct[0][d]).epsilon(1e-15));

  // Disjoint batches produce the same rows as one batch.
  const Matrix first = predict_coordinates(params, table, store, {0}, 256);
  const Matrix second = predict_coordinates(params, table, store, {1}, 256);
  for (std::size_t d = 0; d < 3; ++d) {
    CHECK(once(0, d) == first(0, d));
    CHECK(once(1, d) == second(0, d));
  }

  CHECK_THROWS(predict_coordinates(params, table, store, {2}, 256));
  CHECK_THROWS(predict_coordinates(params, table, store, {9}, 256));
}

TEST_CASE("parameter files round trip bitwise") {
  vocex::test::TempDir tmp("params_rt");
  const HypernetParams p = HypernetParams::create(5, 4, 2, 3, 0.25, 1001);
  save_hypernet_params(p, tmp.file("p.vxt"));
  const HypernetParams back = load_hypernet_params(tmp.file("p.vxt"));
  CHECK(back.input_dim == p.input_dim);
  CHECK(back.hidden_dim == p.hidden_dim);
  CHECK(back.num_layers == p.num_layers);
  CHECK(back.output_dim == p.output_dim);
  CHECK(back.dropout == p.dropout);
  auto va = p.tensor_views();
  auto vb = back.tensor_views();
  REQUIRE(va.size() == vb.size());
  for (std::size_t t = 0; t < va.size(); ++t) CHECK(*va[t] == *vb[t]);
}

TEST_SUITE_END();
