#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "vocex/corpus_io.hpp"
#include "vocex/eval.hpp"
#include "vocex/hypernet.hpp"
#include "vocex/initializer.hpp"
#include "vocex/matching.hpp"
#include "vocex/pipeline.hpp"
#include "vocex/rng.hpp"
#include "vocex/svd.hpp"

namespace {

using namespace vocex;

struct FactorizeArgs {
  std::string embeddings, out_f, out_p;
  std::size_t rank = 100;
  std::uint64_t seed = 0;
};

int run_factorize(const FactorizeArgs& args) {
  const Matrix e = load_matrix(args.embeddings);
  const Factorization fac = truncated_svd(e, args.rank, args.seed);
  save_matrix(fac.f, args.out_f);
  save_matrix(fac.p, args.out_p);
  const double residual = frobenius_distance(e, reconstruct(fac));
  std::printf("factorized %zux%zu at rank %zu: residual %.6g, sigma[0]=%.6g sigma[%zu]=%.6g\n",
              e.rows, e.cols, args.rank, residual, args.rank - 1, fac.sigma.back());
  return 0;
}

struct MatchArgs {
  std::string vocab, vectors, out;
  std::string strip_marker = "none";
  bool lowercase = false;
  std::size_t max_matches = 256;
};

int run_match(const MatchArgs& args) {
  const Vocabulary vocab = load_vocab(args.vocab);
  const WordVectorStore store = load_word_vectors(args.vectors);
  NormalizationConfig config;
  config.strip_marker = marker_style_from_name(args.strip_marker);
  config.lowercase = args.lowercase;
  config.max_matches = args.max_matches;
  const MatchTable table = build_match_table(vocab, store, config);
  save_match_table(table, vocab, args.out);
  const MatchStats stats = match_stats(table);
  std::printf("matched %zu of %zu tokens (%zu unmatched) against %zu words\n", stats.matched,
              table.size(), stats.unmatched, store.size());
  return 0;
}

struct TrainArgs {
  std::string matches, vectors, coords, config_path, out_params, curve;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

int run_train(const TrainArgs& args) {
  const MatchTable table = load_match_table(args.matches);
  const WordVectorStore store = load_word_vectors(args.vectors);
  const Matrix coords = load_matrix(args.coords);
  TrainingConfig config;
  if (!args.config_path.empty())
    config = training_config_from_json(read_text_file(args.config_path));
  if (args.seed_set) config.seed = args.seed;

  const auto dataset = build_training_set(table, store, coords, config.max_context);
  if (dataset.empty()) throw std::runtime_error("no token has a non-empty match set");
  std::printf("training on %zu examples (of %zu tokens), hidden=%zu layers=%zu params=%zu\n",
              dataset.size(), table.size(), config.hidden_dim, config.num_layers,
              hypernet_parameter_count(store.dim(), config.hidden_dim, config.num_layers,
                                       coords.cols));
  const TrainResult result = train_hypernet(dataset, config);
  save_hypernet_params(result.params, args.out_params);
  if (!args.curve.empty()) save_training_curve(result.curve, args.curve);
  if (result.diverged) std::fprintf(stderr, "warning: training diverged; kept last good params\n");
  if (!result.curve.empty()) {
    const auto& last = result.curve.back();
    std::printf("epoch %zu: train_loss %.6g val_loss %.6g val_cosine %.6g\n", last.epoch,
                last.train_loss, last.val_loss, last.val_cosine);
  }
  return result.diverged ? 1 : 0;
}

struct InitArgs {
  std::string strategy = "hyper";
  std::string source_vocab, target_vocab, coords, primitive, matches, vectors;
  std::string source_matches;  // needed by the ofa strategy
  std::string hypernet_params;
  std::size_t k = 10;
  double temp = 0.1;
  std::uint64_t seed = 0;
  std::string out_coords, out_report, emit_full;
  std::size_t max_context = 256;
};

int run_init(const InitArgs& args) {
  const InitStrategy strategy = init_strategy_from_name(args.strategy);
  const Vocabulary source = load_vocab(args.source_vocab);
  const Vocabulary target = load_vocab(args.target_vocab);
  const Matrix f_source = load_matrix(args.coords);
  const WordVectorStore store = load_word_vectors(args.vectors);
  const MatchTable target_table = load_match_table(args.matches);
  if (target_table.size() != target.size())
    throw std::runtime_error("--matches must be a match table over the target vocabulary");

  InitStrategy effective = strategy;
  if (strategy == InitStrategy::Hyper && args.hypernet_params.empty()) {
    // Matched tokens without a trained hypernetwork fall back to random
    // initialization, never silently to another wise strategy.
    std::fprintf(stderr,
                 "warning: no --hypernet-params given; matched tokens fall back to random init\n");
    effective = InitStrategy::Random;
  }
  InitPlan plan = plan_init(source, target, target_table, effective);
  const InitRows copied = copy_overlap(plan, f_source);
  InitRows predicted;
  predicted.rows = Matrix(0, f_source.cols);
  if (effective == InitStrategy::Hyper && !plan.predicted.empty()) {
    const HypernetParams params = load_hypernet_params(args.hypernet_params);
    predicted = hyper_init(plan, params, target_table, store, args.max_context);
  } else if (effective == InitStrategy::Ofa && !plan.predicted.empty()) {
    if (args.source_matches.empty())
      throw std::runtime_error("--source-matches is required for the ofa strategy");
    const MatchTable source_table = load_match_table(args.source_matches);
    if (source_table.size() != source.size())
      throw std::runtime_error("--source-matches must cover the source vocabulary");
    predicted = ofa_init(plan, f_source, source_table, target_table, store, args.k, args.temp);
  }
  InitRows random_rows = random_init(plan, f_source, args.seed);

  Matrix primitive;
  const bool emit = !args.emit_full.empty();
  if (emit || !args.primitive.empty()) primitive = load_matrix(args.primitive);
  const InitResult result =
      assemble(plan, copied, predicted, random_rows, primitive.rows ? &primitive : nullptr, emit);
  save_matrix(result.f_target, args.out_coords);
  save_init_report(result.report, target, args.out_report);
  if (emit) save_matrix(*result.e_target, args.emit_full);
  std::printf("initialized %zu tokens: %zu copied, %zu predicted, %zu random\n",
              result.report.total, result.report.copied, result.report.predicted,
              result.report.random);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vocex: target-vocabulary embedding initialization toolkit"};
  app.require_subcommand(1);

  FactorizeArgs fa;
  CLI::App* factorize = app.add_subcommand("factorize", "truncated SVD of an embedding matrix");
  factorize->add_option("--embeddings", fa.embeddings)->required();
  factorize->add_option("--rank", fa.rank)->required();
  factorize->add_option("--out-f", fa.out_f)->required();
  factorize->add_option("--out-p", fa.out_p)->required();
  factorize->add_option("--seed", fa.seed);

  MatchArgs ma;
  CLI::App* match = app.add_subcommand("match", "token to word substring matching");
  match->add_option("--vocab", ma.vocab)->required();
  match->add_option("--vectors", ma.vectors)->required();
  match->add_option("--out", ma.out)->required();
  match->add_option("--strip-marker", ma.strip_marker)->check(CLI::IsMember({"sp", "bpe", "none"}));
  match->add_flag("--lowercase", ma.lowercase);
  match->add_option("--max-matches", ma.max_matches);

  TrainArgs ta;
  CLI::App* train = app.add_subcommand("train", "train the set-to-coordinate hypernetwork");
  train->add_option("--matches", ta.matches)->required();
  train->add_option("--vectors", ta.vectors)->required();
  train->add_option("--coords", ta.coords)->required();
  train->add_option("--config", ta.config_path);
  train->add_option("--out-params", ta.out_params)->required();
  train->add_option("--curve", ta.curve);
  train->add_option("--seed", ta.seed)->each([&](const std::string&) { ta.seed_set = true; });

  InitArgs ia;
  CLI::App* init = app.add_subcommand("init", "assemble the target coordinate matrix");
  init->add_option("--strategy", ia.strategy)->check(CLI::IsMember({"hyper", "ofa", "random"}));
  init->add_option("--source-vocab", ia.source_vocab)->required();
  init->add_option("--target-vocab", ia.target_vocab)->required();
  init->add_option("--coords", ia.coords)->required();
  init->add_option("--primitive", ia.primitive);
  init->add_option("--matches", ia.matches, "match table over the target vocabulary")->required();
  init->add_option("--source-matches", ia.source_matches,
                   "match table over the source vocabulary (ofa strategy)");
  init->add_option("--vectors", ia.vectors)->required();
  init->add_option("--hypernet-params", ia.hypernet_params);
  init->add_option("--k", ia.k);
  init->add_option("--temp", ia.temp);
  init->add_option("--seed", ia.seed);
  init->add_option("--out-coords", ia.out_coords)->required();
  init->add_option("--out-report", ia.out_report)->required();
  init->add_option("--emit-full", ia.emit_full);
  init->add_option("--max-context", ia.max_context);

  CLI::App* bench = app.add_subcommand("bench", "synthetic benchmark operations");
  bench->require_subcommand(1);
  std::string bench_config;
  CLI::App* bgen = bench->add_subcommand("generate", "generate a synthetic benchmark");
  bgen->add_option("--config", bench_config)->required();
  std::string bench_out_dir;
  bgen->add_option("--out-dir", bench_out_dir, "overrides out_dir from the config file");
  CLI::App* brun = bench->add_subcommand("run", "run the full pipeline on a benchmark");
  std::string run_config;
  brun->add_option("--config", run_config)->required();
  CLI::App* bcmp = bench->add_subcommand("compare", "run every strategy on one benchmark");
  std::string cmp_config;
  bcmp->add_option("--config", cmp_config)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (factorize->parsed()) return run_factorize(fa);
    if (match->parsed()) return run_match(ma);
    if (train->parsed()) return run_train(ta);
    if (init->parsed()) return run_init(ia);
    if (bgen->parsed()) {
      const std::string config_text = read_text_file(bench_config);
      BenchmarkConfig config = benchmark_config_from_json(config_text);
      std::string out_dir = bench_out_dir;
      if (out_dir.empty()) out_dir = nlohmann::json::parse(config_text).value("out_dir", "");
      if (out_dir.empty())
        throw std::runtime_error("no output directory: set out_dir in the config or --out-dir");
      const SyntheticBenchmark b = generate_benchmark(config);
      save_benchmark(b, out_dir);
      std::printf("benchmark written to %s: %zu source / %zu target tokens, %zu words\n",
                  out_dir.c_str(), b.source_vocab.size(), b.target_vocab.size(), b.store.size());
      return 0;
    }
    if (brun->parsed()) {
      const PipelineConfig config = pipeline_config_from_json(read_text_file(run_config));
      const PipelineResult result = run_pipeline(config);
      std::printf("pipeline complete: %zu artifacts, config %s\n", result.artifacts.size(),
                  result.config_hash.c_str());
      for (const auto& [metric, value] : result.metrics)
        std::printf("  %s = %.6g\n", metric.c_str(), value);
      return 0;
    }
    if (bcmp->parsed()) {
      const PipelineConfig config = pipeline_config_from_json(read_text_file(cmp_config));
      const auto results = compare_strategies(
          config, {InitStrategy::Hyper, InitStrategy::Ofa, InitStrategy::Random});
      for (const auto& [name, res] : results) {
        std::printf("%s:\n", name.c_str());
        for (const auto& [metric, value] : res.metrics)
          std::printf("  %s = %.6g\n", metric.c_str(), value);
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
