#include "vocex/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "vocex/hash.hpp"
#include "vocex/rng.hpp"
#include "vocex/svd.hpp"

namespace vocex {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json training_config_to_json_obj(const TrainingConfig& t) {
  json j;
  j["lambda"] = t.lambda_weight;
  j["tau"] = t.tau;
  j["learning_rate"] = t.learning_rate;
  j["lr_decay_factor"] = t.lr_decay_factor;
  j["lr_decay_interval"] = t.lr_decay_interval;
  j["dropout"] = t.dropout;
  j["shuffle_augmentation"] = t.shuffle_augmentation;
  j["subset_augmentation"] = t.subset_augmentation;
  j["max_context"] = t.max_context;
  j["batch_size"] = t.batch_size;
  j["epochs"] = t.epochs;
  j["seed"] = t.seed;
  j["validation_fraction"] = t.validation_fraction;
  j["patience"] = t.patience;
  j["min_delta"] = t.min_delta;
  j["hidden_dim"] = t.hidden_dim;
  j["num_layers"] = t.num_layers;
  return j;
}

TrainingConfig training_config_from_json_obj(const json& j) {
  TrainingConfig t;
  t.lambda_weight = j.value("lambda", t.lambda_weight);
  t.tau = j.value("tau", t.tau);
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  t.lr_decay_factor = j.value("lr_decay_factor", t.lr_decay_factor);
  t.lr_decay_interval = j.value("lr_decay_interval", t.lr_decay_interval);
  t.dropout = j.value("dropout", t.dropout);
  t.shuffle_augmentation = j.value("shuffle_augmentation", t.shuffle_augmentation);
  t.subset_augmentation = j.value("subset_augmentation", t.subset_augmentation);
  t.max_context = j.value("max_context", t.max_context);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.epochs = j.value("epochs", t.epochs);
  t.seed = j.value("seed", t.seed);
  t.validation_fraction = j.value("validation_fraction", t.validation_fraction);
  t.patience = j.value("patience", t.patience);
  t.min_delta = j.value("min_delta", t.min_delta);
  t.hidden_dim = j.value("hidden_dim", t.hidden_dim);
  t.num_layers = j.value("num_layers", t.num_layers);
  return t;
}

json match_config_to_json_obj(const NormalizationConfig& m) {
  json j;
  j["strip_marker"] = marker_style_name(m.strip_marker);
  j["lowercase"] = m.lowercase;
  j["max_matches"] = m.max_matches;
  return j;
}

NormalizationConfig match_config_from_json_obj(const json& j) {
  NormalizationConfig m;
  m.strip_marker = marker_style_from_name(j.value("strip_marker", std::string("none")));
  m.lowercase = j.value("lowercase", false);
  m.max_matches = j.value("max_matches", std::size_t{256});
  return m;
}

struct ManifestWriter {
  std::vector<ArtifactEntry> entries;
  fs::path out_dir;

  void add(const std::string& name, const std::string& relpath) {
    entries.push_back({name, relpath, fnv1a64_file_hex((out_dir / relpath).string())});
  }

  void write(const std::string& config_hash, std::uint64_t seed) const {
    std::ofstream out(out_dir / "manifest.csv", std::ios::binary);
    if (!out) throw IoError((out_dir / "manifest.csv").string() + ": cannot open for writing");
    out << "# config_hash=" << config_hash << "\n# seed=" << seed << "\n";
    out << "artifact,path,fnv64\n";
    for (const auto& e : entries) out << e.name << ',' << e.relpath << ',' << e.hash << '\n';
  }
};

// Union of source and target tokens, source order first. Matching runs once
// over this vocabulary; per-vocabulary views are sliced out of the result.
struct UnionVocab {
  Vocabulary vocab;
  std::vector<std::size_t> source_ids;  // source token -> union id (identity)
  std::vector<std::size_t> target_ids;  // target token -> union id
};

UnionVocab make_union_vocab(const Vocabulary& source, const Vocabulary& target) {
  std::vector<std::string> tokens = source.tokens();
  UnionVocab u;
  u.source_ids.resize(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) u.source_ids[i] = i;
  u.target_ids.resize(target.size());
  for (std::size_t j = 0; j < target.size(); ++j) {
    if (auto id = source.id_of(target.token(j))) {
      u.target_ids[j] = *id;
    } else {
      u.target_ids[j] = tokens.size();
      tokens.push_back(target.token(j));
    }
  }
  u.vocab = Vocabulary(std::move(tokens));
  return u;
}

MatchTable slice_table(const MatchTable& union_table, const std::vector<std::size_t>& ids) {
  MatchTable out;
  out.vocab_id = union_table.vocab_id;
  out.store_id = union_table.store_id;
  out.config = union_table.config;
  out.entries.reserve(ids.size());
  for (std::size_t id : ids) out.entries.push_back(union_table.entries.at(id));
  return out;
}

double mean_row_cosine(const Matrix& a, const Matrix& b, const std::vector<std::size_t>& rows) {
  if (rows.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (std::size_t r : rows) {
    std::vector<double> x(a.row_ptr(r), a.row_ptr(r) + a.cols);
    std::vector<double> y(b.row_ptr(r), b.row_ptr(r) + b.cols);
    sum += cosine_similarity(x, y);
  }
  return sum / static_cast<double>(rows.size());
}

}  // namespace

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TrainingConfig training_config_from_json(const std::string& json_text) {
  return training_config_from_json_obj(json::parse(json_text));
}

BenchmarkConfig benchmark_config_from_json(const std::string& json_text) {
  const json j = json::parse(json_text);
  BenchmarkConfig c;
  c.n_source = j.value("n_source", c.n_source);
  c.n_target = j.value("n_target", c.n_target);
  c.overlap = j.value("overlap", c.overlap);
  c.word_dim = j.value("word_dim", c.word_dim);
  c.coord_dim = j.value("coord_dim", c.coord_dim);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.min_words_per_token = j.value("min_words_per_token", c.min_words_per_token);
  c.max_words_per_token = j.value("max_words_per_token", c.max_words_per_token);
  c.noise = j.value("noise", c.noise);
  c.nonlinear = j.value("nonlinear", c.nonlinear);
  c.nonlinear_scale = j.value("nonlinear_scale", c.nonlinear_scale);
  c.n_sentence_pairs = j.value("n_sentence_pairs", c.n_sentence_pairs);
  c.min_sentence_len = j.value("min_sentence_len", c.min_sentence_len);
  c.max_sentence_len = j.value("max_sentence_len", c.max_sentence_len);
  c.seed = j.value("seed", c.seed);
  return c;
}

PipelineConfig pipeline_config_from_json(const std::string& json_text) {
  const json j = json::parse(json_text);
  PipelineConfig c;
  c.benchmark_dir = j.value("benchmark_dir", c.benchmark_dir);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.strategy = init_strategy_from_name(j.value("strategy", std::string("hyper")));
  c.rank = j.value("rank", c.rank);
  if (j.contains("match")) c.match = match_config_from_json_obj(j.at("match"));
  if (j.contains("training")) c.training = training_config_from_json_obj(j.at("training"));
  c.ofa_k = j.value("ofa_k", c.ofa_k);
  c.ofa_temp = j.value("ofa_temp", c.ofa_temp);
  c.retrieval_k = j.value("retrieval_k", c.retrieval_k);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::string pipeline_config_to_json(const PipelineConfig& c) {
  json j;
  j["benchmark_dir"] = c.benchmark_dir;
  j["out_dir"] = c.out_dir;
  j["strategy"] = init_strategy_name(c.strategy);
  j["rank"] = c.rank;
  j["match"] = match_config_to_json_obj(c.match);
  j["training"] = training_config_to_json_obj(c.training);
  j["ofa_k"] = c.ofa_k;
  j["ofa_temp"] = c.ofa_temp;
  j["retrieval_k"] = c.retrieval_k;
  j["seed"] = c.seed;
  return j.dump(2);
}

PipelineResult run_pipeline(const PipelineConfig& config) {
  PipelineResult result;
  // The hash covers everything that determines the artifacts except the
  // output location.
  PipelineConfig hashable = config;
  hashable.out_dir.clear();
  result.config_hash = fnv1a64_hex(pipeline_config_to_json(hashable));

  fs::create_directories(config.out_dir);
  ManifestWriter manifest;
  manifest.out_dir = config.out_dir;
  const auto out_path = [&](const char* rel) { return (fs::path(config.out_dir) / rel).string(); };
  const auto bench_path = [&](const char* rel) {
    return (fs::path(config.benchmark_dir) / rel).string();
  };
  const auto fail = [&](const char* stage, const std::exception& e) -> PipelineError {
    manifest.write(result.config_hash, config.seed);  // partial manifest
    return PipelineError(stage, e.what());
  };

  Vocabulary source_vocab, target_vocab;
  WordVectorStore store;
  Matrix e_source;
  Matrix e_target_true;
  bool have_ground_truth = false;
  std::vector<std::vector<std::size_t>> source_sentences, target_sentences;
  try {
    source_vocab = load_vocab(bench_path("source_vocab.txt"));
    target_vocab = load_vocab(bench_path("target_vocab.txt"));
    store = load_word_vectors(bench_path("word_vectors.vec"));
    e_source = load_matrix(bench_path("source_embeddings.vxm"));
    if (fs::exists(bench_path("target_embeddings_true.vxm"))) {
      e_target_true = load_matrix(bench_path("target_embeddings_true.vxm"));
      have_ground_truth = true;
    }
    if (fs::exists(bench_path("sentences_source.csv"))) {
      source_sentences = load_sentences(bench_path("sentences_source.csv"));
      target_sentences = load_sentences(bench_path("sentences_target.csv"));
    }
    if (e_source.rows != source_vocab.size())
      throw IoError("source embedding rows do not match the source vocabulary");
  } catch (const std::exception& e) {
    throw fail("load", e);
  }

  Factorization fac;
  try {
    fac = truncated_svd(e_source, config.rank, config.seed);
    save_matrix(fac.f, out_path("f.vxm"));
    save_matrix(fac.p, out_path("p.vxm"));
    manifest.add("coordinates", "f.vxm");
    manifest.add("primitives", "p.vxm");
  } catch (const std::exception& e) {
    throw fail("factorize", e);
  }

  UnionVocab u;
  MatchTable union_table, source_table, target_table;
  try {
    u = make_union_vocab(source_vocab, target_vocab);
    union_table = build_match_table(u.vocab, store, config.match);
    save_match_table(union_table, u.vocab, out_path("matches.csv"));
    manifest.add("matches", "matches.csv");
    source_table = slice_table(union_table, u.source_ids);
    target_table = slice_table(union_table, u.target_ids);
  } catch (const std::exception& e) {
    throw fail("match", e);
  }

  HypernetParams params;
  bool trained = false;
  double final_val_cosine = std::numeric_limits<double>::quiet_NaN();
  double initial_val_cosine = std::numeric_limits<double>::quiet_NaN();
  if (config.strategy == InitStrategy::Hyper) {
    try {
      TrainingConfig tc = config.training;
      tc.seed = mix_seed(config.seed, 1001);
      const auto dataset = build_training_set(source_table, store, fac.f, tc.max_context);
      if (dataset.empty()) throw std::runtime_error("no source token has a non-empty match set");
      TrainResult tr = train_hypernet(dataset, tc);
      params = std::move(tr.params);
      trained = true;
      if (!tr.curve.empty()) final_val_cosine = tr.curve.back().val_cosine;
      initial_val_cosine = tr.initial_val_cosine;
      save_hypernet_params(params, out_path("params.vxt"));
      save_training_curve(tr.curve, out_path("curve.csv"));
      manifest.add("hypernet_params", "params.vxt");
      manifest.add("training_curve", "curve.csv");
    } catch (const std::exception& e) {
      throw fail("train", e);
    }
  }

  InitResult init_result;
  InitPlan plan;
  try {
    plan = plan_init(source_vocab, target_vocab, target_table, config.strategy);
    const InitRows copied = copy_overlap(plan, fac.f);
    InitRows predicted;
    predicted.rows = Matrix(0, fac.f.cols);
    if (config.strategy == InitStrategy::Hyper) {
      predicted = hyper_init(plan, params, target_table, store, config.training.max_context);
    } else if (config.strategy == InitStrategy::Ofa) {
      predicted = ofa_init(plan, fac.f, source_table, target_table, store, config.ofa_k,
                           config.ofa_temp);
    }
    InitRows random_rows = random_init(plan, fac.f, mix_seed(config.seed, 2002));
    init_result = assemble(plan, copied, predicted, random_rows, &fac.p, false);
    save_matrix(init_result.f_target, out_path("f_target.vxm"));
    save_init_report(init_result.report, target_vocab, out_path("report.csv"));
    manifest.add("target_coordinates", "f_target.vxm");
    manifest.add("init_report", "report.csv");
  } catch (const std::exception& e) {
    throw fail("init", e);
  }

  try {
    const Matrix e_target = matmul(init_result.f_target, fac.p);
    result.metrics["val_cosine"] = final_val_cosine;
    result.metrics["untrained_val_cosine"] = initial_val_cosine;
    result.metrics["copied"] = static_cast<double>(init_result.report.copied);
    result.metrics["predicted"] = static_cast<double>(init_result.report.predicted);
    result.metrics["random"] = static_cast<double>(init_result.report.random);

    if (have_ground_truth) {
      if (e_target_true.rows != target_vocab.size() || e_target_true.cols != e_target.cols)
        throw IoError("ground-truth target embeddings have the wrong shape");
      // The canonical comparison set is strategy-independent: non-overlap
      // tokens with at least one matched word.
      std::vector<std::size_t> eligible, non_overlap;
      std::vector<bool> is_overlap(target_vocab.size(), false);
      for (const auto& [tgt, src] : plan.overlap) is_overlap[tgt] = true;
      for (std::size_t j = 0; j < target_vocab.size(); ++j) {
        if (is_overlap[j]) continue;
        non_overlap.push_back(j);
        if (!target_table.entries[j].empty()) eligible.push_back(j);
      }
      result.metrics["gt_cosine_matched"] = mean_row_cosine(e_target, e_target_true, eligible);
      result.metrics["gt_cosine_nonoverlap"] =
          mean_row_cosine(e_target, e_target_true, non_overlap);
    }

    if (!target_sentences.empty() && have_ground_truth &&
        config.retrieval_k <= target_sentences.size()) {
      const Matrix query = sentence_representations(e_target, target_sentences);
      const Matrix truth = sentence_representations(e_target_true, target_sentences);
      std::vector<std::size_t> gold(target_sentences.size());
      std::iota(gold.begin(), gold.end(), 0);
      result.metrics["retrieval_self_static_mean"] =
          topk_retrieval_accuracy(query, truth, gold, config.retrieval_k).value;
      if (!source_sentences.empty()) {
        const Matrix src_reps = sentence_representations(e_source, source_sentences);
        result.metrics["retrieval_cross_static_mean"] =
            topk_retrieval_accuracy(src_reps, query, gold, config.retrieval_k).value;
      }
    }

    std::ofstream eval_out(out_path("eval.csv"), std::ios::binary);
    if (!eval_out) throw IoError(out_path("eval.csv") + ": cannot open for writing");
    eval_out << "metric,value,config_hash\n";
    for (const auto& [name, value] : result.metrics)
      eval_out << name << ',' << format_double(value) << ',' << result.config_hash << '\n';
    eval_out.close();
    manifest.add("evaluation", "eval.csv");
  } catch (const std::exception& e) {
    throw fail("evaluate", e);
  }

  manifest.write(result.config_hash, config.seed);
  result.artifacts = manifest.entries;
  result.manifest_path = out_path("manifest.csv");
  return result;
}

std::map<std::string, PipelineResult> compare_strategies(
    const PipelineConfig& base, const std::vector<InitStrategy>& strategies) {
  std::map<std::string, PipelineResult> results;
  for (InitStrategy s : strategies) {
    PipelineConfig cfg = base;
    cfg.strategy = s;
    cfg.out_dir = (fs::path(base.out_dir) / init_strategy_name(s)).string();
    results[init_strategy_name(s)] = run_pipeline(cfg);
  }
  fs::create_directories(base.out_dir);
  std::ofstream out(fs::path(base.out_dir) / "compare.csv", std::ios::binary);
  if (!out) throw IoError("compare.csv: cannot open for writing");
  out << "strategy,metric,value\n";
  for (const auto& [name, res] : results)
    for (const auto& [metric, value] : res.metrics)
      out << name << ',' << metric << ',' << format_double(value) << '\n';
  return results;
}

}  // namespace vocex
