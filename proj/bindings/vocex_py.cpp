#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "vocex/corpus_io.hpp"
#include "vocex/eval.hpp"
#include "vocex/hypernet.hpp"
#include "vocex/initializer.hpp"
#include "vocex/matching.hpp"
#include "vocex/pipeline.hpp"
#include "vocex/svd.hpp"

namespace py = pybind11;
using namespace vocex;

namespace {

Matrix matrix_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d float64 array");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + m.data.size(), m.data.begin());
  return m;
}

py::array_t<double> array_from_matrix(const Matrix& m) {
  py::array_t<double> out({m.rows, m.cols});
  std::copy(m.data.begin(), m.data.end(), out.mutable_data());
  return out;
}

Batch batch_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  const Matrix m = matrix_from_array(a);
  Batch b(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    b[i].assign(m.row_ptr(i), m.row_ptr(i) + m.cols);
  return b;
}

NormalizationConfig normalization_from_kwargs(const std::string& strip_marker, bool lowercase,
                                              std::size_t max_matches) {
  NormalizationConfig c;
  c.strip_marker = marker_style_from_name(strip_marker);
  c.lowercase = lowercase;
  c.max_matches = max_matches;
  return c;
}

}  // namespace

PYBIND11_MODULE(_vocex, m) {
  m.doc() = "Embedding initialization toolkit for expanded vocabularies";

  py::register_exception<IoError>(m, "IoError");
  py::register_exception<NonFiniteError>(m, "NonFiniteError");
  py::register_exception<PipelineError>(m, "PipelineError");

  py::class_<Vocabulary>(m, "Vocabulary")
      .def(py::init<std::vector<std::string>>(), py::arg("tokens"))
      .def("__len__", &Vocabulary::size)
      .def("token", &Vocabulary::token, py::arg("id"))
      .def("id_of",
           [](const Vocabulary& v, const std::string& token) -> py::object {
             const auto id = v.id_of(token);
             return id ? py::cast(*id) : py::none();
           })
      .def_property_readonly("tokens", &Vocabulary::tokens);

  py::class_<WordVectorStore>(m, "WordVectorStore")
      .def(py::init([](std::vector<std::string> words,
                       py::array_t<double, py::array::c_style | py::array::forcecast> vectors) {
             return WordVectorStore(std::move(words), matrix_from_array(vectors));
           }),
           py::arg("words"), py::arg("vectors"))
      .def("__len__", &WordVectorStore::size)
      .def_property_readonly("dim", &WordVectorStore::dim)
      .def("word", &WordVectorStore::word, py::arg("id"))
      .def_property_readonly("words", &WordVectorStore::words)
      .def_property_readonly("vectors",
                             [](const WordVectorStore& s) { return array_from_matrix(s.vectors()); });

  m.def("load_vocab", &load_vocab, py::arg("path"));
  m.def("save_vocab", &save_vocab, py::arg("vocab"), py::arg("path"));
  m.def("load_word_vectors", &load_word_vectors, py::arg("path"));
  m.def("save_word_vectors", &save_word_vectors, py::arg("store"), py::arg("path"));
  m.def("load_matrix", [](const std::string& path) { return array_from_matrix(load_matrix(path)); },
        py::arg("path"));
  m.def("save_matrix",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> a,
           const std::string& path) { save_matrix(matrix_from_array(a), path); },
        py::arg("matrix"), py::arg("path"));

  m.def("truncated_svd",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> e, std::size_t rank,
           std::uint64_t seed) {
          const Factorization fac = truncated_svd(matrix_from_array(e), rank, seed);
          py::array_t<double> sigma(fac.sigma.size());
          std::copy(fac.sigma.begin(), fac.sigma.end(), sigma.mutable_data());
          return py::make_tuple(array_from_matrix(fac.f), array_from_matrix(fac.p), sigma);
        },
        py::arg("embeddings"), py::arg("rank"), py::arg("seed") = 0,
        "Returns (F, P, sigma) with E ~= F @ P and P row-orthonormal.");
  m.def("oracle_svd_small",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> e) {
          const SvdResult svd = oracle_svd_small(matrix_from_array(e));
          py::array_t<double> sigma(svd.sigma.size());
          std::copy(svd.sigma.begin(), svd.sigma.end(), sigma.mutable_data());
          return py::make_tuple(array_from_matrix(svd.u), sigma, array_from_matrix(svd.v));
        },
        py::arg("matrix"), "Exhaustive Jacobi SVD for matrices up to 64x64 (test oracle).");

  py::class_<NormalizationConfig>(m, "NormalizationConfig")
      .def(py::init(&normalization_from_kwargs), py::arg("strip_marker") = "none",
           py::arg("lowercase") = false, py::arg("max_matches") = 256)
      .def_property(
          "strip_marker",
          [](const NormalizationConfig& c) { return std::string(marker_style_name(c.strip_marker)); },
          [](NormalizationConfig& c, const std::string& v) {
            c.strip_marker = marker_style_from_name(v);
          })
      .def_readwrite("lowercase", &NormalizationConfig::lowercase)
      .def_readwrite("max_matches", &NormalizationConfig::max_matches);

  py::class_<MatchTable>(m, "MatchTable")
      .def("__len__", &MatchTable::size)
      .def_readonly("entries", &MatchTable::entries)
      .def_readonly("vocab_id", &MatchTable::vocab_id)
      .def_readonly("store_id", &MatchTable::store_id);

  m.def("normalize_token", &normalize_token, py::arg("token"), py::arg("config"));
  m.def("build_match_table", &build_match_table, py::arg("vocab"), py::arg("store"),
        py::arg("config") = NormalizationConfig{});
  m.def("match_stats", [](const MatchTable& table) {
    const MatchStats stats = match_stats(table);
    py::dict d;
    d["matched"] = stats.matched;
    d["unmatched"] = stats.unmatched;
    py::dict hist;
    for (const auto& [size, count] : stats.size_histogram) hist[py::cast(size)] = count;
    d["size_histogram"] = hist;
    return d;
  });
  m.def("save_match_table", &save_match_table, py::arg("table"), py::arg("vocab"), py::arg("path"));
  m.def("load_match_table", &load_match_table, py::arg("path"));

  py::class_<TrainingExample>(m, "TrainingExample")
      .def(py::init([](py::array_t<double, py::array::c_style | py::array::forcecast> inputs,
                       py::array_t<double, py::array::c_style | py::array::forcecast> target) {
             TrainingExample ex;
             const Matrix in = matrix_from_array(inputs);
             for (std::size_t t = 0; t < in.rows; ++t)
               ex.inputs.emplace_back(in.row_ptr(t), in.row_ptr(t) + in.cols);
             if (target.ndim() != 1) throw std::invalid_argument("target must be 1-d");
             ex.target.assign(target.data(), target.data() + target.shape(0));
             return ex;
           }),
           py::arg("inputs"), py::arg("target"))
      .def_property_readonly("inputs",
                             [](const TrainingExample& ex) {
                               Matrix m(ex.inputs.size(), ex.inputs[0].size());
                               for (std::size_t t = 0; t < ex.inputs.size(); ++t)
                                 std::copy(ex.inputs[t].begin(), ex.inputs[t].end(), m.row_ptr(t));
                               return array_from_matrix(m);
                             })
      .def_property_readonly("target", [](const TrainingExample& ex) {
        py::array_t<double> t(ex.target.size());
        std::copy(ex.target.begin(), ex.target.end(), t.mutable_data());
        return t;
      });

  py::class_<TrainingConfig>(m, "TrainingConfig")
      .def(py::init<>())
      .def_readwrite("lambda_weight", &TrainingConfig::lambda_weight)
      .def_readwrite("tau", &TrainingConfig::tau)
      .def_readwrite("learning_rate", &TrainingConfig::learning_rate)
      .def_readwrite("lr_decay_factor", &TrainingConfig::lr_decay_factor)
      .def_readwrite("lr_decay_interval", &TrainingConfig::lr_decay_interval)
      .def_readwrite("dropout", &TrainingConfig::dropout)
      .def_readwrite("shuffle_augmentation", &TrainingConfig::shuffle_augmentation)
      .def_readwrite("subset_augmentation", &TrainingConfig::subset_augmentation)
      .def_readwrite("max_context", &TrainingConfig::max_context)
      .def_readwrite("batch_size", &TrainingConfig::batch_size)
      .def_readwrite("epochs", &TrainingConfig::epochs)
      .def_readwrite("seed", &TrainingConfig::seed)
      .def_readwrite("validation_fraction", &TrainingConfig::validation_fraction)
      .def_readwrite("patience", &TrainingConfig::patience)
      .def_readwrite("min_delta", &TrainingConfig::min_delta)
      .def_readwrite("hidden_dim", &TrainingConfig::hidden_dim)
      .def_readwrite("num_layers", &TrainingConfig::num_layers);

  py::class_<HypernetParams>(m, "HypernetParams")
      .def_static("create", &HypernetParams::create, py::arg("input_dim"), py::arg("hidden_dim"),
                  py::arg("num_layers"), py::arg("output_dim"), py::arg("dropout"),
                  py::arg("seed"))
      .def_property_readonly("parameter_count", &HypernetParams::parameter_count)
      .def_readonly("input_dim", &HypernetParams::input_dim)
      .def_readonly("hidden_dim", &HypernetParams::hidden_dim)
      .def_readonly("num_layers", &HypernetParams::num_layers)
      .def_readonly("output_dim", &HypernetParams::output_dim)
      .def_readonly("dropout", &HypernetParams::dropout);

  m.def("hypernet_parameter_count", &hypernet_parameter_count, py::arg("input_dim"),
        py::arg("hidden_dim"), py::arg("num_layers"), py::arg("output_dim"));

  py::class_<EpochStats>(m, "EpochStats")
      .def_readonly("epoch", &EpochStats::epoch)
      .def_readonly("train_loss", &EpochStats::train_loss)
      .def_readonly("val_loss", &EpochStats::val_loss)
      .def_readonly("val_cosine", &EpochStats::val_cosine);

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("params", &TrainResult::params)
      .def_readonly("curve", &TrainResult::curve)
      .def_readonly("diverged", &TrainResult::diverged)
      .def_readonly("best_epoch", &TrainResult::best_epoch)
      .def_readonly("initial_val_cosine", &TrainResult::initial_val_cosine);

  m.def("contrastive_loss",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> targets,
           py::array_t<double, py::array::c_style | py::array::forcecast> predictions,
           double tau) {
          return contrastive_loss(batch_from_array(targets), batch_from_array(predictions), tau);
        },
        py::arg("targets"), py::arg("predictions"), py::arg("tau"));
  m.def("l1_loss",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> targets,
           py::array_t<double, py::array::c_style | py::array::forcecast> predictions) {
          return l1_loss(batch_from_array(targets), batch_from_array(predictions));
        },
        py::arg("targets"), py::arg("predictions"));
  m.def("combined_loss",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> targets,
           py::array_t<double, py::array::c_style | py::array::forcecast> predictions,
           double lambda_weight, double tau) {
          return combined_loss(batch_from_array(targets), batch_from_array(predictions),
                               lambda_weight, tau);
        },
        py::arg("targets"), py::arg("predictions"), py::arg("lambda_weight"), py::arg("tau"));

  m.def("forward",
        [](const HypernetParams& params, const std::vector<py::array_t<double>>& batch,
           bool train_mode, std::uint64_t seed) {
          std::vector<std::vector<std::vector<double>>> inputs;
          for (const auto& a : batch) {
            const Matrix in = matrix_from_array(
                py::array_t<double, py::array::c_style | py::array::forcecast>(a));
            std::vector<std::vector<double>> seq;
            for (std::size_t t = 0; t < in.rows; ++t)
              seq.emplace_back(in.row_ptr(t), in.row_ptr(t) + in.cols);
            inputs.push_back(std::move(seq));
          }
          const Batch out = hypernet_forward(params, inputs, train_mode, seed);
          Matrix result(out.size(), out.empty() ? 0 : out[0].size());
          for (std::size_t i = 0; i < out.size(); ++i)
            std::copy(out[i].begin(), out[i].end(), result.row_ptr(i));
          return array_from_matrix(result);
        },
        py::arg("params"), py::arg("batch"), py::arg("train_mode") = false, py::arg("seed") = 0);

  m.def("augment_examples", &augment_examples, py::arg("examples"), py::arg("epoch_seed"),
        py::arg("shuffle") = true, py::arg("subset") = true);
  m.def("build_training_set",
        [](const MatchTable& table, const WordVectorStore& store,
           py::array_t<double, py::array::c_style | py::array::forcecast> coords,
           std::size_t max_context) {
          return build_training_set(table, store, matrix_from_array(coords), max_context);
        },
        py::arg("table"), py::arg("store"), py::arg("coords"), py::arg("max_context") = 256);
  m.def("train", &train_hypernet, py::arg("dataset"), py::arg("config"),
        py::call_guard<py::gil_scoped_release>());
  m.def("predict",
        [](const HypernetParams& params, const MatchTable& table, const WordVectorStore& store,
           const std::vector<std::size_t>& token_ids, std::size_t max_context) {
          return array_from_matrix(predict_coordinates(params, table, store, token_ids, max_context));
        },
        py::arg("params"), py::arg("table"), py::arg("store"), py::arg("token_ids"),
        py::arg("max_context") = 256);
  m.def("save_hypernet_params", &save_hypernet_params, py::arg("params"), py::arg("path"));
  m.def("load_hypernet_params", &load_hypernet_params, py::arg("path"));

  m.def("heldout_cosine",
        [](const HypernetParams& params, const std::vector<TrainingExample>& heldout) {
          return heldout_cosine_eval(params, heldout).value;
        },
        py::arg("params"), py::arg("heldout"));
  m.def("topk_retrieval_accuracy",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> queries,
           py::array_t<double, py::array::c_style | py::array::forcecast> candidates,
           const std::vector<std::size_t>& gold, std::size_t k) {
          return topk_retrieval_accuracy(matrix_from_array(queries), matrix_from_array(candidates),
                                         gold, k)
              .value;
        },
        py::arg("queries"), py::arg("candidates"), py::arg("gold"), py::arg("k"));

  m.def("generate_benchmark",
        [](const std::string& config_json, const std::string& out_dir) {
          const SyntheticBenchmark bench =
              generate_benchmark(benchmark_config_from_json(config_json));
          save_benchmark(bench, out_dir);
          py::dict d;
          d["n_source"] = bench.source_vocab.size();
          d["n_target"] = bench.target_vocab.size();
          d["n_words"] = bench.store.size();
          return d;
        },
        py::arg("config_json"), py::arg("out_dir"),
        "Generates a synthetic benchmark directory from a JSON config string.");
  m.def("run_pipeline",
        [](const std::string& config_json) {
          const PipelineResult result = run_pipeline(pipeline_config_from_json(config_json));
          py::dict d;
          py::dict metrics;
          for (const auto& [k, v] : result.metrics) metrics[py::cast(k)] = v;
          d["metrics"] = metrics;
          py::list artifacts;
          for (const auto& a : result.artifacts) {
            py::dict e;
            e["name"] = a.name;
            e["path"] = a.relpath;
            e["hash"] = a.hash;
            artifacts.append(e);
          }
          d["artifacts"] = artifacts;
          d["config_hash"] = result.config_hash;
          d["manifest"] = result.manifest_path;
          return d;
        },
        py::arg("config_json"),
        "Runs factorize -> match -> train -> init -> evaluate from a JSON config string.");

  py::class_<InitPlan>(m, "InitPlan")
      .def_readonly("overlap", &InitPlan::overlap)
      .def_readonly("predicted", &InitPlan::predicted)
      .def_readonly("random_set", &InitPlan::random_set)
      .def_readonly("target_size", &InitPlan::target_size);

  m.def("plan_init",
        [](const Vocabulary& source, const Vocabulary& target, const MatchTable& matches,
           const std::string& strategy) {
          return plan_init(source, target, matches, init_strategy_from_name(strategy));
        },
        py::arg("source_vocab"), py::arg("target_vocab"), py::arg("target_matches"),
        py::arg("strategy"));
}
