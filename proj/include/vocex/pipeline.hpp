#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "vocex/eval.hpp"
#include "vocex/hypernet.hpp"
#include "vocex/initializer.hpp"
#include "vocex/matching.hpp"

namespace vocex {

class PipelineError : public std::runtime_error {
 public:
  PipelineError(const std::string& stage, const std::string& what)
      : std::runtime_error("stage " + stage + ": " + what), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct PipelineConfig {
  std::string benchmark_dir;
  std::string out_dir;
  InitStrategy strategy = InitStrategy::Hyper;
  std::size_t rank = 32;
  NormalizationConfig match;
  TrainingConfig training;
  std::size_t ofa_k = 10;
  double ofa_temp = 0.1;
  std::size_t retrieval_k = 10;
  std::uint64_t seed = 0;  // master seed; training/init streams derive from it
};

struct ArtifactEntry {
  std::string name;
  std::string relpath;
  std::string hash;  // fnv1a64 of the file bytes
};

struct PipelineResult {
  std::vector<ArtifactEntry> artifacts;
  std::map<std::string, double> metrics;
  std::string config_hash;
  std::string manifest_path;
};

// factorize -> match -> train -> init -> evaluate over a generated benchmark
// directory. Every artifact lands in config.out_dir; the manifest stores
// paths relative to it, so identical (config, seed) runs into different
// directories produce byte-identical manifests.
PipelineResult run_pipeline(const PipelineConfig& config);

// Runs init + evaluation once per strategy on the shared benchmark and seed,
// writing per-strategy artifacts under <out_dir>/<strategy>/ and a combined
// compare.csv.
std::map<std::string, PipelineResult> compare_strategies(
    const PipelineConfig& base, const std::vector<InitStrategy>& strategies);

// JSON codecs for the config files consumed by the CLI.
PipelineConfig pipeline_config_from_json(const std::string& json_text);
std::string pipeline_config_to_json(const PipelineConfig& config);
BenchmarkConfig benchmark_config_from_json(const std::string& json_text);
TrainingConfig training_config_from_json(const std::string& json_text);

std::string read_text_file(const std::string& path);

}  // namespace vocex
