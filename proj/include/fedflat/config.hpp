#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedflat/data.hpp"
#include "fedflat/federation.hpp"
#include "fedflat/model.hpp"

namespace fedflat {

struct DatasetConfig {
  enum class Kind { synthetic, cifar10, cifar100 };
  Kind kind = Kind::synthetic;
  SynthSpec synth;
  std::size_t test_per_class = 100;
  std::vector<std::filesystem::path> train_files;
  std::vector<std::filesystem::path> test_files;
  bool normalize = true;  // image datasets: per-channel normalization
};

struct ModelConfig {
  enum class Kind { mlp, lenet };
  Kind kind = Kind::mlp;
  std::vector<std::size_t> hidden;
};

struct ProbeConfig {
  std::size_t every = 0;  // 0 disables the lambda_max probe
  std::size_t batch = 1024;
  std::size_t iters = 20;
  double tol = 1e-4;
  bool per_client = false;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/experiment";
  DatasetConfig dataset;
  PartitionSpec partition;
  ModelConfig model;
  FedConfig fed;
  ProbeConfig probe;
  std::size_t eval_every = 1;
  std::size_t last_k = 100;
  std::size_t checkpoint_every = 100;
  /// Verbatim config text, written to the run directory.
  std::string source_text;
};

/// Parses the YAML experiment description. Unknown keys, missing required
/// keys and out-of-range values raise ConfigError with the file, line, and
/// dotted key name.
ExperimentConfig parse_config(const std::filesystem::path& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "<config>");

ModelSpec build_model_spec(const ExperimentConfig& cfg, const Shape& sample_shape);

}  // namespace fedflat
