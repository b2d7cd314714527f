#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedflat/config.hpp"

namespace fedflat {

/// Everything a run needs besides the config: datasets, client shards,
/// architecture, normalization statistics.
struct ExperimentData {
  Dataset train;
  Dataset test;
  std::vector<ClientShard> shards;
  ModelSpec model;
  ChannelStats normalization;
};

ExperimentData load_experiment_data(const ExperimentConfig& cfg);

/// Relative output directories resolve under $FEDFLAT_OUTPUT_ROOT when set.
std::filesystem::path resolve_output_dir(const std::filesystem::path& dir);

struct RunOptions {
  bool resume = false;
  std::ostream* log = nullptr;
};

struct ExperimentReport {
  std::string name;
  std::size_t rounds = 0;
  std::size_t last_k = 0;
  /// Mean headline accuracy (SWA line when active) over the last min(k, T) rounds.
  double last_k_mean_accuracy = 0.0;
  double last_k_mean_sgd = 0.0;
  std::optional<double> last_k_mean_swa;
  double final_accuracy_sgd = 0.0;
  std::optional<double> final_accuracy_swa;
  std::filesystem::path run_dir;
};

nlohmann::json to_json(const ExperimentReport& report);
ExperimentReport report_from_json(const nlohmann::json& doc);

enum class Line { headline, sgd, swa };

/// Mean accuracy of one line over the evaluated rows among the last k rounds;
/// NaN when none of them carries a value.
double last_k_mean(std::span<const RoundMetrics> history, std::size_t k, Line line = Line::headline);

inline constexpr const char* kMetricsHeader =
    "round,lr,mean_client_train_loss,test_acc_sgd_line,test_acc_swa_line,lambda_max";
std::string metrics_row(const RoundMetrics& m);
RoundMetrics parse_metrics_row(const std::string& line);

/// Runs every round, writing config.yaml, metrics.csv, checkpoints/ and
/// report.json into the run directory. With resume set, restarts from
/// checkpoints/last.ckpt and reproduces the remaining rounds exactly.
ExperimentReport run_experiment(const ExperimentConfig& cfg, const RunOptions& options = {});

struct ComparisonRow {
  std::string name;
  double value = 0.0;
  double absolute = 0.0;
  std::optional<double> relative;  // percent; nullopt when the baseline is 0
};

/// First report is the baseline. relative = 100 (a - b) / b.
std::vector<ComparisonRow> compare_values(std::span<const std::pair<std::string, double>> values);
std::vector<ComparisonRow> compare_runs(std::span<const ExperimentReport> reports);
std::string format_comparison(std::span<const ComparisonRow> rows);

}  // namespace fedflat
