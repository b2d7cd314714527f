#include "fedflat/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "fedflat/analysis.hpp"
#include "fedflat/checkpoint.hpp"
#include "fedflat/errors.hpp"
#include "fedflat/export.hpp"

namespace fedflat {

namespace fs = std::filesystem;

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
  ExperimentData data;
  const auto& ds = cfg.dataset;
  if (ds.kind == DatasetConfig::Kind::synthetic) {
    data.train = synth_classification(ds.synth, 0);
    SynthSpec test_spec = ds.synth;
    test_spec.per_class = ds.test_per_class;
    data.test = synth_classification(test_spec, 1);
  } else {
    const auto variant = ds.kind == DatasetConfig::Kind::cifar10 ? CifarVariant::cifar10 : CifarVariant::cifar100;
    std::vector<Dataset> parts;
    for (const auto& f : ds.train_files) parts.push_back(load_cifar_binary(f, variant));
    data.train = concat(parts);
    parts.clear();
    for (const auto& f : ds.test_files) parts.push_back(load_cifar_binary(f, variant));
    data.test = parts.empty() ? data.train : concat(parts);
    if (ds.normalize) data.normalization = channel_stats(data.train);
  }
  validate(data.train);
  validate(data.test);
  data.shards = dirichlet_partition(data.train, cfg.partition);
  data.model = build_model_spec(cfg, data.train.sample_shape());
  return data;
}

fs::path resolve_output_dir(const fs::path& dir) {
  if (dir.is_absolute()) return dir;
  if (const char* root = std::getenv("FEDFLAT_OUTPUT_ROOT"); root != nullptr && *root != '\0') {
    return fs::path(root) / dir;
  }
  return dir;
}

nlohmann::json to_json(const ExperimentReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"name", r.name},
          {"rounds", r.rounds},
          {"last_k", r.last_k},
          {"last_k_mean_accuracy", r.last_k_mean_accuracy},
          {"last_k_mean_sgd", r.last_k_mean_sgd},
          {"last_k_mean_swa", opt(r.last_k_mean_swa)},
          {"final_accuracy_sgd", r.final_accuracy_sgd},
          {"final_accuracy_swa", opt(r.final_accuracy_swa)},
          {"run_dir", r.run_dir.string()}};
}

ExperimentReport report_from_json(const nlohmann::json& doc) {
  try {
    ExperimentReport r;
    r.name = doc.at("name").get<std::string>();
    r.rounds = doc.at("rounds").get<std::size_t>();
    r.last_k = doc.at("last_k").get<std::size_t>();
    r.last_k_mean_accuracy = doc.at("last_k_mean_accuracy").get<double>();
    r.last_k_mean_sgd = doc.at("last_k_mean_sgd").get<double>();
    if (!doc.at("last_k_mean_swa").is_null()) r.last_k_mean_swa = doc.at("last_k_mean_swa").get<double>();
    r.final_accuracy_sgd = doc.at("final_accuracy_sgd").get<double>();
    if (!doc.at("final_accuracy_swa").is_null()) r.final_accuracy_swa = doc.at("final_accuracy_swa").get<double>();
    r.run_dir = doc.value("run_dir", "");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid report: ") + e.what(), 0);
  }
}

double last_k_mean(std::span<const RoundMetrics> history, std::size_t k, Line line) {
  if (history.empty()) return std::nan("");
  const std::size_t last = history.back().round;
  const std::size_t first = last > k ? last - k + 1 : 1;
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& m : history) {
    if (m.round < first) continue;
    const auto v = line == Line::headline ? m.headline() : line == Line::sgd ? m.test_acc_sgd : m.test_acc_swa;
    if (v) {
      sum += *v;
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : std::nan("");
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::optional<double> parse_opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

}  // namespace

std::string metrics_row(const RoundMetrics& m) {
  return std::to_string(m.round) + ',' + fmt(m.lr) + ',' + fmt(m.mean_client_train_loss) + ',' +
         fmt(m.test_acc_sgd) + ',' + fmt(m.test_acc_swa) + ',' + fmt(m.lambda_max);
}

RoundMetrics parse_metrics_row(const std::string& line) {
  std::vector<std::string> cols;
  std::string cell;
  std::istringstream ls(line);
  while (std::getline(ls, cell, ',')) cols.push_back(cell);
  if (!line.empty() && line.back() == ',') cols.emplace_back();
  if (cols.size() != 6) throw FormatError("metrics row has " + std::to_string(cols.size()) + " columns", 0);
  RoundMetrics m;
  m.round = std::stoul(cols[0]);
  m.lr = std::stod(cols[1]);
  m.mean_client_train_loss = std::stod(cols[2]);
  m.test_acc_sgd = parse_opt(cols[3]);
  m.test_acc_swa = parse_opt(cols[4]);
  m.lambda_max = parse_opt(cols[5]);
  return m;
}

namespace {

/// Keeps the header and rows with round <= up_to; returns the kept rows.
std::vector<std::string> truncate_csv(const fs::path& path, std::size_t up_to, const std::string& header) {
  std::vector<std::string> kept;
  std::ifstream in(path);
  if (!in) throw FormatError("resume: missing " + path.string(), 0);
  std::string line;
  std::getline(in, line);
  if (line != header) throw FormatError("resume: unexpected header in " + path.string(), 0);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto round = std::stoul(line.substr(0, line.find(',')));
    if (round <= up_to) kept.push_back(line);
  }
  return kept;
}

void log_line(std::ostream* log, const std::string& s) {
  if (log) *log << s << std::endl;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg, const RunOptions& options) {
  ExperimentData data = load_experiment_data(cfg);
  FedConfig fed = cfg.fed;
  fed.augment.normalization = data.normalization;
  validate(fed, data.shards.size());

  const fs::path run_dir = resolve_output_dir(cfg.output_dir);
  const fs::path ckpt_dir = run_dir / "checkpoints";
  const fs::path csv_path = run_dir / "metrics.csv";
  const fs::path client_csv_path = run_dir / "client_sharpness.csv";
  const std::string client_header = "round,client_id,lambda_max";
  fs::create_directories(ckpt_dir);

  ServerState server;
  std::vector<RoundMetrics> history;
  std::vector<std::string> client_rows;
  if (options.resume && fs::exists(ckpt_dir / "last.ckpt")) {
    server = load_checkpoint(ckpt_dir / "last.ckpt");
    if (!(server.theta.manifest() == *model_manifest(data.model))) {
      throw ConfigError("resume: checkpoint does not match the configured model");
    }
    for (const auto& row : truncate_csv(csv_path, server.round, kMetricsHeader)) {
      history.push_back(parse_metrics_row(row));
    }
    if (cfg.probe.per_client && fs::exists(client_csv_path)) {
      client_rows = truncate_csv(client_csv_path, server.round, client_header);
    }
    log_line(options.log, "resuming " + cfg.name + " at round " + std::to_string(server.round + 1));
  } else {
    server = make_server(init_params(data.model, cfg.seed));
  }

  {
    std::ofstream snap(run_dir / "config.yaml");
    snap << cfg.source_text;
  }
  std::ofstream csv(csv_path, std::ios::trunc);
  csv << kMetricsHeader << '\n';
  for (const auto& m : history) csv << metrics_row(m) << '\n';
  std::ofstream client_csv;
  if (cfg.probe.per_client) {
    client_csv.open(client_csv_path, std::ios::trunc);
    client_csv << client_header << '\n';
    for (const auto& row : client_rows) client_csv << row << '\n';
  }

  const Batch global_probe = probe_batch(data.train, cfg.probe.batch, cfg.seed);
  PowerIterationOptions probe_opts{.k = 1, .max_iters = cfg.probe.iters, .tol = cfg.probe.tol, .seed = cfg.seed};
  const FederatedTask task{data.model, data.train, data.shards, nullptr};
  const FederatedTask eval_task{data.model, data.train, data.shards, &data.test};
  const std::size_t log_every = std::max<std::size_t>(1, fed.rounds / 10);

  while (server.round < fed.rounds) {
    const std::size_t t = server.round + 1;
    const bool evaluate_now = t % cfg.eval_every == 0 || t == fed.rounds;
    const bool probe_now = cfg.probe.every > 0 && t % cfg.probe.every == 0;
    std::vector<ClientUpdate> updates;
    RoundMetrics m = run_round(server, evaluate_now ? eval_task : task, fed,
                               probe_now && cfg.probe.per_client ? &updates : nullptr);
    if (probe_now) {
      m.lambda_max = lambda_max(model_objective(data.model, global_probe), server.theta.data(), probe_opts);
      if (cfg.probe.per_client) {
        std::vector<ClientProbe> probes;
        for (auto& u : updates) {
          const Batch b = probe_batch(data.train, data.shards[u.client_id].indices, cfg.probe.batch, cfg.seed + t);
          probes.push_back(ClientProbe{u.client_id, u.theta.values(), model_objective(data.model, b)});
        }
        for (const auto& cs : per_client_lambda_max(probes, probe_opts)) {
          client_csv << t << ',' << cs.client_id << ',' << fmt(cs.lambda_max) << '\n';
        }
        client_csv.flush();
      }
    }
    csv << metrics_row(m) << '\n';
    csv.flush();
    history.push_back(m);
    if (cfg.checkpoint_every > 0 && (t % cfg.checkpoint_every == 0 || t == fed.rounds)) {
      char name[32];
      std::snprintf(name, sizeof name, "round_%06zu.ckpt", t);
      save_checkpoint(ckpt_dir / name, server);
      save_checkpoint(ckpt_dir / "last.ckpt", server);
    }
    if (t % log_every == 0 || t == fed.rounds) {
      std::ostringstream os;
      os << cfg.name << " round " << t << "/" << fed.rounds << " lr " << m.lr << " loss "
         << m.mean_client_train_loss;
      if (m.test_acc_sgd) os << " acc " << *m.test_acc_sgd;
      if (m.test_acc_swa) os << " swa " << *m.test_acc_swa;
      log_line(options.log, os.str());
    }
  }

  ExperimentReport report;
  report.name = cfg.name;
  report.rounds = fed.rounds;
  report.last_k = std::min(cfg.last_k, fed.rounds);
  report.last_k_mean_accuracy = last_k_mean(history, cfg.last_k, Line::headline);
  report.last_k_mean_sgd = last_k_mean(history, cfg.last_k, Line::sgd);
  if (const double swa = last_k_mean(history, cfg.last_k, Line::swa); !std::isnan(swa)) {
    report.last_k_mean_swa = swa;
  }
  const auto& last = history.back();
  report.final_accuracy_sgd = last.test_acc_sgd.value_or(std::nan(""));
  report.final_accuracy_swa = last.test_acc_swa;
  report.run_dir = run_dir;
  write_json(run_dir / "report.json", to_json(report));
  return report;
}

std::vector<ComparisonRow> compare_values(std::span<const std::pair<std::string, double>> values) {
  if (values.size() < 2) throw UsageError("compare: need at least two runs");
  const double base = values.front().second;
  std::vector<ComparisonRow> rows;
  for (const auto& [name, v] : values) {
    ComparisonRow row{.name = name, .value = v, .absolute = v - base};
    if (base != 0.0) row.relative = 100.0 * (v - base) / base;
    rows.push_back(row);
  }
  return rows;
}

std::vector<ComparisonRow> compare_runs(std::span<const ExperimentReport> reports) {
  std::vector<std::pair<std::string, double>> values;
  for (const auto& r : reports) values.emplace_back(r.name, 100.0 * r.last_k_mean_accuracy);
  return compare_values(values);
}

std::string format_comparison(std::span<const ComparisonRow> rows) {
  std::ostringstream os;
  os << std::left << std::setw(28) << "run" << std::right << std::setw(12) << "accuracy" << std::setw(12)
     << "abs" << std::setw(12) << "rel" << '\n';
  os << std::fixed << std::setprecision(2);
  for (const auto& r : rows) {
    os << std::left << std::setw(28) << r.name << std::right << std::setw(12) << r.value << std::setw(12)
       << std::showpos << r.absolute << std::noshowpos;
    if (r.relative) {
      std::ostringstream rel;
      rel << std::fixed << std::setprecision(2) << std::showpos << *r.relative << '%';
      os << std::setw(12) << rel.str();
    } else {
      os << std::setw(12) << "undefined";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace fedflat
