// Command-line front end: run experiments, analyze checkpoints, compare reports.
// Exit codes: 0 ok, 1 config or usage error, 2 runtime error.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "fedflat/analysis.hpp"
#include "fedflat/checkpoint.hpp"
#include "fedflat/config.hpp"
#include "fedflat/errors.hpp"
#include "fedflat/experiment.hpp"
#include "fedflat/export.hpp"

namespace {

using namespace fedflat;

struct AnalyzeArgs {
  std::string config;
  std::vector<std::string> checkpoints;
  std::string out;
  bool swa = false;
  std::string split = "test";
  std::string metric = "loss";
  std::size_t k = 5;
  std::size_t iters = 20;
  double tol = 1e-4;
  std::size_t batch = 1024;
  std::size_t n = 21;
  double margin = 0.2;
  std::uint64_t seed = 0;
};

std::vector<double> load_point(const std::string& path, bool swa) {
  ServerState s = load_checkpoint(path);
  if (swa) {
    if (s.n_models == 0) throw ConfigError(path + ": checkpoint has no SWA average yet");
    return s.swa_theta.values();
  }
  return s.theta.values();
}

void emit(const nlohmann::json& doc, const std::string& out) {
  check_export_schema(doc);
  if (out.empty()) {
    std::cout << doc.dump(2) << '\n';
  } else {
    write_json(out, doc);
    std::cerr << "wrote " << out << '\n';
  }
}

void require_count(const AnalyzeArgs& a, std::size_t n, const char* what) {
  if (a.checkpoints.size() != n) {
    throw ConfigError(std::string(what) + " needs " + std::to_string(n) + " checkpoint(s), got " +
                      std::to_string(a.checkpoints.size()));
  }
}

void analyze(const std::string& kind, const AnalyzeArgs& a) {
  const ExperimentConfig cfg = parse_config(a.config);
  const ExperimentData data = load_experiment_data(cfg);
  const Dataset& eval_set = a.split == "train" ? data.train : data.test;

  if (kind == "spectrum") {
    require_count(a, 1, "spectrum");
    const auto theta = load_point(a.checkpoints[0], a.swa);
    const Batch b = probe_batch(data.train, a.batch, cfg.seed);
    const PowerIterationOptions opts{.k = a.k, .max_iters = a.iters, .tol = a.tol, .seed = a.seed};
    const SpectrumReport r = top_k_eigs(model_objective(data.model, b), theta, opts);
    emit(export_spectrum(r, opts, b.size()), a.out);
  } else if (kind == "plane") {
    require_count(a, 3, "plane");
    const auto t1 = load_point(a.checkpoints[0], a.swa);
    const auto t2 = load_point(a.checkpoints[1], a.swa);
    const auto t3 = load_point(a.checkpoints[2], a.swa);
    const MetricKind mk = metric_from_string(a.metric);
    const PlaneGrid grid = loss_plane(t1, t2, t3, make_metric(data.model, eval_set, mk, data.normalization), a.n,
                                      a.margin, to_string(mk));
    emit(export_plane(grid), a.out);
  } else if (kind == "surface") {
    require_count(a, 1, "surface");
    const auto theta = load_point(a.checkpoints[0], a.swa);
    const MetricKind mk = metric_from_string(a.metric);
    const SurfaceGrid grid = eval_random_surface(
        theta, make_metric(data.model, eval_set, mk, data.normalization), a.n, a.seed, to_string(mk));
    emit(export_surface(grid), a.out);
  } else if (kind == "features") {
    require_count(a, 1, "features");
    const auto theta = load_point(a.checkpoints[0], a.swa);
    const auto norms = feature_norm_probe(theta, data.model, data.train, data.shards, data.normalization);
    emit(export_feature_norms(norms), a.out);
  } else {
    throw ConfigError("unknown analysis '" + kind + "'");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedflat: federated learning simulation with sharpness-aware local training"};
  app.require_subcommand(1);

  std::string run_config;
  bool resume = false;
  auto* run = app.add_subcommand("run", "Run an experiment from a YAML config");
  run->add_option("config", run_config, "Experiment config")->required();
  run->add_flag("--resume", resume, "Continue from checkpoints/last.ckpt");

  std::string kind;
  AnalyzeArgs aa;
  auto* an = app.add_subcommand("analyze", "Analyze checkpoints (spectrum, plane, surface, features)");
  an->add_option("kind", kind, "spectrum | plane | surface | features")
      ->required()
      ->check(CLI::IsMember({"spectrum", "plane", "surface", "features"}));
  an->add_option("checkpoints", aa.checkpoints, "Checkpoint file(s)")->required();
  an->add_option("--config", aa.config, "Experiment config the checkpoints came from")->required();
  an->add_option("--out,-o", aa.out, "Output JSON (default: stdout)");
  an->add_flag("--swa", aa.swa, "Use the SWA average instead of the server model");
  an->add_option("--split", aa.split, "Dataset for plane/surface metrics")->check(CLI::IsMember({"train", "test"}));
  an->add_option("--metric", aa.metric, "loss | error")->check(CLI::IsMember({"loss", "error"}));
  an->add_option("--k", aa.k, "Number of eigenvalues");
  an->add_option("--iters", aa.iters, "Power iterations per eigenvalue");
  an->add_option("--tol", aa.tol, "Relative convergence tolerance");
  an->add_option("--batch", aa.batch, "Probe batch size");
  an->add_option("--n", aa.n, "Grid resolution");
  an->add_option("--margin", aa.margin, "Plane margin around the anchors");
  an->add_option("--seed", aa.seed, "Seed for start vectors and directions");

  std::vector<std::string> reports;
  auto* cmp = app.add_subcommand("compare", "Compare run reports; the first is the baseline");
  cmp->add_option("reports", reports, "report.json files")->required()->expected(2, -1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*run) {
      ExperimentConfig cfg = parse_config(run_config);
      const ExperimentReport r = run_experiment(cfg, RunOptions{.resume = resume, .log = &std::cerr});
      std::cout << to_json(r).dump(2) << '\n';
    } else if (*an) {
      analyze(kind, aa);
    } else if (*cmp) {
      std::vector<ExperimentReport> loaded;
      for (const auto& p : reports) loaded.push_back(report_from_json(read_json(p)));
      const auto rows = compare_runs(loaded);
      std::cout << format_comparison(rows);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
