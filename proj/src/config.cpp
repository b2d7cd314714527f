#include "fedflat/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "fedflat/errors.hpp"

namespace fedflat {

namespace {

class Reader {
 public:
  explicit Reader(std::string origin) : origin_(std::move(origin)) {}

  [[noreturn]] void fail(const YAML::Node& node, const std::string& key, const std::string& msg) const {
    std::ostringstream os;
    os << origin_;
    if (node.IsDefined() && node.Mark().line >= 0) os << ':' << node.Mark().line + 1;
    os << ": key '" << key << "': " << msg;
    throw ConfigError(os.str());
  }

  /// Rejects keys of `node` that are not in `allowed`.
  void check_keys(const YAML::Node& node, const std::string& path, std::set<std::string> allowed) const {
    if (!node.IsMap()) fail(node, path.empty() ? "<root>" : path, "expected a mapping");
    for (const auto& kv : node) {
      const auto name = kv.first.as<std::string>();
      if (!allowed.contains(name)) {
        fail(kv.first, path.empty() ? name : path + "." + name, "unknown key");
      }
    }
  }

  YAML::Node section(const YAML::Node& root, const std::string& name, bool required) const {
    YAML::Node n = root[name];
    if (!n.IsDefined() || n.IsNull()) {
      if (required) fail(root, name, "missing required section");
      return YAML::Node(YAML::NodeType::Map);
    }
    return n;
  }

  template <class T>
  T scalar(const YAML::Node& parent, const std::string& path, const std::string& name, T fallback,
           bool required = false) const {
    const YAML::Node n = parent[name];
    const std::string key = path.empty() ? name : path + "." + name;
    if (!n.IsDefined() || n.IsNull()) {
      if (required) fail(parent, key, "missing required key");
      return fallback;
    }
    if (!n.IsScalar()) fail(n, key, "expected a scalar");
    try {
      return n.as<T>();
    } catch (const YAML::Exception&) {
      fail(n, key, "invalid value '" + n.Scalar() + "'");
    }
  }

  std::size_t count(const YAML::Node& parent, const std::string& path, const std::string& name,
                    std::size_t fallback, std::size_t minimum, bool required = false) const {
    const auto v = scalar<long long>(parent, path, name, static_cast<long long>(fallback), required);
    if (v < static_cast<long long>(minimum)) {
      fail(parent[name], path.empty() ? name : path + "." + name,
           "must be >= " + std::to_string(minimum) + ", got " + std::to_string(v));
    }
    return static_cast<std::size_t>(v);
  }

  double real(const YAML::Node& parent, const std::string& path, const std::string& name,
              double fallback, double lo, double hi, bool required = false) const {
    const auto v = scalar<double>(parent, path, name, fallback, required);
    if (!std::isfinite(v) || v < lo || v > hi) {
      std::ostringstream os;
      os << "must be in [" << lo << ", " << hi << "], got " << v;
      fail(parent[name], path.empty() ? name : path + "." + name, os.str());
    }
    return v;
  }

  std::vector<std::string> strings(const YAML::Node& parent, const std::string& path,
                                   const std::string& name) const {
    const YAML::Node n = parent[name];
    std::vector<std::string> out;
    if (!n.IsDefined() || n.IsNull()) return out;
    const std::string key = path + "." + name;
    if (n.IsScalar()) return {n.as<std::string>()};
    if (!n.IsSequence()) fail(n, key, "expected a list");
    for (const auto& item : n) out.push_back(item.as<std::string>());
    return out;
  }

  const std::string& origin() const { return origin_; }

 private:
  std::string origin_;
};

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(origin + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  Reader r(origin);
  r.check_keys(root, "", {"name", "seed", "output_dir", "dataset", "partition", "model", "federation",
                          "client", "augment", "server", "swa", "analysis", "evaluation", "checkpoint"});
  ExperimentConfig cfg;
  cfg.source_text = text;
  cfg.name = r.scalar<std::string>(root, "", "name", cfg.name);
  cfg.seed = r.scalar<std::uint64_t>(root, "", "seed", 0);
  cfg.output_dir = r.scalar<std::string>(root, "", "output_dir", "runs/" + cfg.name);

  // dataset
  {
    const auto d = r.section(root, "dataset", true);
    r.check_keys(d, "dataset", {"kind", "num_classes", "per_class", "test_per_class", "input_dim",
                                "spread", "train", "test", "normalize"});
    const auto kind = r.scalar<std::string>(d, "dataset", "kind", "", true);
    auto& ds = cfg.dataset;
    if (kind == "synthetic") {
      ds.kind = DatasetConfig::Kind::synthetic;
    } else if (kind == "cifar10") {
      ds.kind = DatasetConfig::Kind::cifar10;
    } else if (kind == "cifar100") {
      ds.kind = DatasetConfig::Kind::cifar100;
    } else {
      r.fail(d["kind"], "dataset.kind", "expected synthetic, cifar10 or cifar100");
    }
    ds.synth.num_classes = r.count(d, "dataset", "num_classes", 10, 1);
    ds.synth.per_class = r.count(d, "dataset", "per_class", 100, 1);
    ds.test_per_class = r.count(d, "dataset", "test_per_class", 100, 1);
    ds.synth.input_dim = r.count(d, "dataset", "input_dim", 20, 1);
    ds.synth.spread = r.real(d, "dataset", "spread", 1.0, 0.0, 1e6);
    ds.synth.seed = cfg.seed;
    for (auto& p : r.strings(d, "dataset", "train")) ds.train_files.emplace_back(p);
    for (auto& p : r.strings(d, "dataset", "test")) ds.test_files.emplace_back(p);
    ds.normalize = r.scalar<bool>(d, "dataset", "normalize", true);
    if (ds.kind != DatasetConfig::Kind::synthetic && ds.train_files.empty()) {
      r.fail(d, "dataset.train", "CIFAR datasets need at least one training file");
    }
  }

  // partition
  {
    const auto p = r.section(root, "partition", true);
    r.check_keys(p, "partition", {"num_clients", "alpha"});
    cfg.partition.num_clients = r.count(p, "partition", "num_clients", 1, 1, true);
    cfg.partition.alpha = r.real(p, "partition", "alpha", 0.0, 0.0, 1e12);
    cfg.partition.seed = cfg.seed;
  }

  // model
  {
    const auto m = r.section(root, "model", true);
    r.check_keys(m, "model", {"kind", "hidden"});
    const auto kind = r.scalar<std::string>(m, "model", "kind", "", true);
    if (kind == "mlp") {
      cfg.model.kind = ModelConfig::Kind::mlp;
    } else if (kind == "lenet") {
      cfg.model.kind = ModelConfig::Kind::lenet;
    } else {
      r.fail(m["kind"], "model.kind", "expected mlp or lenet");
    }
    const YAML::Node h = m["hidden"];
    if (h.IsDefined() && !h.IsNull()) {
      if (!h.IsSequence()) r.fail(h, "model.hidden", "expected a list of widths");
      for (const auto& w : h) {
        const auto v = w.as<long long>();
        if (v < 1) r.fail(w, "model.hidden", "widths must be >= 1");
        cfg.model.hidden.push_back(static_cast<std::size_t>(v));
      }
    }
  }

  auto& fed = cfg.fed;
  fed.seed = cfg.seed;
  {
    const auto f = r.section(root, "federation", true);
    r.check_keys(f, "federation", {"rounds", "clients_per_round", "local_epochs", "batch_size", "workers"});
    fed.rounds = r.count(f, "federation", "rounds", 1, 1, true);
    fed.clients_per_round = r.count(f, "federation", "clients_per_round", 1, 1);
    fed.local_epochs = r.count(f, "federation", "local_epochs", 1, 1);
    fed.batch_size = r.count(f, "federation", "batch_size", 64, 1);
    fed.workers = r.count(f, "federation", "workers", 1, 1);
    if (fed.clients_per_round > cfg.partition.num_clients) {
      r.fail(f["clients_per_round"], "federation.clients_per_round", "exceeds partition.num_clients");
    }
  }
  {
    const auto c = r.section(root, "client", false);
    r.check_keys(c, "client", {"optimizer", "lr", "momentum", "weight_decay", "rho", "eta"});
    const auto opt = r.scalar<std::string>(c, "client", "optimizer", "sgd");
    if (opt == "sgd") {
      fed.optimizer = LocalOptimizer::sgd;
    } else if (opt == "sam") {
      fed.optimizer = LocalOptimizer::sam;
    } else if (opt == "asam") {
      fed.optimizer = LocalOptimizer::asam;
    } else {
      r.fail(c["optimizer"], "client.optimizer", "expected sgd, sam or asam");
    }
    fed.sgd.lr = r.real(c, "client", "lr", 0.01, 0.0, 1e6);
    fed.sgd.momentum = r.real(c, "client", "momentum", 0.0, 0.0, 0.999999);
    fed.sgd.weight_decay = r.real(c, "client", "weight_decay", 0.0, 0.0, 1e6);
    fed.sam.rho = r.real(c, "client", "rho", 0.05, 0.0, 1e6);
    fed.sam.eta = r.real(c, "client", "eta", 0.0, 0.0, 1e6);
    fed.sam.adaptive = fed.optimizer == LocalOptimizer::asam;
  }
  {
    const auto a = r.section(root, "augment", false);
    r.check_keys(a, "augment", {"standard", "mixup_alpha", "cutout"});
    fed.augment.standard = r.scalar<bool>(a, "augment", "standard", false);
    fed.augment.mixup_alpha = r.real(a, "augment", "mixup_alpha", 0.0, 0.0, 1e6);
    fed.augment.cutout = r.count(a, "augment", "cutout", 0, 0);
  }
  {
    const auto s = r.section(root, "server", false);
    r.check_keys(s, "server", {"momentum", "lr"});
    fed.server.momentum = r.real(s, "server", "momentum", 0.0, 0.0, 0.999999);
    fed.server.lr = r.real(s, "server", "lr", 1.0, 1e-12, 1e6);
  }
  {
    const auto s = r.section(root, "swa", false);
    r.check_keys(s, "swa", {"enabled", "start_fraction", "start_round", "cycle", "lr_high", "lr_low",
                            "cyclic_before_start", "report"});
    auto& swa = fed.swa;
    swa.enabled = r.scalar<bool>(s, "swa", "enabled", false);
    const double fraction = r.real(s, "swa", "start_fraction", 0.75, 0.0, 1.0);
    const auto default_start = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(fed.rounds))) + 1;
    swa.start_round = r.count(s, "swa", "start_round", default_start, 1);
    swa.schedule.cycle = r.count(s, "swa", "cycle", 20, 1);
    swa.schedule.gamma1 = r.real(s, "swa", "lr_high", fed.sgd.lr > 0 ? fed.sgd.lr : 0.01, 1e-300, 1e6);
    swa.schedule.gamma2 = r.real(s, "swa", "lr_low", 1e-4, 1e-300, 1e6);
    swa.cyclic_before_start = r.scalar<bool>(s, "swa", "cyclic_before_start", false);
    swa.report = r.scalar<bool>(s, "swa", "report", true);
  }
  {
    const auto a = r.section(root, "analysis", false);
    r.check_keys(a, "analysis", {"probe_every", "probe_batch", "probe_iters", "probe_tol", "per_client"});
    cfg.probe.every = r.count(a, "analysis", "probe_every", 0, 0);
    cfg.probe.batch = r.count(a, "analysis", "probe_batch", 1024, 1);
    cfg.probe.iters = r.count(a, "analysis", "probe_iters", 20, 1);
    cfg.probe.tol = r.real(a, "analysis", "probe_tol", 1e-4, 0.0, 1.0);
    cfg.probe.per_client = r.scalar<bool>(a, "analysis", "per_client", false);
  }
  {
    const auto e = r.section(root, "evaluation", false);
    r.check_keys(e, "evaluation", {"every", "last_k"});
    cfg.eval_every = r.count(e, "evaluation", "every", 1, 1);
    cfg.last_k = r.count(e, "evaluation", "last_k", 100, 1);
  }
  {
    const auto c = r.section(root, "checkpoint", false);
    r.check_keys(c, "checkpoint", {"every"});
    cfg.checkpoint_every = r.count(c, "checkpoint", "every", 100, 0);
  }
  return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path.string());
}

ModelSpec build_model_spec(const ExperimentConfig& cfg, const Shape& sample_shape) {
  const std::size_t classes = cfg.dataset.kind == DatasetConfig::Kind::cifar100 ? 100
                              : cfg.dataset.kind == DatasetConfig::Kind::cifar10
                                  ? 10
                                  : cfg.dataset.synth.num_classes;
  if (cfg.model.kind == ModelConfig::Kind::lenet) {
    if (sample_shape.size() != 3) throw ConfigError("model.kind: lenet needs image inputs");
    return lenet_cifar(classes, sample_shape);
  }
  std::vector<std::size_t> dims{shape_size(sample_shape)};
  dims.insert(dims.end(), cfg.model.hidden.begin(), cfg.model.hidden.end());
  dims.push_back(classes);
  ModelSpec spec = mlp(dims);
  if (sample_shape.size() > 1) {
    spec.input_shape = sample_shape;
    spec.layers.insert(spec.layers.begin(), layer::Flatten{});
  }
  return spec;
}

}  // namespace fedflat
