#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <numeric>
#include <sstream>

#include "fedflat/analysis.hpp"
#include "fedflat/errors.hpp"
#include "fedflat/experiment.hpp"
#include "fedflat/export.hpp"
#include "fedflat/federation.hpp"
#include "fedflat/optim.hpp"

namespace py = pybind11;
using namespace fedflat;

namespace {

using Vec = std::vector<double>;

py::object to_python(const nlohmann::json& doc) { return py::module_::import("json").attr("loads")(doc.dump()); }

nlohmann::json from_python(const py::object& obj) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

std::shared_ptr<const Manifest> flat_manifest(std::size_t n) {
  auto m = std::make_shared<Manifest>();
  m->add("theta", {n});
  return m;
}

HessianOperator wrap_hvp(const std::function<Vec(Vec)>& f, std::size_t dim) {
  return [f, dim](std::span<const double> v) {
    Vec out = f(Vec(v.begin(), v.end()));
    if (out.size() != dim) throw UsageError("hvp callback returned " + std::to_string(out.size()) + " values, expected " + std::to_string(dim));
    return out;
  };
}

PointMetric wrap_metric(const std::function<double(Vec)>& f) {
  return [f](std::span<const double> p) { return f(Vec(p.begin(), p.end())); };
}

py::dict spectrum_dict(const SpectrumReport& r) {
  py::dict d;
  d["eigenvalues"] = r.eigenvalues;
  d["iterations"] = r.iterations;
  d["residuals"] = r.residuals;
  d["converged"] = r.converged;
  d["eigenvectors"] = r.eigenvectors;
  return d;
}

// Cross-entropy of an MLP on a fixed in-memory batch.
class MlpObjective {
 public:
  MlpObjective(std::vector<std::size_t> dims, const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
               const std::vector<int>& labels)
      : spec_(mlp(dims)) {
    if (x.ndim() != 2 || static_cast<std::size_t>(x.shape(0)) != labels.size()) {
      throw UsageError("MlpObjective: inputs must be [N, D] with one label per row");
    }
    Dataset ds;
    ds.num_classes = dims.back();
    ds.labels = labels;
    const auto n = static_cast<std::size_t>(x.shape(0)), d = static_cast<std::size_t>(x.shape(1));
    ds.inputs = Tensor({n, d}, Vec(x.data(), x.data() + n * d));
    validate(ds);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    objective_ = model_objective(spec_, make_batch(ds, idx));
    size_ = model_manifest(spec_)->total_size();
  }

  [[nodiscard]] std::size_t size() const { return size_; }
  [[nodiscard]] Vec init(std::uint64_t seed) const { return init_params(spec_, seed).values(); }
  [[nodiscard]] double loss(const Vec& theta) const { return objective_(check(theta)).loss; }
  [[nodiscard]] std::pair<double, Vec> loss_and_grad(const Vec& theta) const {
    LossGrad lg = objective_(check(theta));
    return {lg.loss, std::move(lg.grad)};
  }
  [[nodiscard]] Vec hvp_at(const Vec& theta, const Vec& v) const { return hvp(objective_, check(theta), check(v)); }
  [[nodiscard]] SpectrumReport spectrum(const Vec& theta, const PowerIterationOptions& opts) const {
    return top_k_eigs(objective_, check(theta), opts);
  }
  [[nodiscard]] double lambda_max_at(const Vec& theta, const PowerIterationOptions& opts) const {
    return lambda_max(objective_, check(theta), opts);
  }

 private:
  [[nodiscard]] std::span<const double> check(const Vec& v) const {
    if (v.size() != size_) throw UsageError("MlpObjective: expected " + std::to_string(size_) + " values, got " + std::to_string(v.size()));
    return v;
  }
  ModelSpec spec_;
  Objective objective_;
  std::size_t size_ = 0;
};

}  // namespace

PYBIND11_MODULE(_fedflat, m) {
  m.doc() = "Federated learning simulation and loss-landscape analysis";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<GeometryError>(m, "GeometryError", PyExc_ArithmeticError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def(
      "synth_classification",
      [](std::size_t num_classes, std::size_t per_class, std::size_t input_dim, std::uint64_t seed, double spread,
         std::uint64_t stream) {
        const Dataset ds = synth_classification(
            {.num_classes = num_classes, .per_class = per_class, .input_dim = input_dim, .seed = seed, .spread = spread},
            stream);
        py::array_t<double> x({ds.size(), input_dim});
        std::copy(ds.inputs.data().begin(), ds.inputs.data().end(), x.mutable_data());
        py::array_t<int> y(ds.size());
        std::copy(ds.labels.begin(), ds.labels.end(), y.mutable_data());
        return py::make_tuple(x, y);
      },
      py::arg("num_classes") = 10, py::arg("per_class") = 100, py::arg("input_dim") = 20, py::arg("seed") = 0,
      py::arg("spread") = 1.0, py::arg("stream") = 0, "Gaussian class clusters; returns (inputs, labels).");

  m.def(
      "dirichlet_partition",
      [](const std::vector<int>& labels, std::size_t num_classes, std::size_t num_clients, double alpha,
         std::uint64_t seed) {
        std::vector<std::vector<std::size_t>> out;
        for (auto& s : dirichlet_partition(labels, num_classes, {.num_clients = num_clients, .alpha = alpha, .seed = seed})) {
          out.push_back(std::move(s.indices));
        }
        return out;
      },
      py::arg("labels"), py::arg("num_classes"), py::arg("num_clients"), py::arg("alpha"), py::arg("seed") = 0,
      "Sample indices per client; alpha = 0 gives one class per client.");

  m.def(
      "sam_perturb",
      [](const Vec& params, const Vec& grad, double rho, bool adaptive, double eta) {
        if (params.size() != grad.size()) throw UsageError("sam_perturb: params and grad differ in length");
        return sam_perturb(params, grad, {.rho = rho, .adaptive = adaptive, .eta = eta});
      },
      py::arg("params"), py::arg("grad"), py::arg("rho"), py::arg("adaptive") = false, py::arg("eta") = 0.0);

  m.def(
      "cyclic_lr",
      [](std::size_t i, double gamma1, double gamma2, std::size_t cycle) {
        const CyclicLr s{.gamma1 = gamma1, .gamma2 = gamma2, .cycle = cycle};
        validate(s);
        return cyclic_lr(i, s);
      },
      py::arg("i"), py::arg("gamma1"), py::arg("gamma2"), py::arg("cycle"));

  m.def(
      "fedavg_aggregate",
      [](const std::vector<Vec>& thetas, const std::vector<std::size_t>& n_samples) {
        if (thetas.size() != n_samples.size()) throw UsageError("fedavg_aggregate: one sample count per model");
        std::vector<ClientUpdate> updates;
        for (std::size_t i = 0; i < thetas.size(); ++i) {
          updates.push_back({i, ParamVector(flat_manifest(thetas[i].size()), thetas[i]), n_samples[i], 0.0});
        }
        return fedavg_aggregate(updates).values();
      },
      py::arg("thetas"), py::arg("n_samples"), "Sample-weighted mean of client models.");

  m.def(
      "fedavgm_update",
      [](const Vec& theta, const Vec& momentum, const Vec& aggregate, double beta, double lr) {
        if (theta.size() != momentum.size() || theta.size() != aggregate.size()) {
          throw UsageError("fedavgm_update: vectors differ in length");
        }
        const auto manifest = flat_manifest(theta.size());
        ServerState s = make_server(ParamVector(manifest, theta));
        s.momentum = ParamVector(manifest, momentum);
        fedavgm_update(s, ParamVector(manifest, aggregate), beta, lr);
        return py::make_tuple(s.theta.values(), s.momentum.values());
      },
      py::arg("theta"), py::arg("momentum"), py::arg("aggregate"), py::arg("beta"), py::arg("lr") = 1.0,
      "Returns (theta, momentum) after one server momentum step.");

  m.def(
      "swa_absorb",
      [](const Vec& swa_theta, std::size_t n_models, const Vec& theta) {
        if (swa_theta.size() != theta.size()) throw UsageError("swa_absorb: vectors differ in length");
        const auto manifest = flat_manifest(theta.size());
        ServerState s = make_server(ParamVector(manifest, theta));
        s.swa_theta = ParamVector(manifest, swa_theta);
        s.n_models = n_models;
        swa_absorb(s);
        return py::make_tuple(s.swa_theta.values(), s.n_models);
      },
      py::arg("swa_theta"), py::arg("n_models"), py::arg("theta"), "Returns (swa_theta, n_models).");

  m.def(
      "top_k_eigs",
      [](const std::function<Vec(Vec)>& hvp_fn, std::size_t dim, std::size_t k, std::size_t max_iters, double tol,
         std::uint64_t seed) {
        return spectrum_dict(top_k_eigs(wrap_hvp(hvp_fn, dim), dim, {.k = k, .max_iters = max_iters, .tol = tol, .seed = seed}));
      },
      py::arg("hvp"), py::arg("dim"), py::arg("k") = 1, py::arg("max_iters") = 20, py::arg("tol") = 1e-4,
      py::arg("seed") = 0, "Power iteration with deflation on a Hessian-vector product callback.");

  m.def(
      "lambda_max",
      [](const std::function<Vec(Vec)>& hvp_fn, std::size_t dim, std::size_t max_iters, double tol, std::uint64_t seed) {
        return lambda_max(wrap_hvp(hvp_fn, dim), dim, {.max_iters = max_iters, .tol = tol, .seed = seed});
      },
      py::arg("hvp"), py::arg("dim"), py::arg("max_iters") = 20, py::arg("tol") = 1e-4, py::arg("seed") = 0);

  m.def(
      "plane_basis",
      [](const Vec& t1, const Vec& t2, const Vec& t3) {
        if (t1.size() != t2.size() || t1.size() != t3.size()) throw UsageError("plane_basis: vectors differ in length");
        PlaneBasis b = plane_basis(t1, t2, t3);
        return py::make_tuple(std::move(b.u), std::move(b.v));
      },
      py::arg("theta1"), py::arg("theta2"), py::arg("theta3"));

  m.def(
      "loss_plane",
      [](const Vec& t1, const Vec& t2, const Vec& t3, const std::function<double(Vec)>& metric, std::size_t n,
         double margin, const std::string& name) {
        if (t1.size() != t2.size() || t1.size() != t3.size()) throw UsageError("loss_plane: vectors differ in length");
        return to_python(export_plane(loss_plane(t1, t2, t3, wrap_metric(metric), n, margin, name)));
      },
      py::arg("theta1"), py::arg("theta2"), py::arg("theta3"), py::arg("metric"), py::arg("n") = 21,
      py::arg("margin") = 0.2, py::arg("metric_name") = "loss", "Plane export document through three models.");

  m.def(
      "random_surface",
      [](const Vec& theta, const std::function<double(Vec)>& metric, std::size_t resolution, std::uint64_t seed,
         const std::string& name) {
        return to_python(export_surface(eval_random_surface(theta, wrap_metric(metric), resolution, seed, name)));
      },
      py::arg("theta"), py::arg("metric"), py::arg("resolution") = 21, py::arg("seed") = 0,
      py::arg("metric_name") = "loss", "Surface export document along two random unit directions.");

  m.def("check_export_schema", [](const py::object& doc) { check_export_schema(from_python(doc)); }, py::arg("doc"),
        "Raises FormatError naming the first missing or mistyped field.");

  m.def(
      "load_config",
      [](const std::filesystem::path& path) {
        const ExperimentConfig cfg = parse_config(path);
        py::dict d;
        d["name"] = cfg.name;
        d["seed"] = cfg.seed;
        d["output_dir"] = cfg.output_dir.string();
        d["rounds"] = cfg.fed.rounds;
        d["num_clients"] = cfg.partition.num_clients;
        d["alpha"] = cfg.partition.alpha;
        d["clients_per_round"] = cfg.fed.clients_per_round;
        d["lr"] = cfg.fed.sgd.lr;
        d["batch_size"] = cfg.fed.batch_size;
        d["swa"] = cfg.fed.swa.enabled;
        return d;
      },
      py::arg("path"), "Parses and validates a YAML experiment config; returns its main settings.");

  m.def(
      "run_experiment",
      [](const std::filesystem::path& path, bool resume, const std::optional<std::string>& output_dir) {
        ExperimentConfig cfg = parse_config(path);
        if (output_dir) cfg.output_dir = *output_dir;
        ExperimentReport r;
        {
          py::gil_scoped_release release;
          r = run_experiment(cfg, {.resume = resume});
        }
        return to_python(to_json(r));
      },
      py::arg("config"), py::arg("resume") = false, py::arg("output_dir") = py::none(),
      "Runs a config to completion and returns the report.");

  m.def(
      "compare",
      [](const std::vector<std::pair<std::string, double>>& values) {
        const auto rows = compare_values(values);
        py::list out;
        for (const auto& r : rows) {
          py::dict d;
          d["name"] = r.name;
          d["value"] = r.value;
          d["absolute"] = r.absolute;
          d["relative"] = r.relative ? py::cast(*r.relative) : py::none();
          out.append(d);
        }
        return py::make_tuple(out, format_comparison(rows));
      },
      py::arg("values"), "First entry is the baseline; returns (rows, table).");

  py::class_<MlpObjective>(m, "MlpObjective")
      .def(py::init<std::vector<std::size_t>, const py::array_t<double, py::array::c_style | py::array::forcecast>&,
                    const std::vector<int>&>(),
           py::arg("dims"), py::arg("inputs"), py::arg("labels"))
      .def_property_readonly("size", &MlpObjective::size)
      .def("init", &MlpObjective::init, py::arg("seed") = 0)
      .def("loss", &MlpObjective::loss, py::arg("theta"))
      .def("loss_and_grad", &MlpObjective::loss_and_grad, py::arg("theta"))
      .def("hvp", &MlpObjective::hvp_at, py::arg("theta"), py::arg("v"))
      .def(
          "spectrum",
          [](const MlpObjective& o, const Vec& theta, std::size_t k, std::size_t max_iters, double tol,
             std::uint64_t seed) {
            return spectrum_dict(o.spectrum(theta, {.k = k, .max_iters = max_iters, .tol = tol, .seed = seed}));
          },
          py::arg("theta"), py::arg("k") = 5, py::arg("max_iters") = 20, py::arg("tol") = 1e-4, py::arg("seed") = 0)
      .def(
          "lambda_max",
          [](const MlpObjective& o, const Vec& theta, std::size_t max_iters, double tol, std::uint64_t seed) {
            return o.lambda_max_at(theta, {.max_iters = max_iters, .tol = tol, .seed = seed});
          },
          py::arg("theta"), py::arg("max_iters") = 20, py::arg("tol") = 1e-4, py::arg("seed") = 0);
}
