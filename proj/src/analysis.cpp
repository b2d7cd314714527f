#include "fedflat/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fedflat/errors.hpp"
#include "fedflat/federation.hpp"

namespace fedflat {

namespace {

std::vector<double> random_unit(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  for (auto& x : v) x = normal(rng);
  const double n = vec::norm(v);
  vec::scale(1.0 / n, v);
  return v;
}

}  // namespace

SpectrumReport top_k_eigs(const HessianOperator& hessian, std::size_t dim,
                          const PowerIterationOptions& opts) {
  if (opts.k < 1) throw UsageError("top_k_eigs: k must be >= 1");
  if (opts.max_iters < 1) throw UsageError("top_k_eigs: max_iters must be >= 1");
  if (dim == 0) throw UsageError("top_k_eigs: empty parameter space");
  const std::size_t k = std::min(opts.k, dim);

  struct Pair {
    double value;
    std::vector<double> vector;
    std::size_t iters;
    double residual;
    bool converged;
  };
  std::vector<Pair> found;

  auto apply = [&](const std::vector<double>& v, std::size_t index) {
    std::vector<double> hv = hessian(v);
    if (hv.size() != dim || !vec::all_finite(hv)) {
      throw NumericalError("top_k_eigs: Hessian-vector product is not finite while computing "
                           "eigenvalue " + std::to_string(index),
                           index);
    }
    return hv;
  };
  auto deflate = [&](std::vector<double>& hv, const std::vector<double>& v) {
    for (const auto& p : found) vec::axpy(-p.value * vec::dot(p.vector, v), p.vector, hv);
  };

  for (std::size_t j = 0; j < k; ++j) {
    Rng rng = make_rng(opts.seed, {key(Stream::probe), j});
    std::vector<double> v = random_unit(dim, rng);
    double previous = 0.0;
    bool converged = false;
    std::size_t iters = 0;
    for (std::size_t it = 1; it <= opts.max_iters; ++it) {
      iters = it;
      std::vector<double> w = apply(v, j);
      deflate(w, v);
      const double rayleigh = vec::dot(v, w);
      const double wn = vec::norm(w);
      if (wn == 0.0) {
        converged = true;
        break;
      }
      vec::scale(1.0 / wn, w);
      v = std::move(w);
      if (it > 1 && std::abs(rayleigh - previous) <= opts.tol * std::abs(rayleigh)) {
        converged = true;
        break;
      }
      previous = rayleigh;
    }
    std::vector<double> hv = apply(v, j);
    std::vector<double> deflated = hv;
    deflate(deflated, v);
    const double lambda = vec::dot(v, deflated);
    vec::axpy(-lambda, v, hv);
    found.push_back(Pair{lambda, std::move(v), iters, vec::norm(hv), converged});
  }

  std::stable_sort(found.begin(), found.end(),
                   [](const Pair& a, const Pair& b) { return a.value > b.value; });
  SpectrumReport report;
  for (auto& p : found) {
    report.eigenvalues.push_back(p.value);
    report.iterations.push_back(p.iters);
    report.residuals.push_back(p.residual);
    report.converged.push_back(p.converged);
    report.eigenvectors.push_back(std::move(p.vector));
  }
  return report;
}

SpectrumReport top_k_eigs(const Objective& objective, std::span<const double> theta,
                          const PowerIterationOptions& opts) {
  std::vector<double> point(theta.begin(), theta.end());
  return top_k_eigs([&](std::span<const double> v) { return hvp(objective, point, v); },
                    point.size(), opts);
}

double lambda_max(const HessianOperator& hessian, std::size_t dim, const PowerIterationOptions& opts) {
  PowerIterationOptions one = opts;
  one.k = 1;
  const double dominant = top_k_eigs(hessian, dim, one).eigenvalues.front();
  if (dominant >= 0.0) return dominant;
  auto shifted = [&](std::span<const double> v) {
    std::vector<double> hv = hessian(v);
    vec::axpy(-dominant, v, hv);
    return hv;
  };
  return dominant + top_k_eigs(shifted, dim, one).eigenvalues.front();
}

double lambda_max(const Objective& objective, std::span<const double> theta,
                  const PowerIterationOptions& opts) {
  std::vector<double> point(theta.begin(), theta.end());
  return lambda_max([&](std::span<const double> v) { return hvp(objective, point, v); }, point.size(), opts);
}

Batch probe_batch(const Dataset& ds, std::span<const std::size_t> pool, std::size_t size,
                  std::uint64_t seed) {
  if (pool.empty()) throw UsageError("probe_batch: empty sample pool");
  std::vector<std::size_t> idx(pool.begin(), pool.end());
  if (size < idx.size()) {
    Rng rng = make_rng(seed, {key(Stream::probe), 0xba7c4});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(size);
    std::sort(idx.begin(), idx.end());
  }
  return make_batch(ds, idx);
}

Batch probe_batch(const Dataset& ds, std::size_t size, std::uint64_t seed) {
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return probe_batch(ds, all, size, seed);
}

std::optional<double> sharpness_ratio(const SpectrumReport& report) {
  if (report.eigenvalues.size() < 5) {
    throw UsageError("sharpness_ratio: needs at least 5 eigenvalues, got " +
                     std::to_string(report.eigenvalues.size()));
  }
  const double l5 = report.eigenvalues[4];
  if (std::abs(l5) < 1e-12) return std::nullopt;
  return report.eigenvalues[0] / l5;
}

std::vector<ClientSharpness> per_client_lambda_max(std::span<const ClientProbe> probes,
                                                   const PowerIterationOptions& opts) {
  std::vector<ClientSharpness> out;
  out.reserve(probes.size());
  for (const auto& p : probes) out.push_back(ClientSharpness{p.client_id, lambda_max(p.objective, p.theta, opts)});
  return out;
}

PlaneBasis plane_basis(std::span<const double> theta1, std::span<const double> theta2,
                       std::span<const double> theta3) {
  if (theta1.size() != theta2.size() || theta1.size() != theta3.size()) {
    throw GeometryError("plane_basis: weight vectors differ in length");
  }
  std::vector<double> u = vec::sub(theta2, theta1);
  const std::vector<double> w = vec::sub(theta3, theta1);
  const double uu = vec::dot(u, u);
  if (!(uu > 0.0)) throw GeometryError("plane_basis: theta2 coincides with theta1");
  std::vector<double> v = w;
  vec::axpy(-vec::dot(w, u) / uu, u, v);
  const double un = std::sqrt(uu), vn = vec::norm(v), wn = vec::norm(w);
  if (!(vn > 1e-12 * std::max(wn, un))) {
    throw GeometryError("plane_basis: theta3 is collinear with theta1 and theta2");
  }
  vec::scale(1.0 / un, u);
  vec::scale(1.0 / vn, v);
  // One re-orthogonalization pass for nearly collinear triples.
  vec::axpy(-vec::dot(v, u), u, v);
  vec::scale(1.0 / vec::norm(v), v);
  return PlaneBasis{std::move(u), std::move(v)};
}

std::array<double, 2> plane_coordinates(const PlaneBasis& basis, std::span<const double> origin,
                                        std::span<const double> theta) {
  const std::vector<double> d = vec::sub(theta, origin);
  return {vec::dot(d, basis.u), vec::dot(d, basis.v)};
}

namespace {

/// Widens [lo, hi] (lo < 0 < hi) so that 0 falls on one of n equally spaced nodes.
std::pair<double, double> snap_axis(double lo, double hi, std::size_t n) {
  if (n < 3 || !(lo < 0.0 && hi > 0.0)) return {lo, hi};
  double best_step = std::numeric_limits<double>::infinity();
  std::size_t best_i0 = 1;
  for (std::size_t i0 = 1; i0 + 1 < n; ++i0) {
    const double step = std::max(-lo / static_cast<double>(i0), hi / static_cast<double>(n - 1 - i0));
    if (step < best_step) {
      best_step = step;
      best_i0 = i0;
    }
  }
  return {-static_cast<double>(best_i0) * best_step,
          static_cast<double>(n - 1 - best_i0) * best_step};
}

std::vector<double> axis(double lo, double hi, std::size_t n) {
  std::vector<double> xs(n);
  const double step = n > 1 ? (hi - lo) / static_cast<double>(n - 1) : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = lo + step * static_cast<double>(i);
    if (std::abs(xs[i]) <= 1e-9 * std::abs(step)) xs[i] = 0.0;
  }
  return xs;
}

}  // namespace

Extent anchor_extent(const PlaneBasis& basis, std::span<const double> theta1,
                     std::span<const double> theta2, std::span<const double> theta3,
                     std::size_t n, double margin) {
  const auto a2 = plane_coordinates(basis, theta1, theta2);
  const auto a3 = plane_coordinates(basis, theta1, theta3);
  double xlo = std::min({0.0, a2[0], a3[0]}), xhi = std::max({0.0, a2[0], a3[0]});
  double ylo = std::min({0.0, a2[1], a3[1]}), yhi = std::max({0.0, a2[1], a3[1]});
  const double wx = xhi - xlo, wy = yhi - ylo;
  xlo -= margin * wx;
  xhi += margin * wx;
  ylo -= margin * wy;
  yhi += margin * wy;
  const auto [x0, x1] = snap_axis(xlo, xhi, n);
  const auto [y0, y1] = snap_axis(ylo, yhi, n);
  return Extent{x0, x1, y0, y1};
}

std::string to_string(MetricKind kind) { return kind == MetricKind::loss ? "loss" : "error"; }

MetricKind metric_from_string(const std::string& name) {
  if (name == "loss" || name == "train_loss") return MetricKind::loss;
  if (name == "error" || name == "test_error") return MetricKind::error;
  throw ConfigError("unknown metric '" + name + "' (expected loss or error)");
}

PointMetric make_metric(const ModelSpec& model, const Dataset& data, MetricKind kind,
                        const ChannelStats& normalization) {
  return [&model, &data, kind, normalization](std::span<const double> theta) {
    const Evaluation e = evaluate(theta, model, data, normalization);
    return kind == MetricKind::loss ? e.loss : 1.0 - e.accuracy;
  };
}

PlaneGrid eval_plane(const PlaneBasis& basis, std::span<const double> origin, const Extent& extent,
                     std::size_t n, const PointMetric& metric, std::string metric_name) {
  if (n < 2) throw UsageError("eval_plane: resolution must be >= 2");
  if (basis.u.size() != origin.size() || basis.v.size() != origin.size()) {
    throw GeometryError("eval_plane: basis and origin differ in length");
  }
  PlaneGrid grid{.basis = basis,
                 .origin = std::vector<double>(origin.begin(), origin.end()),
                 .extent = extent,
                 .resolution = n,
                 .xs = axis(extent.x_min, extent.x_max, n),
                 .ys = axis(extent.y_min, extent.y_max, n),
                 .values = std::vector<double>(n * n),
                 .anchors = {},
                 .metric = std::move(metric_name)};
  std::vector<double> point(origin.size());
  for (std::size_t iy = 0; iy < n; ++iy) {
    for (std::size_t ix = 0; ix < n; ++ix) {
      const double x = grid.xs[ix], y = grid.ys[iy];
      for (std::size_t i = 0; i < point.size(); ++i) {
        point[i] = origin[i];
        if (x != 0.0) point[i] += x * basis.u[i];
        if (y != 0.0) point[i] += y * basis.v[i];
      }
      grid.values[iy * n + ix] = metric(point);
    }
  }
  return grid;
}

PlaneGrid loss_plane(std::span<const double> theta1, std::span<const double> theta2,
                     std::span<const double> theta3, const PointMetric& metric, std::size_t n,
                     double margin, std::string metric_name) {
  const PlaneBasis basis = plane_basis(theta1, theta2, theta3);
  const Extent extent = anchor_extent(basis, theta1, theta2, theta3, n, margin);
  PlaneGrid grid = eval_plane(basis, theta1, extent, n, metric, std::move(metric_name));
  grid.anchors = {std::array<double, 2>{0.0, 0.0}, plane_coordinates(basis, theta1, theta2),
                  plane_coordinates(basis, theta1, theta3)};
  grid.margin = margin;
  return grid;
}

SurfaceGrid eval_random_surface(std::span<const double> theta, const PointMetric& metric,
                                std::size_t resolution, std::uint64_t seed, std::string metric_name) {
  if (resolution < 2) throw UsageError("eval_random_surface: resolution must be >= 2");
  Rng rng = make_rng(seed, {key(Stream::directions)});
  SurfaceGrid s{.center = std::vector<double>(theta.begin(), theta.end()),
                .d1 = random_unit(theta.size(), rng),
                .d2 = random_unit(theta.size(), rng),
                .resolution = resolution,
                .seed = seed,
                .coords = axis(-1.0, 1.0, resolution),
                .values = std::vector<double>(resolution * resolution),
                .center_value = 0.0,
                .metric = std::move(metric_name)};
  std::vector<double> point(theta.size());
  for (std::size_t ib = 0; ib < resolution; ++ib) {
    for (std::size_t ia = 0; ia < resolution; ++ia) {
      const double a = s.coords[ia], b = s.coords[ib];
      for (std::size_t i = 0; i < point.size(); ++i) {
        point[i] = theta[i];
        if (a != 0.0) point[i] += a * s.d1[i];
        if (b != 0.0) point[i] += b * s.d2[i];
      }
      s.values[ib * resolution + ia] = metric(point);
    }
  }
  s.center_value = metric(s.center);
  return s;
}

std::vector<FeatureNorm> feature_norm_probe(std::span<const double> theta, const ModelSpec& model,
                                            const Dataset& data, std::span<const ClientShard> shards,
                                            const ChannelStats& normalization) {
  constexpr std::size_t chunk = 512;
  std::vector<FeatureNorm> out;
  for (const auto& shard : shards) {
    double total = 0.0;
    for (std::size_t start = 0; start < shard.indices.size(); start += chunk) {
      const std::size_t end = std::min(shard.indices.size(), start + chunk);
      Batch batch = make_batch(data, std::span(shard.indices).subspan(start, end - start));
      if (!normalization.mean.empty() && batch.inputs.rank() == 4) {
        batch = map_images(batch, [&](const Tensor& img) { return normalize(img, normalization); });
      }
      const Tensor logits = forward_logits(theta, model, batch.inputs);
      const std::size_t k = model.num_classes;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        total += vec::norm(logits.data().subspan(i * k, k));
      }
    }
    out.push_back(FeatureNorm{shard.client_id,
                              shard.indices.empty() ? 0.0 : total / static_cast<double>(shard.size())});
  }
  return out;
}

}  // namespace fedflat
