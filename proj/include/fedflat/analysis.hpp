#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedflat/data.hpp"
#include "fedflat/model.hpp"

namespace fedflat {

/// v -> H v for some symmetric operator H.
using HessianOperator = std::function<std::vector<double>(std::span<const double>)>;

struct PowerIterationOptions {
  std::size_t k = 1;
  std::size_t max_iters = 20;
  /// Stop when the Rayleigh quotient changes by less than tol, relative.
  double tol = 1e-4;
  std::uint64_t seed = 0;
};

struct SpectrumReport {
  std::vector<double> eigenvalues;  // descending
  std::vector<std::size_t> iterations;
  std::vector<double> residuals;  // |H v - lambda v| / |v| with the undeflated H
  std::vector<bool> converged;
  std::vector<std::vector<double>> eigenvectors;  // unit norm
};

/// Power iteration with Hotelling deflation: for each j the iterate is
/// v <- normalize(H v - sum_{i<j} lambda_i <v_i, v> v_i). Throws
/// NumericalError (index = eigenvalue index) when H v is not finite.
SpectrumReport top_k_eigs(const HessianOperator& hessian, std::size_t dim,
                          const PowerIterationOptions& opts);
SpectrumReport top_k_eigs(const Objective& objective, std::span<const double> theta,
                          const PowerIterationOptions& opts);

/// Largest algebraic eigenvalue. Power iteration converges to the eigenvalue
/// of largest magnitude; when that one is negative a second pass runs on
/// H - lambda_1 I, whose dominant eigenvalue is lambda_max - lambda_1 >= 0.
double lambda_max(const HessianOperator& hessian, std::size_t dim, const PowerIterationOptions& opts);
double lambda_max(const Objective& objective, std::span<const double> theta,
                  const PowerIterationOptions& opts);

/// Seeded subset of min(size, N) samples used as a fixed curvature batch.
Batch probe_batch(const Dataset& ds, std::size_t size, std::uint64_t seed);
Batch probe_batch(const Dataset& ds, std::span<const std::size_t> pool, std::size_t size,
                  std::uint64_t seed);

/// lambda_1 / lambda_5; nullopt when |lambda_5| < 1e-12. Throws UsageError
/// with fewer than five eigenvalues.
std::optional<double> sharpness_ratio(const SpectrumReport& report);

struct ClientProbe {
  std::size_t client_id = 0;
  std::vector<double> theta;
  Objective objective;
};

struct ClientSharpness {
  std::size_t client_id = 0;
  double lambda_max = 0.0;
};

/// lambda_max of each client's local loss at its own parameters.
std::vector<ClientSharpness> per_client_lambda_max(std::span<const ClientProbe> probes,
                                                   const PowerIterationOptions& opts);

struct PlaneBasis {
  std::vector<double> u;
  std::vector<double> v;
};

/// Orthonormal basis of the plane through three weight vectors, with
/// theta1 as the origin. Throws GeometryError for coincident or collinear
/// inputs.
PlaneBasis plane_basis(std::span<const double> theta1, std::span<const double> theta2,
                       std::span<const double> theta3);

struct Extent {
  double x_min = -1.0, x_max = 1.0, y_min = -1.0, y_max = 1.0;
};

/// Coordinates of theta in the plane basis relative to origin.
std::array<double, 2> plane_coordinates(const PlaneBasis& basis, std::span<const double> origin,
                                         std::span<const double> theta);

/// Bounding box of the three anchors with a relative margin on each side.
/// For N >= 3 the box is stretched so that the origin is a grid node.
Extent anchor_extent(const PlaneBasis& basis, std::span<const double> theta1,
                     std::span<const double> theta2, std::span<const double> theta3,
                     std::size_t n, double margin = 0.2);

/// Scalar metric at a parameter point (train loss, test error, ...).
using PointMetric = std::function<double(std::span<const double>)>;

enum class MetricKind { loss, error };
std::string to_string(MetricKind kind);
MetricKind metric_from_string(const std::string& name);
PointMetric make_metric(const ModelSpec& model, const Dataset& data, MetricKind kind,
                        const ChannelStats& normalization = {});

struct PlaneGrid {
  PlaneBasis basis;
  std::vector<double> origin;
  Extent extent;
  std::size_t resolution = 0;
  std::vector<double> xs, ys;
  std::vector<double> values;  // row-major, values[iy * N + ix]
  std::vector<std::array<double, 2>> anchors;
  std::string metric;
  double margin = 0.0;
};

/// Evaluates metric(origin + x u + y v) on an N x N grid over extent.
PlaneGrid eval_plane(const PlaneBasis& basis, std::span<const double> origin, const Extent& extent,
                     std::size_t n, const PointMetric& metric, std::string metric_name = "loss");

/// Full pipeline through three weight vectors: basis, anchor extent, grid,
/// and the anchors' plane coordinates.
PlaneGrid loss_plane(std::span<const double> theta1, std::span<const double> theta2,
                     std::span<const double> theta3, const PointMetric& metric, std::size_t n = 21,
                     double margin = 0.2, std::string metric_name = "loss");

struct SurfaceGrid {
  std::vector<double> center;
  std::vector<double> d1, d2;
  std::size_t resolution = 0;
  std::uint64_t seed = 0;
  std::vector<double> coords;  // shared by both axes, over [-1, 1]
  std::vector<double> values;  // row-major, values[ib * R + ia] at center + a d1 + b d2
  double center_value = 0.0;
  std::string metric;
};

/// Loss over [-1,1]^2 along two seeded Gaussian directions normalized to unit length.
SurfaceGrid eval_random_surface(std::span<const double> theta, const PointMetric& metric,
                                std::size_t resolution, std::uint64_t seed,
                                std::string metric_name = "loss");

struct FeatureNorm {
  std::size_t client_id = 0;
  double mean_norm = 0.0;
};

/// Mean L2 norm of the logits over each shard's samples.
std::vector<FeatureNorm> feature_norm_probe(std::span<const double> theta, const ModelSpec& model,
                                            const Dataset& data, std::span<const ClientShard> shards,
                                            const ChannelStats& normalization = {});

}  // namespace fedflat
