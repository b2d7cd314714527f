#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <variant>
#include <vector>

#include "fedflat/batch.hpp"
#include "fedflat/tape.hpp"
#include "fedflat/tensor.hpp"

namespace fedflat {



namespace layer {
struct Conv2d {
  std::size_t out_channels;
  std::size_t kernel;
};
struct MaxPool2d {
  std::size_t size;
};
struct Dense {
  std::size_t out;
};
struct Relu {};
struct Flatten {};
}  // namespace layer

using Layer = std::variant<layer::Conv2d, layer::MaxPool2d, layer::Dense, layer::Relu, layer::Flatten>;

/// Architecture description: per-sample input shape, layer chain, number of
/// output logits.
struct ModelSpec {
  Shape input_shape;
  std::size_t num_classes = 0;
  std::vector<Layer> layers;
};

/// conv(64,5x5)-relu-pool2 -conv(64,5x5)-relu-pool2 -flatten-fc384-relu-fc192-relu-fc(classes)
ModelSpec lenet_cifar(std::size_t num_classes, Shape input_shape = {3, 32, 32});

/// dims = [in, hidden..., classes]; dense+relu chain with a linear last layer.
ModelSpec mlp(const std::vector<std::size_t>& dims);

/// Validates layer composition and returns the parameter layout. Throws
/// ConfigError when shapes do not compose or the last layer does not emit
/// num_classes logits.
std::shared_ptr<const Manifest> model_manifest(const ModelSpec& spec);

/// He-uniform fan-in weights, zero biases; deterministic in seed.
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

/// Tape with the forward pass recorded; `loss` is the mean cross-entropy node.
struct ForwardPass {
  Tape tape;
  Tape::NodeId logits = 0;
  Tape::NodeId loss = 0;

  [[nodiscard]] double loss_value() const { return tape.value(loss)[0]; }
};

ForwardPass forward_loss(const ParamVector& params, const ModelSpec& spec, const Batch& batch);
/// Same as above on a raw parameter span of the model's manifest length.
ForwardPass forward_loss(std::span<const double> params, const ModelSpec& spec, const Batch& batch);

/// Gradient of the recorded loss.
ParamVector backward(const ForwardPass& pass, const ParamVector& like);
std::vector<double> backward(const ForwardPass& pass);

/// Logits [B, num_classes] for inputs [B, ...input_shape].
Tensor forward_logits(std::span<const double> params, const ModelSpec& spec, const Tensor& inputs);

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Maps a flat parameter point to (loss, gradient). Every optimizer and
/// curvature routine is written against this so quadratic test objectives
/// and real models share one code path.
using Objective = std::function<LossGrad(std::span<const double>)>;

Objective model_objective(const ModelSpec& spec, const Batch& batch);

/// Hessian-vector product by central differences of gradients:
/// (g(theta + eps v) - g(theta - eps v)) / (2 eps), eps = 1e-4 / max(1, |v|).
std::vector<double> hvp(const Objective& objective, std::span<const double> theta,
                        std::span<const double> v);
ParamVector hvp(const ParamVector& params, const ModelSpec& spec, const Batch& batch,
                const ParamVector& v);

}  // namespace fedflat
