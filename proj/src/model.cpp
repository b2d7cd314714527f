#include "fedflat/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "fedflat/errors.hpp"
#include "fedflat/rng.hpp"

namespace fedflat {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

ModelSpec lenet_cifar(std::size_t num_classes, Shape input_shape) {
  using namespace layer;
  return ModelSpec{
      .input_shape = std::move(input_shape),
      .num_classes = num_classes,
      .layers = {Conv2d{64, 5}, Relu{}, MaxPool2d{2}, Conv2d{64, 5}, Relu{}, MaxPool2d{2},
                 Flatten{}, Dense{384}, Relu{}, Dense{192}, Relu{}, Dense{num_classes}},
  };
}

ModelSpec mlp(const std::vector<std::size_t>& dims) {
  if (dims.size() < 2) throw UsageError("mlp: need at least input and output widths");
  ModelSpec spec{.input_shape = {dims.front()}, .num_classes = dims.back(), .layers = {}};
  for (std::size_t i = 1; i < dims.size(); ++i) {
    spec.layers.emplace_back(layer::Dense{dims[i]});
    if (i + 1 < dims.size()) spec.layers.emplace_back(layer::Relu{});
  }
  return spec;
}

namespace {

struct LayerParams {
  std::size_t weight = 0;  // manifest entry index
  std::size_t bias = 0;
  std::size_t fan_in = 0;
};

/// Walks the layer chain once, producing the manifest plus per-layer entry
/// indices. The same walk drives the forward pass so the two cannot disagree.
struct Plan {
  std::shared_ptr<Manifest> manifest = std::make_shared<Manifest>();
  std::vector<LayerParams> params;  // one per layer, unused for parameter-free layers
};

Plan plan_model(const ModelSpec& spec) {
  if (spec.input_shape.empty()) throw ConfigError("model: empty input shape");
  if (spec.num_classes == 0) throw ConfigError("model: num_classes must be positive");
  Plan plan;
  Shape shape = spec.input_shape;
  std::size_t conv_index = 0, dense_index = 0;
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    LayerParams lp;
    std::visit(
        overloaded{
            [&](const layer::Conv2d& c) {
              if (shape.size() != 3) throw ConfigError("model: conv2d needs a [C,H,W] input");
              if (c.out_channels == 0 || c.kernel == 0 || c.kernel > shape[1] || c.kernel > shape[2]) {
                throw ConfigError("model: conv2d layer " + std::to_string(li) +
                                  " does not fit input " + shape_string(shape));
              }
              const std::string name = "conv" + std::to_string(++conv_index);
              lp.fan_in = shape[0] * c.kernel * c.kernel;
              lp.weight = plan.manifest->entries().size();
              plan.manifest->add(name + ".weight", {c.out_channels, shape[0], c.kernel, c.kernel});
              lp.bias = plan.manifest->entries().size();
              plan.manifest->add(name + ".bias", {c.out_channels});
              shape = {c.out_channels, shape[1] - c.kernel + 1, shape[2] - c.kernel + 1};
            },
            [&](const layer::MaxPool2d& p) {
              if (shape.size() != 3 || p.size == 0 || p.size > shape[1] || p.size > shape[2]) {
                throw ConfigError("model: maxpool layer " + std::to_string(li) +
                                  " does not fit input " + shape_string(shape));
              }
              shape = {shape[0], shape[1] / p.size, shape[2] / p.size};
            },
            [&](const layer::Dense& d) {
              if (shape.size() != 1) {
                throw ConfigError("model: dense layer " + std::to_string(li) +
                                  " needs a flat input, got " + shape_string(shape));
              }
              if (d.out == 0) throw ConfigError("model: dense width must be positive");
              const std::string name = "fc" + std::to_string(++dense_index);
              lp.fan_in = shape[0];
              lp.weight = plan.manifest->entries().size();
              plan.manifest->add(name + ".weight", {d.out, shape[0]});
              lp.bias = plan.manifest->entries().size();
              plan.manifest->add(name + ".bias", {d.out});
              shape = {d.out};
            },
            [&](const layer::Relu&) {},
            [&](const layer::Flatten&) { shape = {shape_size(shape)}; },
        },
        spec.layers[li]);
    plan.params.push_back(lp);
  }
  if (shape != Shape{spec.num_classes}) {
    throw ConfigError("model: final layer emits " + shape_string(shape) + ", expected [" +
                      std::to_string(spec.num_classes) + "] logits");
  }
  return plan;
}

/// Records the layer chain on `tape` and returns the logits node.
Tape::NodeId record_forward(Tape& tape, std::span<const double> params, const ModelSpec& spec,
                            const Plan& plan, const Tensor& inputs) {
  Shape expected = spec.input_shape;
  expected.insert(expected.begin(), inputs.dim(0));
  if (inputs.shape() != expected) {
    throw ConfigError("model: input batch " + shape_string(inputs.shape()) + " does not match " +
                      shape_string(expected));
  }
  const Manifest& m = *plan.manifest;
  Tape::NodeId x = tape.constant(inputs);
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerParams& lp = plan.params[li];
    x = std::visit(overloaded{
                       [&](const layer::Conv2d&) {
                         return tape.conv2d(x, tape.parameter(params, m.at(lp.weight)),
                                            tape.parameter(params, m.at(lp.bias)));
                       },
                       [&](const layer::MaxPool2d& p) { return tape.max_pool2d(x, p.size); },
                       [&](const layer::Dense&) {
                         return tape.dense(x, tape.parameter(params, m.at(lp.weight)),
                                           tape.parameter(params, m.at(lp.bias)));
                       },
                       [&](const layer::Relu&) { return tape.relu(x); },
                       [&](const layer::Flatten&) { return tape.flatten(x); },
                   },
                   spec.layers[li]);
  }
  return x;
}

void check_length(std::span<const double> params, const Plan& plan) {
  if (params.size() != plan.manifest->total_size()) {
    throw ConfigError("model: parameter vector has " + std::to_string(params.size()) +
                      " entries, model expects " + std::to_string(plan.manifest->total_size()));
  }
}

}  // namespace

std::shared_ptr<const Manifest> model_manifest(const ModelSpec& spec) {
  return plan_model(spec).manifest;
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  Plan plan = plan_model(spec);
  ParamVector params(plan.manifest, 0.0);
  Rng rng = make_rng(seed, {key(Stream::init)});
  for (const auto& lp : plan.params) {
    if (lp.fan_in == 0) continue;
    const ParamEntry& w = plan.manifest->at(lp.weight);
    const double bound = std::sqrt(6.0 / static_cast<double>(lp.fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < shape_size(w.shape); ++i) params[w.offset + i] = dist(rng);
  }
  return params;
}

ForwardPass forward_loss(std::span<const double> params, const ModelSpec& spec,
                         const Batch& batch) {
  if (batch.size() == 0) throw UsageError("forward_loss: empty batch");
  Plan plan = plan_model(spec);
  check_length(params, plan);
  if (batch.targets.shape() != Shape{batch.size(), spec.num_classes}) {
    throw ConfigError("forward_loss: targets " + shape_string(batch.targets.shape()) +
                      " do not match batch of " + std::to_string(batch.size()) + " x " +
                      std::to_string(spec.num_classes));
  }
  ForwardPass pass{.tape = Tape(plan.manifest->total_size())};
  pass.logits = record_forward(pass.tape, params, spec, plan, batch.inputs);
  pass.loss = pass.tape.softmax_cross_entropy(pass.logits, batch.targets);
  return pass;
}

ForwardPass forward_loss(const ParamVector& params, const ModelSpec& spec, const Batch& batch) {
  if (params.manifest_ptr() && !(params.manifest() == *model_manifest(spec))) {
    throw ConfigError("forward_loss: parameter manifest does not match the model");
  }
  return forward_loss(params.data(), spec, batch);
}

std::vector<double> backward(const ForwardPass& pass) { return pass.tape.gradient(pass.loss); }

ParamVector backward(const ForwardPass& pass, const ParamVector& like) {
  return like.like(backward(pass));
}

Tensor forward_logits(std::span<const double> params, const ModelSpec& spec, const Tensor& inputs) {
  Plan plan = plan_model(spec);
  check_length(params, plan);
  Tape tape(plan.manifest->total_size());
  return tape.value(record_forward(tape, params, spec, plan, inputs));
}

Objective model_objective(const ModelSpec& spec, const Batch& batch) {
  return [spec, batch](std::span<const double> theta) {
    ForwardPass pass = forward_loss(theta, spec, batch);
    return LossGrad{pass.loss_value(), backward(pass)};
  };
}

std::vector<double> hvp(const Objective& objective, std::span<const double> theta,
                        std::span<const double> v) {
  if (theta.size() != v.size()) throw UsageError("hvp: direction length mismatch");
  const double vnorm = vec::norm(v);
  if (!std::isfinite(vnorm)) throw UsageError("hvp: direction is not finite");
  if (vnorm == 0.0) return std::vector<double>(v.size(), 0.0);
  const double eps = 1e-4 / std::max(1.0, vnorm);
  std::vector<double> plus(theta.begin(), theta.end()), minus(theta.begin(), theta.end());
  vec::axpy(eps, v, plus);
  vec::axpy(-eps, v, minus);
  std::vector<double> gp = objective(plus).grad;
  const std::vector<double> gm = objective(minus).grad;
  const double inv = 1.0 / (2.0 * eps);
  for (std::size_t i = 0; i < gp.size(); ++i) gp[i] = (gp[i] - gm[i]) * inv;
  return gp;
}

ParamVector hvp(const ParamVector& params, const ModelSpec& spec, const Batch& batch,
                const ParamVector& v) {
  if (!params.same_layout(v)) throw UsageError("hvp: direction layout differs from parameters");
  return params.like(hvp(model_objective(spec, batch), params.data(), v.data()));
}

}  // namespace fedflat
