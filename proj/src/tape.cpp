#include "fedflat/tape.hpp"

#include <algorithm>
#include <cmath>

#include "fedflat/errors.hpp"

namespace fedflat {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw UsageError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw UsageError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

}  // namespace

Tape::NodeId Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

Tape::NodeId Tape::constant(Tensor value) {
  return push(Node{.op = Op::constant, .inputs = {}, .value = std::move(value)});
}

Tape::NodeId Tape::parameter(std::span<const double> params, const ParamEntry& entry) {
  const auto n = shape_size(entry.shape);
  if (entry.offset + n > num_params_ || entry.offset + n > params.size()) {
    throw UsageError("parameter block '" + entry.name + "' exceeds the parameter vector");
  }
  std::vector<double> values(params.begin() + static_cast<std::ptrdiff_t>(entry.offset),
                             params.begin() + static_cast<std::ptrdiff_t>(entry.offset + n));
  Node node{.op = Op::parameter, .inputs = {}, .value = Tensor(entry.shape, std::move(values))};
  node.requires_grad = true;
  node.param_offset = entry.offset;
  return push(std::move(node));
}

Tape::NodeId Tape::conv2d(NodeId input, NodeId weight, NodeId bias) {
  const Tensor& x = value(input);
  const Tensor& w = value(weight);
  const Tensor& b = value(bias);
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  require_rank(b, 1, "conv2d bias");
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin || w.dim(3) != k || b.dim(0) != cout) {
    throw UsageError("conv2d: weight " + shape_string(w.shape()) + " incompatible with input " +
                     shape_string(x.shape()));
  }
  if (k > h || k > wd) throw UsageError("conv2d: kernel larger than input");
  const std::size_t oh = h - k + 1, ow = wd - k + 1;
  Tensor y({batch, cout, oh, ow});
  auto xd = x.data();
  auto wdat = w.data();
  auto yd = y.data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      double* yo = &yd[(n * cout + o) * oh * ow];
      std::fill(yo, yo + oh * ow, b[o]);
      for (std::size_t c = 0; c < cin; ++c) {
        const double* xc = &xd[(n * cin + c) * h * wd];
        const double* wc = &wdat[(o * cin + c) * k * k];
        for (std::size_t p = 0; p < k; ++p) {
          for (std::size_t q = 0; q < k; ++q) {
            const double wv = wc[p * k + q];
            for (std::size_t i = 0; i < oh; ++i) {
              const double* xrow = xc + (i + p) * wd + q;
              double* yrow = yo + i * ow;
              for (std::size_t j = 0; j < ow; ++j) yrow[j] += wv * xrow[j];
            }
          }
        }
      }
    }
  }
  Node node{.op = Op::conv2d, .inputs = {input, weight, bias}, .value = std::move(y)};
  node.requires_grad = nodes_[input].requires_grad || nodes_[weight].requires_grad ||
                       nodes_[bias].requires_grad;
  return push(std::move(node));
}

Tape::NodeId Tape::max_pool2d(NodeId input, std::size_t size) {
  const Tensor& x = value(input);
  require_rank(x, 4, "max_pool2d");
  if (size == 0 || size > x.dim(2) || size > x.dim(3)) {
    throw UsageError("max_pool2d: window " + std::to_string(size) + " does not fit input " +
                     shape_string(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / size, ow = w / size;
  Tensor y({x.dim(0), x.dim(1), oh, ow});
  std::vector<std::size_t> argmax(y.size());
  for (std::size_t pl = 0; pl < planes; ++pl) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = pl * h * w + (i * size) * w + j * size;
        for (std::size_t p = 0; p < size; ++p) {
          for (std::size_t q = 0; q < size; ++q) {
            const std::size_t idx = pl * h * w + (i * size + p) * w + (j * size + q);
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t out = (pl * oh + i) * ow + j;
        y[out] = x[best];
        argmax[out] = best;
      }
    }
  }
  Node node{.op = Op::max_pool2d, .inputs = {input}, .value = std::move(y)};
  node.requires_grad = nodes_[input].requires_grad;
  node.argmax = std::move(argmax);
  return push(std::move(node));
}

Tape::NodeId Tape::dense(NodeId input, NodeId weight, NodeId bias) {
  const Tensor& x = value(input);
  const Tensor& w = value(weight);
  const Tensor& b = value(bias);
  require_rank(x, 2, "dense input");
  require_rank(w, 2, "dense weight");
  require_rank(b, 1, "dense bias");
  const std::size_t batch = x.dim(0), in = x.dim(1), out = w.dim(0);
  if (w.dim(1) != in || b.dim(0) != out) {
    throw UsageError("dense: weight " + shape_string(w.shape()) + " incompatible with input " +
                     shape_string(x.shape()));
  }
  Tensor y({batch, out});
  for (std::size_t n = 0; n < batch; ++n) {
    const double* xr = &x.data()[n * in];
    for (std::size_t o = 0; o < out; ++o) {
      const double* wr = &w.data()[o * in];
      double s = b[o];
      for (std::size_t i = 0; i < in; ++i) s += wr[i] * xr[i];
      y[n * out + o] = s;
    }
  }
  Node node{.op = Op::dense, .inputs = {input, weight, bias}, .value = std::move(y)};
  node.requires_grad = nodes_[input].requires_grad || nodes_[weight].requires_grad ||
                       nodes_[bias].requires_grad;
  return push(std::move(node));
}

Tape::NodeId Tape::relu(NodeId input) {
  Tensor y = value(input);
  for (auto& v : y.data()) v = v > 0.0 ? v : 0.0;
  Node node{.op = Op::relu, .inputs = {input}, .value = std::move(y)};
  node.requires_grad = nodes_[input].requires_grad;
  return push(std::move(node));
}

Tape::NodeId Tape::flatten(NodeId input) {
  const Tensor& x = value(input);
  const std::size_t batch = x.dim(0);
  Node node{.op = Op::flatten, .inputs = {input}, .value = x.reshaped({batch, x.size() / batch})};
  node.requires_grad = nodes_[input].requires_grad;
  return push(std::move(node));
}

Tape::NodeId Tape::softmax_cross_entropy(NodeId logits, const Tensor& targets) {
  const Tensor& z = value(logits);
  require_rank(z, 2, "softmax_cross_entropy logits");
  require_same_shape(z, targets, "softmax_cross_entropy");
  const std::size_t batch = z.dim(0), k = z.dim(1);
  std::vector<double> residual(z.size());
  double total = 0.0;
  for (std::size_t n = 0; n < batch; ++n) {
    const double* zr = &z.data()[n * k];
    const double* tr = &targets.data()[n * k];
    const double zmax = *std::max_element(zr, zr + k);
    double denom = 0.0;
    for (std::size_t c = 0; c < k; ++c) denom += std::exp(zr[c] - zmax);
    const double log_denom = std::log(denom) + zmax;
    double row = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      if (tr[c] != 0.0) row -= tr[c] * (zr[c] - log_denom);
      residual[n * k + c] = std::exp(zr[c] - log_denom) - tr[c];
    }
    total += row;
  }
  Node node{.op = Op::softmax_ce,
            .inputs = {logits},
            .value = Tensor({1}, std::vector<double>{total / static_cast<double>(batch)})};
  node.requires_grad = nodes_[logits].requires_grad;
  node.saved = std::move(residual);
  node.factor = 1.0 / static_cast<double>(batch);
  return push(std::move(node));
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  require_same_shape(value(a), value(b), "add");
  Tensor y = value(a);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += value(b)[i];
  Node node{.op = Op::add, .inputs = {a, b}, .value = std::move(y)};
  node.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  return push(std::move(node));
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
  require_same_shape(value(a), value(b), "mul");
  Tensor y = value(a);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= value(b)[i];
  Node node{.op = Op::mul, .inputs = {a, b}, .value = std::move(y)};
  node.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  return push(std::move(node));
}

Tape::NodeId Tape::square(NodeId a) { return mul(a, a); }

Tape::NodeId Tape::scale(NodeId a, double factor) {
  Tensor y = value(a);
  for (auto& v : y.data()) v *= factor;
  Node node{.op = Op::scale, .inputs = {a}, .value = std::move(y)};
  node.requires_grad = nodes_[a].requires_grad;
  node.factor = factor;
  return push(std::move(node));
}

Tape::NodeId Tape::sum(NodeId a) {
  double s = 0.0;
  for (double v : value(a).data()) s += v;
  Node node{.op = Op::sum, .inputs = {a}, .value = Tensor({1}, std::vector<double>{s})};
  node.requires_grad = nodes_[a].requires_grad;
  return push(std::move(node));
}

std::vector<double> Tape::gradient(NodeId output) const {
  if (output >= nodes_.size()) throw UsageError("backward: unknown output node");
  if (nodes_[output].value.size() != 1) {
    throw UsageError("backward: terminal node must be a scalar, got shape " +
                     shape_string(nodes_[output].value.shape()));
  }
  std::vector<double> result(num_params_, 0.0);
  if (!nodes_[output].requires_grad) return result;

  std::vector<std::vector<double>> grads(output + 1);
  grads[output] = {1.0};
  for (std::size_t id = output + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!node.requires_grad || grads[id].empty()) continue;
    if (node.op == Op::parameter) {
      for (std::size_t i = 0; i < grads[id].size(); ++i) result[node.param_offset + i] += grads[id][i];
      continue;
    }
    backprop(node, grads[id], grads);
    grads[id].clear();
    grads[id].shrink_to_fit();
  }
  return result;
}

void Tape::backprop(const Node& node, const std::vector<double>& up,
                    std::vector<std::vector<double>>& grads) const {
  auto wants = [&](std::size_t slot) { return nodes_[node.inputs[slot]].requires_grad; };
  auto grad_of = [&](std::size_t slot) -> std::vector<double>& {
    auto& g = grads[node.inputs[slot]];
    if (g.empty()) g.assign(nodes_[node.inputs[slot]].value.size(), 0.0);
    return g;
  };

  switch (node.op) {
    case Op::constant:
    case Op::parameter:
      return;

    case Op::conv2d: {
      const Tensor& x = nodes_[node.inputs[0]].value;
      const Tensor& w = nodes_[node.inputs[1]].value;
      const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
      const std::size_t cout = w.dim(0), k = w.dim(2);
      const std::size_t oh = h - k + 1, ow = wd - k + 1;
      if (wants(2)) {
        auto& gb = grad_of(2);
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t o = 0; o < cout; ++o) {
            const double* uo = &up[(n * cout + o) * oh * ow];
            double s = 0.0;
            for (std::size_t i = 0; i < oh * ow; ++i) s += uo[i];
            gb[o] += s;
          }
      }
      const bool gx = wants(0), gw = wants(1);
      if (!gx && !gw) return;
      std::vector<double>* dx = gx ? &grad_of(0) : nullptr;
      std::vector<double>* dw = gw ? &grad_of(1) : nullptr;
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t o = 0; o < cout; ++o) {
          const double* uo = &up[(n * cout + o) * oh * ow];
          for (std::size_t c = 0; c < cin; ++c) {
            const std::size_t xbase = (n * cin + c) * h * wd;
            const std::size_t wbase = (o * cin + c) * k * k;
            for (std::size_t p = 0; p < k; ++p)
              for (std::size_t q = 0; q < k; ++q) {
                const double wv = w[wbase + p * k + q];
                double acc = 0.0;
                for (std::size_t i = 0; i < oh; ++i) {
                  const std::size_t xrow = xbase + (i + p) * wd + q;
                  const double* urow = uo + i * ow;
                  for (std::size_t j = 0; j < ow; ++j) {
                    if (gw) acc += urow[j] * x[xrow + j];
                    if (gx) (*dx)[xrow + j] += urow[j] * wv;
                  }
                }
                if (gw) (*dw)[wbase + p * k + q] += acc;
              }
          }
        }
      return;
    }

    case Op::max_pool2d: {
      auto& gx = grad_of(0);
      for (std::size_t i = 0; i < up.size(); ++i) gx[node.argmax[i]] += up[i];
      return;
    }

    case Op::dense: {
      const Tensor& x = nodes_[node.inputs[0]].value;
      const Tensor& w = nodes_[node.inputs[1]].value;
      const std::size_t batch = x.dim(0), in = x.dim(1), out = w.dim(0);
      if (wants(0)) {
        auto& gx = grad_of(0);
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t o = 0; o < out; ++o) {
            const double u = up[n * out + o];
            const double* wr = &w.data()[o * in];
            for (std::size_t i = 0; i < in; ++i) gx[n * in + i] += u * wr[i];
          }
      }
      if (wants(1)) {
        auto& gw = grad_of(1);
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t o = 0; o < out; ++o) {
            const double u = up[n * out + o];
            const double* xr = &x.data()[n * in];
            for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += u * xr[i];
          }
      }
      if (wants(2)) {
        auto& gb = grad_of(2);
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t o = 0; o < out; ++o) gb[o] += up[n * out + o];
      }
      return;
    }

    case Op::relu: {
      auto& gx = grad_of(0);
      const Tensor& x = nodes_[node.inputs[0]].value;
      for (std::size_t i = 0; i < up.size(); ++i) {
        if (x[i] > 0.0) gx[i] += up[i];
      }
      return;
    }

    case Op::flatten: {
      auto& gx = grad_of(0);
      for (std::size_t i = 0; i < up.size(); ++i) gx[i] += up[i];
      return;
    }

    case Op::softmax_ce: {
      auto& gz = grad_of(0);
      const double s = up[0] * node.factor;
      for (std::size_t i = 0; i < gz.size(); ++i) gz[i] += s * node.saved[i];
      return;
    }

    case Op::add: {
      for (std::size_t slot = 0; slot < 2; ++slot) {
        if (!wants(slot)) continue;
        auto& g = grad_of(slot);
        for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i];
      }
      return;
    }

    case Op::mul: {
      const Tensor& a = nodes_[node.inputs[0]].value;
      const Tensor& b = nodes_[node.inputs[1]].value;
      if (wants(0)) {
        auto& g = grad_of(0);
        for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i] * b[i];
      }
      if (wants(1)) {
        auto& g = grad_of(1);
        for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i] * a[i];
      }
      return;
    }

    case Op::scale: {
      auto& g = grad_of(0);
      for (std::size_t i = 0; i < up.size(); ++i) g[i] += node.factor * up[i];
      return;
    }

    case Op::sum: {
      auto& g = grad_of(0);
      for (auto& v : g) v += up[0];
      return;
    }
  }
}

}  // namespace fedflat
