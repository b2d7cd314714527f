#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedflat/tensor.hpp"

namespace fedflat {

/// Append-only record of primitive operations for reverse-mode
/// differentiation. Nodes are stored in creation order, which is a valid
/// topological order. A tape is rebuilt on every forward pass.
///
/// Parameter leaves map to a block of a flat parameter vector; backward
/// scatters their gradients into a vector of that length.
class Tape {
 public:
  using NodeId = std::size_t;

  explicit Tape(std::size_t num_params) : num_params_(num_params) {}

  NodeId constant(Tensor value);
  NodeId parameter(std::span<const double> params, const ParamEntry& entry);

  /// input [B,C,H,W], weight [O,C,k,k], bias [O] -> [B,O,H-k+1,W-k+1]; stride 1, no padding.
  NodeId conv2d(NodeId input, NodeId weight, NodeId bias);
  /// Non-overlapping size x size windows, floor on ragged edges.
  NodeId max_pool2d(NodeId input, std::size_t size);
  /// input [B,in], weight [out,in], bias [out] -> [B,out].
  NodeId dense(NodeId input, NodeId weight, NodeId bias);
  NodeId relu(NodeId input);
  /// [B, ...] -> [B, prod(...)]
  NodeId flatten(NodeId input);
  /// Mean over the batch of -sum_k target_k * log softmax(logits)_k.
  /// targets [B,K] rows are probability vectors (one-hot or mixed).
  NodeId softmax_cross_entropy(NodeId logits, const Tensor& targets);

  // Elementwise helpers for scalar test objectives.
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId square(NodeId a);
  NodeId scale(NodeId a, double factor);
  NodeId sum(NodeId a);

  [[nodiscard]] const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
  [[nodiscard]] std::size_t num_params() const noexcept { return num_params_; }

  /// Gradient of the scalar node `output` with respect to every parameter
  /// leaf, laid out as the flat parameter vector. Throws UsageError when
  /// `output` is not a scalar.
  [[nodiscard]] std::vector<double> gradient(NodeId output) const;

 private:
  enum class Op {
    constant, parameter, conv2d, max_pool2d, dense, relu, flatten, softmax_ce,
    add, mul, scale, sum,
  };

  struct Node {
    Op op;
    std::vector<NodeId> inputs;
    Tensor value;
    bool requires_grad = false;
    std::size_t param_offset = 0;
    double factor = 0.0;
    std::vector<double> saved{};      // softmax probabilities minus targets
    std::vector<std::size_t> argmax{};  // max-pool winners
  };

  NodeId push(Node node);
  void backprop(const Node& node, const std::vector<double>& upstream,
                std::vector<std::vector<double>>& grads) const;

  std::size_t num_params_;
  std::vector<Node> nodes_;
};

}  // namespace fedflat
