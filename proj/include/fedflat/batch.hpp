#pragma once

#include "fedflat/tensor.hpp"

namespace fedflat {

/// A minibatch: inputs [B, ...sample shape] and target distributions
/// [B, num_classes] (one-hot unless mixed).
struct Batch {
  Tensor inputs;
  Tensor targets;

  [[nodiscard]] std::size_t size() const { return inputs.empty() ? 0 : inputs.dim(0); }
};

}  // namespace fedflat
