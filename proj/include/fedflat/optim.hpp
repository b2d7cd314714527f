#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedflat/model.hpp"

namespace fedflat {

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.0;
  double weight_decay = 0.0;
};

/// Momentum buffer; empty until the first step with momentum > 0.
struct SgdState {
  std::vector<double> momentum_buffer;
};

struct SamConfig {
  double rho = 0.05;
  bool adaptive = false;
  double eta = 0.0;  // adaptive only: t = |theta| + eta
};

struct CyclicLr {
  double gamma1 = 0.01;
  double gamma2 = 1e-4;
  std::size_t cycle = 1;
};

void validate(const SgdConfig& cfg);
void validate(const SamConfig& cfg);
void validate(const CyclicLr& sched);

/// g' = grad + wd * params; buf = momentum * buf + g'; params -= lr * buf
/// (buf skipped when momentum == 0). In place.
void sgd_step(std::span<double> params, std::span<const double> grad, SgdState& state,
              const SgdConfig& cfg);

/// First-order ascent direction scaled to the rho-ball.
///   plain:    rho * g / |g|
///   adaptive: rho * t^2 g / |t g|, t = |theta| + eta
/// Returns zeros when the denominator is below 1e-12.
std::vector<double> sam_perturb(std::span<const double> params, std::span<const double> grad,
                                const SamConfig& cfg);

/// Two-pass sharpness-aware step: gradient at theta, perturb, gradient at
/// theta + eps on the same objective, SGD step at theta with the second
/// gradient. Returns the loss at theta.
double sam_step(std::span<double> params, const Objective& objective, SgdState& state,
                const SamConfig& sam, const SgdConfig& sgd);

/// Learning rate for 1-based step i of a cycle of length c decaying from
/// gamma1 to gamma2. c == 1 is the constant rate gamma1.
double cyclic_lr(std::size_t i, const CyclicLr& sched);

}  // namespace fedflat
