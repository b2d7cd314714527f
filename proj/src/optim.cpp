#include "fedflat/optim.hpp"

#include <cmath>

#include "fedflat/errors.hpp"

namespace fedflat {

void validate(const SgdConfig& cfg) {
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw ConfigError("sgd: lr must be >= 0");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw ConfigError("sgd: momentum must be in [0,1)");
  if (!(cfg.weight_decay >= 0.0)) throw ConfigError("sgd: weight_decay must be >= 0");
}

void validate(const SamConfig& cfg) {
  if (!(cfg.rho >= 0.0) || !std::isfinite(cfg.rho)) throw ConfigError("sam: rho must be >= 0");
  if (!(cfg.eta >= 0.0) || !std::isfinite(cfg.eta)) throw ConfigError("sam: eta must be >= 0");
}

void validate(const CyclicLr& sched) {
  if (sched.cycle < 1) throw ConfigError("swa: cycle must be >= 1");
  if (!(sched.gamma1 > 0.0) || !(sched.gamma2 > 0.0)) throw ConfigError("swa: learning rates must be positive");
}

void sgd_step(std::span<double> params, std::span<const double> grad, SgdState& state,
              const SgdConfig& cfg) {
  if (params.size() != grad.size()) throw UsageError("sgd_step: gradient length mismatch");
  const std::size_t n = params.size();
  if (cfg.momentum == 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      const double g = cfg.weight_decay != 0.0 ? grad[i] + cfg.weight_decay * params[i] : grad[i];
      params[i] -= cfg.lr * g;
    }
    return;
  }
  if (state.momentum_buffer.empty()) state.momentum_buffer.assign(n, 0.0);
  if (state.momentum_buffer.size() != n) throw UsageError("sgd_step: momentum buffer length mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    const double g = cfg.weight_decay != 0.0 ? grad[i] + cfg.weight_decay * params[i] : grad[i];
    double& buf = state.momentum_buffer[i];
    buf = cfg.momentum * buf + g;
    params[i] -= cfg.lr * buf;
  }
}

std::vector<double> sam_perturb(std::span<const double> params, std::span<const double> grad,
                                const SamConfig& cfg) {
  if (params.size() != grad.size()) throw UsageError("sam_perturb: gradient length mismatch");
  const std::size_t n = grad.size();
  std::vector<double> eps(n, 0.0);
  if (cfg.rho == 0.0) return eps;
  if (!cfg.adaptive) {
    const double g = vec::norm(grad);
    if (!(g >= 1e-12)) return eps;
    const double s = cfg.rho / g;
    for (std::size_t i = 0; i < n; ++i) eps[i] = s * grad[i];
    return eps;
  }
  double denom = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double tg = (std::abs(params[i]) + cfg.eta) * grad[i];
    denom += tg * tg;
  }
  denom = std::sqrt(denom);
  if (!(denom >= 1e-12)) return eps;
  const double s = cfg.rho / denom;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = std::abs(params[i]) + cfg.eta;
    eps[i] = s * t * t * grad[i];
  }
  return eps;
}

double sam_step(std::span<double> params, const Objective& objective, SgdState& state,
                const SamConfig& sam, const SgdConfig& sgd) {
  const LossGrad first = objective(params);
  const std::vector<double> eps = sam_perturb(params, first.grad, sam);
  std::vector<double> perturbed(params.begin(), params.end());
  for (std::size_t i = 0; i < perturbed.size(); ++i) {
    if (eps[i] != 0.0) perturbed[i] += eps[i];
  }
  const LossGrad second = objective(perturbed);
  sgd_step(params, second.grad, state, sgd);
  return first.loss;
}

double cyclic_lr(std::size_t i, const CyclicLr& sched) {
  if (i < 1) throw UsageError("cyclic_lr: step index is 1-based");
  if (sched.cycle < 1) throw UsageError("cyclic_lr: cycle must be >= 1");
  if (sched.cycle == 1) return sched.gamma1;
  const double t = static_cast<double>((i - 1) % sched.cycle + 1) / static_cast<double>(sched.cycle);
  return (1.0 - t) * sched.gamma1 + t * sched.gamma2;
}

}  // namespace fedflat
