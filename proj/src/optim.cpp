#include "xlsum/optim.hpp"

#include <cmath>

#include "xlsum/errors.hpp"

namespace xlsum::ad {

void adam_step(std::span<double> param, std::span<const double> grad, AdamSlot& slot,
               const AdamConfig& config) {
  if (param.size() != grad.size()) throw DimensionError("adam_step: gradient size mismatch");
  if (slot.m.empty()) {
    slot.m.assign(param.size(), 0.0);
    slot.v.assign(param.size(), 0.0);
  }
  ++slot.step;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(slot.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(slot.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    slot.m[i] = config.beta1 * slot.m[i] + (1.0 - config.beta1) * grad[i];
    slot.v[i] = config.beta2 * slot.v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
    const double m_hat = slot.m[i] / bc1;
    const double v_hat = slot.v[i] / bc2;
    param[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
  }
}

Adam::Adam(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), slots_(params_.size()), config_(config) {}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    adam_step(p.mutable_data(), p.grad(), slots_[i], config_);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double Adam::clip_grad_norm(double max_norm) {
  double ss = 0.0;
  for (const auto& p : params_) {
    for (double g : p.grad()) ss += g * g;
  }
  const double norm = std::sqrt(ss);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params_) {
      if (!p.has_grad()) continue;
      for (double& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

}  // namespace xlsum::ad
