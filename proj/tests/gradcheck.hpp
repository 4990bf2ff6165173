#pragma once

// Central finite-difference gradient checking (test-only).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "xlsum/tensor.hpp"

namespace xlsum::testing {

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  if (scale < 1e-7) return std::abs(analytic - numeric) < 1e-9 ? 0.0 : std::abs(analytic - numeric);
  return std::abs(analytic - numeric) / scale;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Compares backward() against central differences of `loss_fn` for the
// given inputs. At most `max_entries` coordinates per input are perturbed
// (chosen by `seed`); 0 means all of them. A positive `resolution` is the
// smallest gradient magnitude the difference quotient can resolve at this
// step (loss roundoff / 2h); errors on smaller entries are measured relative
// to it instead of to the entry itself.
inline GradCheckResult grad_check(const std::function<ad::Tensor()>& loss_fn,
                                  std::vector<ad::Tensor> inputs, double step = 1e-5,
                                  std::size_t max_entries = 0, std::uint64_t seed = 1,
                                  double resolution = 0.0) {
  for (auto& t : inputs) t.zero_grad();
  ad::backward(loss_fn());
  GradCheckResult result;
  std::mt19937_64 gen(seed);
  for (auto& t : inputs) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    std::vector<std::size_t> coords(t.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (max_entries && coords.size() > max_entries) {
      std::shuffle(coords.begin(), coords.end(), gen);
      coords.resize(max_entries);
    }
    auto values = t.mutable_data();
    for (std::size_t i : coords) {
      const double saved = values[i];
      auto central = [&](double h) {
        ad::NoGradGuard guard;
        values[i] = saved + h;
        const double plus = loss_fn().item();
        values[i] = saved - h;
        const double minus = loss_fn().item();
        values[i] = saved;
        return (plus - minus) / (2.0 * h);
      };
      const double numeric = central(step);
      const double err = resolution > 0.0
                             ? std::abs(analytic[i] - numeric) /
                                   std::max({std::abs(analytic[i]), std::abs(numeric), resolution})
                             : relative_error(analytic[i], numeric);
      result.max_rel_error = std::max(result.max_rel_error, err);
      ++result.checked;
    }
  }
  return result;
}

inline ad::Tensor random_tensor(const ad::Shape& shape, std::mt19937_64& gen, double lo = -1.0,
                                double hi = 1.0, bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(ad::numel_of(shape));
  for (auto& x : v) x = dist(gen);
  return ad::Tensor::from(shape, std::move(v), requires_grad);
}

}  // namespace xlsum::testing
