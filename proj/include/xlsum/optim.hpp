#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "xlsum/tensor.hpp"

namespace xlsum::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

// Per-tensor first/second moment estimates and step count.
struct AdamSlot {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

// One Adam update of `param` from `grad`. Bias-corrected.
void adam_step(std::span<double> param, std::span<const double> grad,
               AdamSlot& slot, const AdamConfig& config);

// Adam over a fixed parameter list. A parameter without a gradient in the
// current step is skipped entirely: neither its values nor its moments move.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config);

  void step();
  void zero_grad();
  // Scales all present gradients so their joint L2 norm is <= max_norm.
  // Returns the norm before scaling.
  double clip_grad_norm(double max_norm);
  AdamConfig& config() { return config_; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamSlot> slots_;
  AdamConfig config_;
};

}  // namespace xlsum::ad
