#pragma once

#include <cstdint>

#include "core/tensor.hpp"

namespace mstage {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a ParamSet. Moments are allocated to match the
// parameter shapes at construction; step() consumes and zeroes the gradients.
class AdamState {
public:
  explicit AdamState(const ParamSet& ps, AdamConfig cfg = {});

  void step(ParamSet& ps);

  uint64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

private:
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  uint64_t t_ = 0;
};

// Scales gradients so their global L2 norm is at most max_norm.
void clip_grad_norm(ParamSet& ps, double max_norm);

}  // namespace mstage
