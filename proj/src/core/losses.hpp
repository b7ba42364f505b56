#pragma once

#include <cstdint>
#include <vector>

#include "core/tensor.hpp"

namespace mstage {

using PhaseLabels = std::vector<int32_t>;

constexpr double kProbClamp = 1e-12;

struct LossValue {
  double total = 0.0;
  double ce_term = 0.0;
  double smooth_term = 0.0;
  double lambda = 1.0;
};

// Predictor-stage loss on a T x C probability matrix:
//   ce     = (1/T) sum_t -log(max(p[t, label_t], clamp))
//   smooth = (1/(T*C)) sum_m sum_{t<T-1} (p[t,m] - p[t+1,m])^2
//   total  = ce + lambda * smooth
// grad_probs, when given, receives d(total)/d(probs); chain it through
// softmax_rows_backward to reach pre-softmax inputs.
LossValue predictor_loss(const Tensor& probs, const PhaseLabels& labels, double lambda = 1.0,
                         Tensor* grad_probs = nullptr);

// Sum over refiner stages of the mean frame cross-entropy; no smoothing term.
LossValue refinement_loss(const std::vector<Tensor>& stage_probs, const PhaseLabels& labels,
                          std::vector<Tensor>* grad_probs = nullptr);

}  // namespace mstage
