#pragma once

#include "core/losses.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace mstage::test {

inline Tensor random_tensor(std::vector<size_t> shape, RngStream& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-scale, scale);
  return t;
}

inline PhaseLabels random_labels(size_t t_len, size_t classes, RngStream& rng) {
  PhaseLabels labels(t_len);
  for (auto& l : labels) l = static_cast<int32_t>(rng.below(classes));
  return labels;
}

}  // namespace mstage::test
