#pragma once

#include <functional>
#include <string>

#include "core/tensor.hpp"

namespace mstage {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  std::string worst_param;
  size_t worst_index = 0;
  bool passed = false;

  std::string to_string() const;
};

// Central-difference check of the analytic gradients stored in ps against
// loss_fn. The caller runs its backward pass first so ps carries the analytic
// gradient at the unperturbed point; loss_fn must be a deterministic pure
// evaluation (verified by evaluating twice). Relative error uses
// |a-n| / max(|a|, |n|, 1e-3).
GradCheckReport finite_difference_check(const std::function<double(const ParamSet&)>& loss_fn,
                                        ParamSet& ps, double eps = 1e-5,
                                        double tolerance = 1e-4);

}  // namespace mstage
