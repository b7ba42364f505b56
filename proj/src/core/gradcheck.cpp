#include "core/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mstage {

std::string GradCheckReport::to_string() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << " max_rel_err=" << max_rel_err;
  if (!worst_param.empty())
    os << " worst=" << worst_param << "[" << worst_index << "]";
  for (const auto& e : entries)
    os << "\n  " << e.name << ": rel_err=" << e.max_rel_err << " at [" << e.worst_index
       << "] analytic=" << e.analytic << " numeric=" << e.numeric;
  return os.str();
}

GradCheckReport finite_difference_check(const std::function<double(const ParamSet&)>& loss_fn,
                                        ParamSet& ps, double eps, double tolerance) {
  if (eps <= 0) fail(ErrorKind::InvalidArg, "finite difference eps must be positive");
  double base_a = loss_fn(ps);
  double base_b = loss_fn(ps);
  if (base_a != base_b)
    fail(ErrorKind::InvalidArg, "loss function is not deterministic: repeated evaluation differs");
  if (!std::isfinite(base_a)) fail(ErrorKind::Numeric, "loss is not finite at base point");

  GradCheckReport report;
  for (auto& p : ps.params()) {
    GradCheckEntry entry;
    entry.name = p.name;
    for (size_t i = 0; i < p.value.size(); ++i) {
      double saved = p.value[i];
      p.value[i] = saved + eps;
      double f_plus = loss_fn(ps);
      p.value[i] = saved - eps;
      double f_minus = loss_fn(ps);
      p.value[i] = saved;

      double numeric = (f_plus - f_minus) / (2.0 * eps);
      double analytic = p.grad[i];
      double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
      double rel = std::fabs(analytic - numeric) / denom;
      if (rel > entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.worst_index = i;
        entry.analytic = analytic;
        entry.numeric = numeric;
      }
    }
    if (entry.max_rel_err > report.max_rel_err) {
      report.max_rel_err = entry.max_rel_err;
      report.worst_param = entry.name;
      report.worst_index = entry.worst_index;
    }
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.max_rel_err <= tolerance;
  return report;
}

}  // namespace mstage
