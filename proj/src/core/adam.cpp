#include "core/adam.hpp"

#include <cmath>

namespace mstage {

AdamState::AdamState(const ParamSet& ps, AdamConfig cfg) : cfg_(cfg) {
  if (cfg_.lr <= 0) fail(ErrorKind::Config, "adam learning rate must be positive");
  m_.reserve(ps.size());
  v_.reserve(ps.size());
  for (const auto& p : ps.params()) {
    m_.push_back(Tensor::zeros(p.value.shape()));
    v_.push_back(Tensor::zeros(p.value.shape()));
  }
}

void AdamState::step(ParamSet& ps) {
  if (ps.empty()) fail(ErrorKind::InvalidArg, "adam step on empty parameter set");
  if (ps.size() != m_.size())
    fail(ErrorKind::InvalidArg, "adam state does not match parameter set");

  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t pi = 0; pi < ps.size(); ++pi) {
    Param& p = ps.params()[pi];
    if (!p.grad.same_shape(m_[pi]))
      fail(ErrorKind::InvalidArg, "gradient shape changed for parameter " + p.name);
    double* val = p.value.data();
    double* grd = p.grad.data();
    double* m = m_[pi].data();
    double* v = v_[pi].data();
    for (size_t i = 0; i < p.value.size(); ++i) {
      double g = grd[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      val[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      grd[i] = 0.0;
    }
  }
}

void clip_grad_norm(ParamSet& ps, double max_norm) {
  double sq = 0.0;
  for (const auto& p : ps.params())
    for (size_t i = 0; i < p.grad.size(); ++i) sq += p.grad[i] * p.grad[i];
  double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  double scale = max_norm / norm;
  for (auto& p : ps.params())
    for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] *= scale;
}

}  // namespace mstage
