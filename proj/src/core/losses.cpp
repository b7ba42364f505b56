#include "core/losses.hpp"

#include <cmath>
#include <sstream>

namespace mstage {

namespace {

void check_labels(const Tensor& probs, const PhaseLabels& labels, const char* op) {
  if (probs.rank() != 2)
    fail(ErrorKind::InvalidArg, std::string(op) + ": probabilities must be rank 2");
  size_t t_len = probs.dim(0);
  size_t classes = probs.dim(1);
  if (t_len == 0) fail(ErrorKind::InvalidArg, std::string(op) + ": empty sequence");
  if (labels.size() != t_len) {
    std::ostringstream os;
    os << op << ": length mismatch, " << t_len << " probability rows vs " << labels.size()
       << " labels";
    fail(ErrorKind::InvalidArg, os.str());
  }
  for (size_t t = 0; t < t_len; ++t) {
    if (labels[t] < 0 || static_cast<size_t>(labels[t]) >= classes) {
      std::ostringstream os;
      os << op << ": label " << labels[t] << " at frame " << t << " out of range [0, "
         << classes << ")";
      fail(ErrorKind::InvalidArg, os.str());
    }
  }
}

// mean frame cross-entropy with clamp; adds gradient into grad when non-null
double cross_entropy(const Tensor& probs, const PhaseLabels& labels, Tensor* grad) {
  size_t t_len = probs.dim(0);
  double ce = 0.0;
  for (size_t t = 0; t < t_len; ++t) {
    double p = probs.at2(t, static_cast<size_t>(labels[t]));
    if (p > kProbClamp) {
      ce -= std::log(p);
      if (grad) grad->at2(t, static_cast<size_t>(labels[t])) += -1.0 / (p * static_cast<double>(t_len));
    } else {
      ce -= std::log(kProbClamp);
      // clamped region: loss is flat in p
    }
  }
  return ce / static_cast<double>(t_len);
}

}  // namespace

LossValue predictor_loss(const Tensor& probs, const PhaseLabels& labels, double lambda,
                         Tensor* grad_probs) {
  check_labels(probs, labels, "predictor_loss");
  size_t t_len = probs.dim(0), classes = probs.dim(1);

  if (grad_probs) *grad_probs = Tensor::zeros(probs.shape());
  LossValue loss;
  loss.lambda = lambda;
  loss.ce_term = cross_entropy(probs, labels, grad_probs);

  double smooth = 0.0;
  double norm = static_cast<double>(t_len) * static_cast<double>(classes);
  for (size_t t = 0; t + 1 < t_len; ++t) {
    const double* pt = probs.row(t);
    const double* pn = probs.row(t + 1);
    for (size_t m = 0; m < classes; ++m) {
      double d = pt[m] - pn[m];
      smooth += d * d;
      if (grad_probs) {
        double g = lambda * 2.0 * d / norm;
        grad_probs->at2(t, m) += g;
        grad_probs->at2(t + 1, m) -= g;
      }
    }
  }
  loss.smooth_term = smooth / norm;
  loss.total = loss.ce_term + lambda * loss.smooth_term;
  if (!std::isfinite(loss.total)) fail(ErrorKind::Numeric, "predictor_loss is not finite");
  return loss;
}

LossValue refinement_loss(const std::vector<Tensor>& stage_probs, const PhaseLabels& labels,
                          std::vector<Tensor>* grad_probs) {
  if (stage_probs.empty())
    fail(ErrorKind::InvalidArg, "refinement_loss: empty stage list");
  if (grad_probs) grad_probs->clear();

  LossValue loss;
  loss.lambda = 0.0;
  for (const Tensor& probs : stage_probs) {
    check_labels(probs, labels, "refinement_loss");
    Tensor* g = nullptr;
    if (grad_probs) {
      grad_probs->push_back(Tensor::zeros(probs.shape()));
      g = &grad_probs->back();
    }
    loss.ce_term += cross_entropy(probs, labels, g);
  }
  loss.smooth_term = 0.0;
  loss.total = loss.ce_term;
  if (!std::isfinite(loss.total)) fail(ErrorKind::Numeric, "refinement_loss is not finite");
  return loss;
}

}  // namespace mstage
