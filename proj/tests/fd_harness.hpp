#pragma once

// Finite-difference oracles shared by the unit tests and the acceptance
// suite. Each harness builds a small random instance, runs the layer's own
// backward pass, and checks it against central differences.

#include "core/gradcheck.hpp"
#include "core/layers.hpp"
#include "core/losses.hpp"
#include "helpers.hpp"

namespace mstage::test {

inline double probe_sum(const Tensor& out, const Tensor& probe) {
  double s = 0.0;
  for (size_t i = 0; i < out.size(); ++i) s += out[i] * probe[i];
  return s;
}

inline GradCheckReport fd_check_linear(uint64_t seed) {
  RngStream rng(seed);
  ParamSet ps;
  ps.add("x", random_tensor({3, 4}, rng));
  ps.add("w", random_tensor({4, 2}, rng));
  ps.add("b", random_tensor({2}, rng));
  Tensor probe = random_tensor({3, 2}, rng);

  LinearCtx ctx;
  linear_forward(ps.at("x").value, ps.at("w").value, ps.at("b").value, &ctx);
  ps.at("x").grad =
      linear_backward(probe, ctx, ps.at("w").value, ps.at("w").grad, ps.at("b").grad);

  auto loss = [&probe](const ParamSet& q) {
    return probe_sum(linear_forward(q.at("x").value, q.at("w").value, q.at("b").value), probe);
  };
  return finite_difference_check(loss, ps);
}

inline GradCheckReport fd_check_conv(uint64_t seed, bool causal) {
  RngStream rng(seed);
  const size_t t_len = 9, d_in = 3, d_out = 2, k = 3;
  const int dilation = 2;
  ParamSet ps;
  ps.add("x", random_tensor({t_len, d_in}, rng));
  ps.add("kernel", random_tensor({d_out, k, d_in}, rng));
  ps.add("bias", random_tensor({d_out}, rng));
  Tensor probe = random_tensor({t_len, d_out}, rng);

  ConvCtx ctx;
  conv1d_forward(ps.at("x").value, ps.at("kernel").value, ps.at("bias").value, dilation,
                 causal, &ctx);
  ps.at("x").grad = conv1d_backward(probe, ctx, ps.at("kernel").value, dilation, causal,
                                    ps.at("kernel").grad, ps.at("bias").grad);

  auto loss = [&probe, causal](const ParamSet& q) {
    return probe_sum(conv1d_forward(q.at("x").value, q.at("kernel").value,
                                    q.at("bias").value, dilation, causal),
                     probe);
  };
  return finite_difference_check(loss, ps);
}

inline GruWeights gru_weights_of(const ParamSet& ps) {
  return GruWeights{&ps.at("wz").value, &ps.at("uz").value, &ps.at("bz").value,
                    &ps.at("wr").value, &ps.at("ur").value, &ps.at("br").value,
                    &ps.at("wh").value, &ps.at("uh").value, &ps.at("bh").value};
}

inline GradCheckReport fd_check_gru(uint64_t seed) {
  RngStream rng(seed);
  const size_t t_len = 5, d = 3, h = 4;
  ParamSet ps;
  ps.add("x", random_tensor({t_len, d}, rng));
  for (const char* n : {"wz", "wr", "wh"}) ps.add(n, random_tensor({d, h}, rng));
  for (const char* n : {"uz", "ur", "uh"}) ps.add(n, random_tensor({h, h}, rng));
  for (const char* n : {"bz", "br", "bh"}) ps.add(n, random_tensor({h}, rng));
  Tensor probe = random_tensor({t_len, h}, rng);

  GruCtx ctx;
  gru_forward(ps.at("x").value, gru_weights_of(ps), &ctx);
  GruGrads grads{&ps.at("wz").grad, &ps.at("uz").grad, &ps.at("bz").grad,
                 &ps.at("wr").grad, &ps.at("ur").grad, &ps.at("br").grad,
                 &ps.at("wh").grad, &ps.at("uh").grad, &ps.at("bh").grad};
  ps.at("x").grad = gru_backward(probe, ctx, gru_weights_of(ps), grads);

  auto loss = [&probe](const ParamSet& q) {
    return probe_sum(gru_forward(q.at("x").value, gru_weights_of(q)), probe);
  };
  return finite_difference_check(loss, ps);
}

inline GradCheckReport fd_check_softmax_ce(uint64_t seed) {
  RngStream rng(seed);
  const size_t t_len = 6, classes = 3;
  ParamSet ps;
  ps.add("logits", random_tensor({t_len, classes}, rng, 2.0));
  PhaseLabels labels = random_labels(t_len, classes, rng);

  SoftmaxCtx ctx;
  Tensor probs = softmax_rows(ps.at("logits").value, &ctx);
  std::vector<Tensor> gp;
  refinement_loss({probs}, labels, &gp);
  ps.at("logits").grad = softmax_rows_backward(gp[0], ctx);

  auto loss = [&labels](const ParamSet& q) {
    return refinement_loss({softmax_rows(q.at("logits").value)}, labels).total;
  };
  return finite_difference_check(loss, ps);
}

// Combined CE + smoothing loss on softmax outputs of a small random instance.
inline GradCheckReport fd_check_predictor_loss(uint64_t seed) {
  RngStream rng(seed);
  const size_t t_len = 6, classes = 3, d = 4;
  const double lambda = 1.0;
  ParamSet ps;
  ps.add("x", random_tensor({t_len, d}, rng));
  ps.add("w", random_tensor({d, classes}, rng));
  ps.add("b", random_tensor({classes}, rng));
  PhaseLabels labels = random_labels(t_len, classes, rng);

  LinearCtx lctx;
  SoftmaxCtx sctx;
  Tensor logits = linear_forward(ps.at("x").value, ps.at("w").value, ps.at("b").value, &lctx);
  Tensor probs = softmax_rows(logits, &sctx);
  Tensor grad_probs;
  predictor_loss(probs, labels, lambda, &grad_probs);
  Tensor grad_logits = softmax_rows_backward(grad_probs, sctx);
  ps.at("x").grad =
      linear_backward(grad_logits, lctx, ps.at("w").value, ps.at("w").grad, ps.at("b").grad);

  auto loss = [&labels, lambda](const ParamSet& q) {
    Tensor lg = linear_forward(q.at("x").value, q.at("w").value, q.at("b").value);
    return predictor_loss(softmax_rows(lg), labels, lambda).total;
  };
  return finite_difference_check(loss, ps);
}

}  // namespace mstage::test
