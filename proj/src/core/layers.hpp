#pragma once

#include "core/tensor.hpp"

namespace mstage {

// Matrices are rank-2 tensors, frames (rows) x channels (cols).
// Each forward optionally fills a context for the matching backward; backward
// accumulates parameter gradients and returns the gradient w.r.t. the input.

struct LinearCtx {
  Tensor x;
};

// x: TxDin, w: DinxDout, b: Dout -> TxDout
Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                      LinearCtx* ctx = nullptr);
Tensor linear_backward(const Tensor& grad_out, const LinearCtx& ctx, const Tensor& w,
                       Tensor& gw, Tensor& gb);

struct ConvCtx {
  Tensor x;
};

// x: TxDin, kernel: {Dout, k, Din}, bias: Dout -> TxDout.
// Causal: taps at t, t-d, ..., t-(k-1)d with implicit zero left pad (kernel
// index grows with time, so kernel[:,k-1,:] multiplies the current frame).
// Acausal: taps centered on t with symmetric zero padding.
Tensor conv1d_forward(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                      int dilation, bool causal, ConvCtx* ctx = nullptr);
Tensor conv1d_backward(const Tensor& grad_out, const ConvCtx& ctx, const Tensor& kernel,
                       int dilation, bool causal, Tensor& gkernel, Tensor& gbias);

struct ReluCtx {
  Tensor x;
};

Tensor relu(const Tensor& x, ReluCtx* ctx = nullptr);
Tensor relu_backward(const Tensor& grad_out, const ReluCtx& ctx);

struct SoftmaxCtx {
  Tensor probs;
};

// Row-wise softmax with max subtraction. Rejects non-finite input.
Tensor softmax_rows(const Tensor& logits, SoftmaxCtx* ctx = nullptr);
// grad_probs -> grad w.r.t. logits
Tensor softmax_rows_backward(const Tensor& grad_probs, const SoftmaxCtx& ctx);

// Gated recurrent unit:
//   z = sigmoid(x Wz + h Uz + bz)
//   r = sigmoid(x Wr + h Ur + br)
//   hcand = tanh(x Wh + (r.h) Uh + bh)
//   h' = (1-z).hcand + z.h
struct GruWeights {
  const Tensor *wz, *uz, *bz;
  const Tensor *wr, *ur, *br;
  const Tensor *wh, *uh, *bh;

  size_t input_dim() const { return wz->dim(0); }
  size_t hidden_dim() const { return wz->dim(1); }
};

struct GruGrads {
  Tensor *wz, *uz, *bz;
  Tensor *wr, *ur, *br;
  Tensor *wh, *uh, *bh;
};

struct GruCtx {
  Tensor x;       // T x D
  Tensor h;       // (T+1) x H, row 0 = initial state
  Tensor z, r, hcand;  // T x H
};

// Single step; x_t has length D, h_prev and h_out length H.
void gru_step(const double* x_t, const double* h_prev, const GruWeights& w, double* h_out);
Tensor gru_step(const Tensor& x_t, const Tensor& h_prev, const GruWeights& w);

// Full sequence from h0 = 0; returns the T x H hidden sequence.
Tensor gru_forward(const Tensor& x, const GruWeights& w, GruCtx* ctx = nullptr);
// grad_h: T x H gradient on the hidden sequence; returns T x D input gradient.
Tensor gru_backward(const Tensor& grad_h, const GruCtx& ctx, const GruWeights& w,
                    const GruGrads& g);

}  // namespace mstage
