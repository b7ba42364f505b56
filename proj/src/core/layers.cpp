#include "core/layers.hpp"

#include <cmath>
#include <sstream>

namespace mstage {

namespace {

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) fail(ErrorKind::InvalidArg, std::string(what) + " must be rank 2, got " + t.shape_str());
}

[[noreturn]] void shape_mismatch(const char* op, const Tensor& a, const Tensor& b) {
  std::ostringstream os;
  os << op << ": shape mismatch between " << a.shape_str() << " and " << b.shape_str();
  fail(ErrorKind::InvalidArg, os.str());
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b, LinearCtx* ctx) {
  require_rank2(x, "linear input");
  require_rank2(w, "linear weights");
  if (x.dim(1) != w.dim(0)) shape_mismatch("linear_forward", x, w);
  if (b.rank() != 1 || b.dim(0) != w.dim(1)) shape_mismatch("linear_forward", w, b);

  size_t t_len = x.dim(0), d_in = x.dim(1), d_out = w.dim(1);
  Tensor out({t_len, d_out});
  for (size_t t = 0; t < t_len; ++t) {
    const double* xt = x.row(t);
    double* ot = out.row(t);
    for (size_t o = 0; o < d_out; ++o) ot[o] = b[o];
    for (size_t i = 0; i < d_in; ++i) {
      double xi = xt[i];
      const double* wi = w.row(i);
      for (size_t o = 0; o < d_out; ++o) ot[o] += xi * wi[o];
    }
  }
  if (ctx) ctx->x = x;
  return out;
}

Tensor linear_backward(const Tensor& grad_out, const LinearCtx& ctx, const Tensor& w,
                       Tensor& gw, Tensor& gb) {
  const Tensor& x = ctx.x;
  size_t t_len = x.dim(0), d_in = x.dim(1), d_out = w.dim(1);
  if (grad_out.dim(0) != t_len || grad_out.dim(1) != d_out)
    shape_mismatch("linear_backward", grad_out, w);

  Tensor gx({t_len, d_in});
  for (size_t t = 0; t < t_len; ++t) {
    const double* gt = grad_out.row(t);
    const double* xt = x.row(t);
    double* gxt = gx.row(t);
    for (size_t o = 0; o < d_out; ++o) gb[o] += gt[o];
    for (size_t i = 0; i < d_in; ++i) {
      const double* wi = w.row(i);
      double* gwi = gw.row(i);
      double acc = 0.0;
      double xi = xt[i];
      for (size_t o = 0; o < d_out; ++o) {
        acc += gt[o] * wi[o];
        gwi[o] += xi * gt[o];
      }
      gxt[i] = acc;
    }
  }
  return gx;
}

Tensor conv1d_forward(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                      int dilation, bool causal, ConvCtx* ctx) {
  require_rank2(x, "conv input");
  if (kernel.rank() != 3)
    fail(ErrorKind::InvalidArg, "conv kernel must be rank 3 {out,k,in}, got " + kernel.shape_str());
  if (dilation < 1) fail(ErrorKind::InvalidArg, "conv dilation must be >= 1");
  size_t d_out = kernel.dim(0), k = kernel.dim(1), d_in = kernel.dim(2);
  if (x.dim(1) != d_in) shape_mismatch("conv1d_forward", x, kernel);
  if (bias.rank() != 1 || bias.dim(0) != d_out) shape_mismatch("conv1d_forward", kernel, bias);

  long t_len = static_cast<long>(x.dim(0));
  long anchor = causal ? static_cast<long>(k) - 1 : (static_cast<long>(k) - 1) / 2;
  Tensor out({static_cast<size_t>(t_len), d_out});
  for (long t = 0; t < t_len; ++t) {
    double* ot = out.row(static_cast<size_t>(t));
    for (size_t o = 0; o < d_out; ++o) ot[o] = bias[o];
    for (size_t j = 0; j < k; ++j) {
      long s = t + (static_cast<long>(j) - anchor) * dilation;
      if (s < 0 || s >= t_len) continue;
      const double* xs = x.row(static_cast<size_t>(s));
      for (size_t o = 0; o < d_out; ++o) {
        const double* kj = kernel.data() + (o * k + j) * d_in;
        double acc = 0.0;
        for (size_t c = 0; c < d_in; ++c) acc += kj[c] * xs[c];
        ot[o] += acc;
      }
    }
  }
  if (ctx) ctx->x = x;
  return out;
}

Tensor conv1d_backward(const Tensor& grad_out, const ConvCtx& ctx, const Tensor& kernel,
                       int dilation, bool causal, Tensor& gkernel, Tensor& gbias) {
  const Tensor& x = ctx.x;
  size_t d_out = kernel.dim(0), k = kernel.dim(1), d_in = kernel.dim(2);
  long t_len = static_cast<long>(x.dim(0));
  if (grad_out.dim(0) != x.dim(0) || grad_out.dim(1) != d_out)
    shape_mismatch("conv1d_backward", grad_out, kernel);

  long anchor = causal ? static_cast<long>(k) - 1 : (static_cast<long>(k) - 1) / 2;
  Tensor gx({static_cast<size_t>(t_len), d_in});
  for (long t = 0; t < t_len; ++t) {
    const double* gt = grad_out.row(static_cast<size_t>(t));
    for (size_t o = 0; o < d_out; ++o) gbias[o] += gt[o];
    for (size_t j = 0; j < k; ++j) {
      long s = t + (static_cast<long>(j) - anchor) * dilation;
      if (s < 0 || s >= t_len) continue;
      const double* xs = x.row(static_cast<size_t>(s));
      double* gxs = gx.row(static_cast<size_t>(s));
      for (size_t o = 0; o < d_out; ++o) {
        double g = gt[o];
        const double* kj = kernel.data() + (o * k + j) * d_in;
        double* gkj = gkernel.data() + (o * k + j) * d_in;
        for (size_t c = 0; c < d_in; ++c) {
          gxs[c] += g * kj[c];
          gkj[c] += g * xs[c];
        }
      }
    }
  }
  return gx;
}

Tensor relu(const Tensor& x, ReluCtx* ctx) {
  Tensor out(x.shape());
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (ctx) ctx->x = x;
  return out;
}

Tensor relu_backward(const Tensor& grad_out, const ReluCtx& ctx) {
  if (!grad_out.same_shape(ctx.x)) shape_mismatch("relu_backward", grad_out, ctx.x);
  Tensor gx(ctx.x.shape());
  for (size_t i = 0; i < gx.size(); ++i) gx[i] = ctx.x[i] > 0.0 ? grad_out[i] : 0.0;
  return gx;
}

Tensor softmax_rows(const Tensor& logits, SoftmaxCtx* ctx) {
  require_rank2(logits, "softmax input");
  logits.require_finite("softmax input");
  size_t t_len = logits.dim(0), c = logits.dim(1);
  Tensor out({t_len, c});
  for (size_t t = 0; t < t_len; ++t) {
    const double* zt = logits.row(t);
    double* pt = out.row(t);
    double m = zt[0];
    for (size_t i = 1; i < c; ++i) m = std::max(m, zt[i]);
    double sum = 0.0;
    for (size_t i = 0; i < c; ++i) {
      pt[i] = std::exp(zt[i] - m);
      sum += pt[i];
    }
    for (size_t i = 0; i < c; ++i) pt[i] /= sum;
  }
  if (ctx) ctx->probs = out;
  return out;
}

Tensor softmax_rows_backward(const Tensor& grad_probs, const SoftmaxCtx& ctx) {
  const Tensor& p = ctx.probs;
  if (!grad_probs.same_shape(p)) shape_mismatch("softmax_rows_backward", grad_probs, p);
  size_t t_len = p.dim(0), c = p.dim(1);
  Tensor gz({t_len, c});
  for (size_t t = 0; t < t_len; ++t) {
    const double* gp = grad_probs.row(t);
    const double* pt = p.row(t);
    double* gzt = gz.row(t);
    double dot = 0.0;
    for (size_t i = 0; i < c; ++i) dot += gp[i] * pt[i];
    for (size_t i = 0; i < c; ++i) gzt[i] = pt[i] * (gp[i] - dot);
  }
  return gz;
}

void gru_step(const double* x_t, const double* h_prev, const GruWeights& w, double* h_out) {
  size_t d = w.input_dim(), h = w.hidden_dim();
  std::vector<double> az(h), ar(h), ah(h), rh(h);
  for (size_t i = 0; i < h; ++i) {
    az[i] = (*w.bz)[i];
    ar[i] = (*w.br)[i];
  }
  for (size_t i = 0; i < d; ++i) {
    double xi = x_t[i];
    const double* wzi = w.wz->row(i);
    const double* wri = w.wr->row(i);
    for (size_t j = 0; j < h; ++j) {
      az[j] += xi * wzi[j];
      ar[j] += xi * wri[j];
    }
  }
  for (size_t i = 0; i < h; ++i) {
    double hi = h_prev[i];
    const double* uzi = w.uz->row(i);
    const double* uri = w.ur->row(i);
    for (size_t j = 0; j < h; ++j) {
      az[j] += hi * uzi[j];
      ar[j] += hi * uri[j];
    }
  }
  for (size_t j = 0; j < h; ++j) {
    az[j] = sigmoid(az[j]);  // z
    ar[j] = sigmoid(ar[j]);  // r
    rh[j] = ar[j] * h_prev[j];
    ah[j] = (*w.bh)[j];
  }
  for (size_t i = 0; i < d; ++i) {
    double xi = x_t[i];
    const double* whi = w.wh->row(i);
    for (size_t j = 0; j < h; ++j) ah[j] += xi * whi[j];
  }
  for (size_t i = 0; i < h; ++i) {
    double ri = rh[i];
    const double* uhi = w.uh->row(i);
    for (size_t j = 0; j < h; ++j) ah[j] += ri * uhi[j];
  }
  for (size_t j = 0; j < h; ++j) {
    double cand = std::tanh(ah[j]);
    h_out[j] = (1.0 - az[j]) * cand + az[j] * h_prev[j];
  }
}

Tensor gru_step(const Tensor& x_t, const Tensor& h_prev, const GruWeights& w) {
  if (x_t.size() != w.input_dim()) shape_mismatch("gru_step input", x_t, *w.wz);
  if (h_prev.size() != w.hidden_dim()) shape_mismatch("gru_step state", h_prev, *w.uz);
  Tensor out({w.hidden_dim()});
  gru_step(x_t.data(), h_prev.data(), w, out.data());
  return out;
}

Tensor gru_forward(const Tensor& x, const GruWeights& w, GruCtx* ctx) {
  require_rank2(x, "gru input");
  if (x.dim(1) != w.input_dim()) shape_mismatch("gru_forward", x, *w.wz);
  size_t t_len = x.dim(0), d = x.dim(1), hd = w.hidden_dim();

  GruCtx local;
  GruCtx& c = ctx ? *ctx : local;
  c.x = x;
  c.h = Tensor({t_len + 1, hd});
  c.z = Tensor({t_len, hd});
  c.r = Tensor({t_len, hd});
  c.hcand = Tensor({t_len, hd});

  std::vector<double> az(hd), ar(hd), ah(hd);
  for (size_t t = 0; t < t_len; ++t) {
    const double* xt = x.row(t);
    const double* hp = c.h.row(t);
    for (size_t j = 0; j < hd; ++j) {
      az[j] = (*w.bz)[j];
      ar[j] = (*w.br)[j];
    }
    for (size_t i = 0; i < d; ++i) {
      double xi = xt[i];
      const double* wzi = w.wz->row(i);
      const double* wri = w.wr->row(i);
      for (size_t j = 0; j < hd; ++j) {
        az[j] += xi * wzi[j];
        ar[j] += xi * wri[j];
      }
    }
    for (size_t i = 0; i < hd; ++i) {
      double hi = hp[i];
      const double* uzi = w.uz->row(i);
      const double* uri = w.ur->row(i);
      for (size_t j = 0; j < hd; ++j) {
        az[j] += hi * uzi[j];
        ar[j] += hi * uri[j];
      }
    }
    double* zt = c.z.row(t);
    double* rt = c.r.row(t);
    for (size_t j = 0; j < hd; ++j) {
      zt[j] = sigmoid(az[j]);
      rt[j] = sigmoid(ar[j]);
      ah[j] = (*w.bh)[j];
    }
    for (size_t i = 0; i < d; ++i) {
      double xi = xt[i];
      const double* whi = w.wh->row(i);
      for (size_t j = 0; j < hd; ++j) ah[j] += xi * whi[j];
    }
    for (size_t i = 0; i < hd; ++i) {
      double ri = rt[i] * hp[i];
      const double* uhi = w.uh->row(i);
      for (size_t j = 0; j < hd; ++j) ah[j] += ri * uhi[j];
    }
    double* ct = c.hcand.row(t);
    double* hn = c.h.row(t + 1);
    for (size_t j = 0; j < hd; ++j) {
      ct[j] = std::tanh(ah[j]);
      hn[j] = (1.0 - zt[j]) * ct[j] + zt[j] * hp[j];
    }
  }

  Tensor out({t_len, hd});
  for (size_t t = 0; t < t_len; ++t)
    for (size_t j = 0; j < hd; ++j) out.at2(t, j) = c.h.at2(t + 1, j);
  return out;
}

Tensor gru_backward(const Tensor& grad_h, const GruCtx& ctx, const GruWeights& w,
                    const GruGrads& g) {
  size_t t_len = ctx.x.dim(0), d = ctx.x.dim(1), hd = w.hidden_dim();
  if (grad_h.dim(0) != t_len || grad_h.dim(1) != hd)
    shape_mismatch("gru_backward", grad_h, ctx.h);

  Tensor gx({t_len, d});
  std::vector<double> dh(hd, 0.0), dh_prev(hd), daz(hd), dar(hd), dah(hd);
  for (size_t t = t_len; t-- > 0;) {
    const double* gh = grad_h.row(t);
    const double* hp = ctx.h.row(t);
    const double* zt = ctx.z.row(t);
    const double* rt = ctx.r.row(t);
    const double* ct = ctx.hcand.row(t);
    const double* xt = ctx.x.row(t);

    for (size_t j = 0; j < hd; ++j) dh[j] += gh[j];

    for (size_t j = 0; j < hd; ++j) {
      double dz = dh[j] * (hp[j] - ct[j]);
      daz[j] = dz * zt[j] * (1.0 - zt[j]);
      double dcand = dh[j] * (1.0 - zt[j]);
      dah[j] = dcand * (1.0 - ct[j] * ct[j]);
      dh_prev[j] = dh[j] * zt[j];
    }

    // through hcand's recurrent path: d(r.h_prev) = dah Uh^T
    std::vector<double> drh(hd, 0.0);
    for (size_t i = 0; i < hd; ++i) {
      const double* uhi = w.uh->row(i);
      double acc = 0.0;
      for (size_t j = 0; j < hd; ++j) acc += dah[j] * uhi[j];
      drh[i] = acc;
    }
    for (size_t j = 0; j < hd; ++j) {
      double dr = drh[j] * hp[j];
      dar[j] = dr * rt[j] * (1.0 - rt[j]);
      dh_prev[j] += drh[j] * rt[j];
    }
    for (size_t i = 0; i < hd; ++i) {
      const double* uzi = w.uz->row(i);
      const double* uri = w.ur->row(i);
      double acc = 0.0;
      for (size_t j = 0; j < hd; ++j) acc += daz[j] * uzi[j] + dar[j] * uri[j];
      dh_prev[i] += acc;
    }

    // parameter gradients
    for (size_t j = 0; j < hd; ++j) {
      (*g.bz)[j] += daz[j];
      (*g.br)[j] += dar[j];
      (*g.bh)[j] += dah[j];
    }
    for (size_t i = 0; i < d; ++i) {
      double xi = xt[i];
      double* gwzi = g.wz->row(i);
      double* gwri = g.wr->row(i);
      double* gwhi = g.wh->row(i);
      for (size_t j = 0; j < hd; ++j) {
        gwzi[j] += xi * daz[j];
        gwri[j] += xi * dar[j];
        gwhi[j] += xi * dah[j];
      }
    }
    for (size_t i = 0; i < hd; ++i) {
      double hi = hp[i];
      double rhi = rt[i] * hp[i];
      double* guzi = g.uz->row(i);
      double* guri = g.ur->row(i);
      double* guhi = g.uh->row(i);
      for (size_t j = 0; j < hd; ++j) {
        guzi[j] += hi * daz[j];
        guri[j] += hi * dar[j];
        guhi[j] += rhi * dah[j];
      }
    }

    // input gradient
    double* gxt = gx.row(t);
    for (size_t i = 0; i < d; ++i) {
      const double* wzi = w.wz->row(i);
      const double* wri = w.wr->row(i);
      const double* whi = w.wh->row(i);
      double acc = 0.0;
      for (size_t j = 0; j < hd; ++j)
        acc += daz[j] * wzi[j] + dar[j] * wri[j] + dah[j] * whi[j];
      gxt[i] = acc;
    }

    dh = dh_prev;
  }
  return gx;
}

}  // namespace mstage
