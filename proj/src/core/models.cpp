#include "core/models.hpp"

#include <cmath>
#include <sstream>

#include "core/serialize.hpp"

namespace mstage {

namespace {

void init_uniform(Tensor& t, double bound, RngStream& rng) {
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
}

std::string block_prefix(const std::string& prefix, size_t l) {
  return prefix + "block" + std::to_string(l) + ".";
}

void check_tcn_spec(const TcnSpec& s) {
  if (s.in_dim == 0 || s.classes == 0 || s.filters == 0)
    fail(ErrorKind::InvalidArg, "tcn spec dimensions must be positive");
  if (s.blocks == 0 || s.blocks > 20)
    fail(ErrorKind::InvalidArg, "tcn block count out of range [1,20]");
  if (s.kernel == 0) fail(ErrorKind::InvalidArg, "tcn kernel must be positive");
}

GruWeights gru_weights(const ParamSet& ps, const std::string& prefix) {
  return GruWeights{
      &ps.at(prefix + "gru.wz").value, &ps.at(prefix + "gru.uz").value,
      &ps.at(prefix + "gru.bz").value, &ps.at(prefix + "gru.wr").value,
      &ps.at(prefix + "gru.ur").value, &ps.at(prefix + "gru.br").value,
      &ps.at(prefix + "gru.wh").value, &ps.at(prefix + "gru.uh").value,
      &ps.at(prefix + "gru.bh").value,
  };
}

GruGrads gru_grads(ParamSet& ps, const std::string& prefix) {
  return GruGrads{
      &ps.at(prefix + "gru.wz").grad, &ps.at(prefix + "gru.uz").grad,
      &ps.at(prefix + "gru.bz").grad, &ps.at(prefix + "gru.wr").grad,
      &ps.at(prefix + "gru.ur").grad, &ps.at(prefix + "gru.br").grad,
      &ps.at(prefix + "gru.wh").grad, &ps.at(prefix + "gru.uh").grad,
      &ps.at(prefix + "gru.bh").grad,
  };
}

TcnSpec refiner_tcn_spec(const RefinerConfig& cfg) {
  TcnSpec s;
  s.in_dim = cfg.classes;
  s.classes = cfg.classes;
  s.filters = cfg.filters;
  s.blocks = cfg.blocks;
  s.kernel = 3;
  s.causal = cfg.kind != RefinerKind::Tcn;
  return s;
}

std::string stage_prefix(size_t i) { return "s" + std::to_string(i) + "."; }

// checkpoint helpers: a "meta" record carries the architecture
constexpr double kPredictorId = 1.0;
constexpr double kRefinerId = 2.0;

ParamSet with_meta(std::vector<double> meta, const ParamSet& ps) {
  ParamSet out;
  size_t len = meta.size();
  out.add("meta", Tensor::from({len}, std::move(meta)));
  for (const auto& p : ps.params()) out.add(p.name, p.value);
  return out;
}

std::vector<double> require_meta(const ParamSet& loaded, const std::filesystem::path& path,
                                 double kind_id, size_t len, const char* kind_name) {
  if (!loaded.has("meta"))
    fail(ErrorKind::Dependency, "checkpoint " + path.string() + " has no meta record");
  const Tensor& m = loaded.at("meta").value;
  if (m.rank() != 1 || m.size() != len || m[0] != kind_id)
    fail(ErrorKind::Dependency,
         "checkpoint " + path.string() + " does not hold a " + kind_name + " model");
  return std::vector<double>(m.data(), m.data() + m.size());
}

void copy_params(const ParamSet& loaded, ParamSet& dst, const std::filesystem::path& path) {
  for (auto& p : dst.params()) {
    if (!loaded.has(p.name))
      fail(ErrorKind::Dependency,
           "checkpoint " + path.string() + " is missing parameter " + p.name);
    const Tensor& v = loaded.at(p.name).value;
    if (!v.same_shape(p.value))
      fail(ErrorKind::Dependency, "checkpoint " + path.string() + ": parameter " + p.name +
                                      " has shape " + v.shape_str() + ", expected " +
                                      p.value.shape_str());
    p.value = v;
  }
  if (loaded.size() != dst.size() + 1)
    fail(ErrorKind::Dependency, "checkpoint " + path.string() + " holds unexpected parameters");
}

// per-frame kernels matching the batch loops bit for bit
void apply_linear_row(const double* x, size_t d_in, const Tensor& w, const Tensor& b,
                      double* out) {
  size_t d_out = w.dim(1);
  for (size_t o = 0; o < d_out; ++o) out[o] = b[o];
  for (size_t i = 0; i < d_in; ++i) {
    double xi = x[i];
    const double* wi = w.row(i);
    for (size_t o = 0; o < d_out; ++o) out[o] += xi * wi[o];
  }
}

void softmax_row(const double* z, double* p, size_t c) {
  double m = z[0];
  for (size_t i = 1; i < c; ++i) m = std::max(m, z[i]);
  double sum = 0.0;
  for (size_t i = 0; i < c; ++i) {
    p[i] = std::exp(z[i] - m);
    sum += p[i];
  }
  for (size_t i = 0; i < c; ++i) p[i] /= sum;
}

}  // namespace

PhaseLabels argmax_labels(const Tensor& probs) {
  if (probs.rank() != 2 || probs.dim(1) == 0)
    fail(ErrorKind::InvalidArg, "argmax expects a TxC matrix, got " + probs.shape_str());
  size_t t_len = probs.dim(0), classes = probs.dim(1);
  PhaseLabels out(t_len);
  for (size_t t = 0; t < t_len; ++t) {
    const double* pt = probs.row(t);
    size_t best = 0;
    for (size_t c = 1; c < classes; ++c)
      if (pt[c] > pt[best]) best = c;
    out[t] = static_cast<int32_t>(best);
  }
  return out;
}

void tcn_init(const TcnSpec& spec, const std::string& prefix, ParamSet& ps, RngStream& rng) {
  check_tcn_spec(spec);
  size_t f = spec.filters;
  init_uniform(ps.add(prefix + "in.w", Tensor({spec.in_dim, f})),
               std::sqrt(1.0 / static_cast<double>(spec.in_dim)), rng);
  ps.add(prefix + "in.b", Tensor({f}));
  for (size_t l = 0; l < spec.blocks; ++l) {
    std::string bp = block_prefix(prefix, l);
    init_uniform(ps.add(bp + "conv.w", Tensor({f, spec.kernel, f})),
                 std::sqrt(1.0 / static_cast<double>(spec.kernel * f)), rng);
    ps.add(bp + "conv.b", Tensor({f}));
    init_uniform(ps.add(bp + "proj.w", Tensor({f, f})),
                 std::sqrt(1.0 / static_cast<double>(f)), rng);
    ps.add(bp + "proj.b", Tensor({f}));
  }
  init_uniform(ps.add(prefix + "out.w", Tensor({f, spec.classes})),
               std::sqrt(1.0 / static_cast<double>(f)), rng);
  ps.add(prefix + "out.b", Tensor({spec.classes}));
}

Tensor tcn_forward(const TcnSpec& spec, const std::string& prefix, const ParamSet& ps,
                   const Tensor& x, TcnTrace* trace) {
  if (x.rank() != 2 || x.dim(1) != spec.in_dim) {
    std::ostringstream os;
    os << "tcn expects T x " << spec.in_dim << " input, got " << x.shape_str();
    fail(ErrorKind::InvalidArg, os.str());
  }
  if (trace) trace->block.assign(spec.blocks, TcnBlockTrace{});

  Tensor h = linear_forward(x, ps.at(prefix + "in.w").value, ps.at(prefix + "in.b").value,
                            trace ? &trace->in : nullptr);
  for (size_t l = 0; l < spec.blocks; ++l) {
    std::string bp = block_prefix(prefix, l);
    TcnBlockTrace* bt = trace ? &trace->block[l] : nullptr;
    Tensor c = conv1d_forward(h, ps.at(bp + "conv.w").value, ps.at(bp + "conv.b").value,
                              1 << l, spec.causal, bt ? &bt->conv : nullptr);
    Tensor a = relu(c, bt ? &bt->relu : nullptr);
    Tensor p = linear_forward(a, ps.at(bp + "proj.w").value, ps.at(bp + "proj.b").value,
                              bt ? &bt->proj : nullptr);
    for (size_t i = 0; i < p.size(); ++i) p[i] += h[i];
    h = std::move(p);
  }
  Tensor logits = linear_forward(h, ps.at(prefix + "out.w").value,
                                 ps.at(prefix + "out.b").value, trace ? &trace->out : nullptr);
  return softmax_rows(logits, trace ? &trace->softmax : nullptr);
}

Tensor tcn_backward(const TcnSpec& spec, const std::string& prefix, ParamSet& ps,
                    const Tensor& grad_probs, const TcnTrace& trace) {
  Tensor dlogits = softmax_rows_backward(grad_probs, trace.softmax);
  Tensor dh = linear_backward(dlogits, trace.out, ps.at(prefix + "out.w").value,
                              ps.at(prefix + "out.w").grad, ps.at(prefix + "out.b").grad);
  for (size_t l = spec.blocks; l-- > 0;) {
    std::string bp = block_prefix(prefix, l);
    const TcnBlockTrace& bt = trace.block[l];
    Tensor da = linear_backward(dh, bt.proj, ps.at(bp + "proj.w").value,
                                ps.at(bp + "proj.w").grad, ps.at(bp + "proj.b").grad);
    Tensor dc = relu_backward(da, bt.relu);
    Tensor dx = conv1d_backward(dc, bt.conv, ps.at(bp + "conv.w").value, 1 << l, spec.causal,
                                ps.at(bp + "conv.w").grad, ps.at(bp + "conv.b").grad);
    for (size_t i = 0; i < dx.size(); ++i) dx[i] += dh[i];  // residual branch
    dh = std::move(dx);
  }
  return linear_backward(dh, trace.in, ps.at(prefix + "in.w").value,
                         ps.at(prefix + "in.w").grad, ps.at(prefix + "in.b").grad);
}

void gru_stage_init(const GruStageSpec& spec, const std::string& prefix, ParamSet& ps,
                    RngStream& rng) {
  if (spec.classes == 0 || spec.hidden == 0)
    fail(ErrorKind::InvalidArg, "gru stage dimensions must be positive");
  size_t c = spec.classes, h = spec.hidden;
  double wb = std::sqrt(1.0 / static_cast<double>(c));
  double ub = std::sqrt(1.0 / static_cast<double>(h));
  for (const char* n : {"gru.wz", "gru.wr", "gru.wh"})
    init_uniform(ps.add(prefix + n, Tensor({c, h})), wb, rng);
  for (const char* n : {"gru.uz", "gru.ur", "gru.uh"})
    init_uniform(ps.add(prefix + n, Tensor({h, h})), ub, rng);
  for (const char* n : {"gru.bz", "gru.br", "gru.bh"}) ps.add(prefix + n, Tensor({h}));
  init_uniform(ps.add(prefix + "head.w", Tensor({h, c})), ub, rng);
  ps.add(prefix + "head.b", Tensor({c}));
}

Tensor gru_stage_forward(const GruStageSpec& spec, const std::string& prefix, const ParamSet& ps,
                         const Tensor& x, GruStageTrace* trace) {
  if (x.rank() != 2 || x.dim(1) != spec.classes) {
    std::ostringstream os;
    os << "gru stage expects T x " << spec.classes << " input, got " << x.shape_str();
    fail(ErrorKind::InvalidArg, os.str());
  }
  Tensor hs = gru_forward(x, gru_weights(ps, prefix), trace ? &trace->gru : nullptr);
  Tensor logits = linear_forward(hs, ps.at(prefix + "head.w").value,
                                 ps.at(prefix + "head.b").value, trace ? &trace->head : nullptr);
  return softmax_rows(logits, trace ? &trace->softmax : nullptr);
}

Tensor gru_stage_backward(const GruStageSpec& spec, const std::string& prefix, ParamSet& ps,
                          const Tensor& grad_probs, const GruStageTrace& trace) {
  (void)spec;
  Tensor dlogits = softmax_rows_backward(grad_probs, trace.softmax);
  Tensor dhs = linear_backward(dlogits, trace.head, ps.at(prefix + "head.w").value,
                               ps.at(prefix + "head.w").grad, ps.at(prefix + "head.b").grad);
  return gru_backward(dhs, trace.gru, gru_weights(ps, prefix), gru_grads(ps, prefix));
}

PredictorNet::PredictorNet(size_t in_dim, size_t classes, uint64_t seed, size_t filters,
                           size_t blocks) {
  spec_.in_dim = in_dim;
  spec_.classes = classes;
  spec_.filters = filters;
  spec_.blocks = blocks;
  spec_.kernel = 3;
  spec_.causal = true;
  RngStream rng(seed);
  tcn_init(spec_, "", ps_, rng);
}

Tensor PredictorNet::forward(const Tensor& feats, TcnTrace* trace) const {
  return tcn_forward(spec_, "", ps_, feats, trace);
}

Tensor PredictorNet::backward(const Tensor& grad_probs, const TcnTrace& trace) {
  return tcn_backward(spec_, "", ps_, grad_probs, trace);
}

void PredictorNet::save(const std::filesystem::path& path) const {
  io::write_checkpoint(
      path, with_meta({kPredictorId, static_cast<double>(spec_.in_dim),
                       static_cast<double>(spec_.classes), static_cast<double>(spec_.filters),
                       static_cast<double>(spec_.blocks), static_cast<double>(spec_.kernel)},
                      ps_));
}

PredictorNet PredictorNet::load(const std::filesystem::path& path) {
  ParamSet loaded = io::read_checkpoint(path);
  auto meta = require_meta(loaded, path, kPredictorId, 6, "predictor");
  PredictorNet net(static_cast<size_t>(meta[1]), static_cast<size_t>(meta[2]), 0,
                   static_cast<size_t>(meta[3]), static_cast<size_t>(meta[4]));
  if (static_cast<size_t>(meta[5]) != net.spec_.kernel)
    fail(ErrorKind::Dependency, "checkpoint " + path.string() + " uses an unsupported kernel");
  copy_params(loaded, net.ps_, path);
  return net;
}

const char* refiner_kind_name(RefinerKind kind) {
  switch (kind) {
    case RefinerKind::Gru: return "gru";
    case RefinerKind::CausalTcn: return "causal-tcn";
    case RefinerKind::Tcn: return "tcn";
  }
  fail(ErrorKind::Internal, "unknown refiner kind");
}

RefinerKind refiner_kind_from(const std::string& name) {
  if (name == "gru") return RefinerKind::Gru;
  if (name == "causal-tcn") return RefinerKind::CausalTcn;
  if (name == "tcn") return RefinerKind::Tcn;
  fail(ErrorKind::Config, "unknown refiner model \"" + name + "\" (use gru, causal-tcn, or tcn)");
}

RefinerNet::RefinerNet(const RefinerConfig& cfg, uint64_t seed) : cfg_(cfg) {
  if (cfg.classes == 0) fail(ErrorKind::InvalidArg, "refiner class count must be positive");
  if (cfg.stacks == 0) fail(ErrorKind::InvalidArg, "refiner stack count must be >= 1");
  RngStream rng(seed);
  for (size_t i = 0; i < cfg.stacks; ++i) {
    if (cfg.kind == RefinerKind::Gru)
      gru_stage_init(GruStageSpec{cfg.classes, cfg.hidden}, stage_prefix(i), ps_, rng);
    else
      tcn_init(refiner_tcn_spec(cfg), stage_prefix(i), ps_, rng);
  }
}

std::vector<Tensor> RefinerNet::forward(const Tensor& probs, RefinerTrace* trace) const {
  if (probs.rank() != 2 || probs.dim(1) != cfg_.classes) {
    std::ostringstream os;
    os << "refiner expects T x " << cfg_.classes << " probabilities, got " << probs.shape_str();
    fail(ErrorKind::InvalidArg, os.str());
  }
  if (trace) {
    trace->gru.clear();
    trace->tcn.clear();
    if (cfg_.kind == RefinerKind::Gru)
      trace->gru.assign(cfg_.stacks, GruStageTrace{});
    else
      trace->tcn.assign(cfg_.stacks, TcnTrace{});
  }
  std::vector<Tensor> outs;
  outs.reserve(cfg_.stacks);
  const Tensor* cur = &probs;
  for (size_t i = 0; i < cfg_.stacks; ++i) {
    Tensor o = cfg_.kind == RefinerKind::Gru
                   ? gru_stage_forward(GruStageSpec{cfg_.classes, cfg_.hidden}, stage_prefix(i),
                                       ps_, *cur, trace ? &trace->gru[i] : nullptr)
                   : tcn_forward(refiner_tcn_spec(cfg_), stage_prefix(i), ps_, *cur,
                                 trace ? &trace->tcn[i] : nullptr);
    outs.push_back(std::move(o));
    cur = &outs.back();
  }
  return outs;
}

Tensor RefinerNet::backward(const std::vector<Tensor>& grad_stage_probs,
                            const RefinerTrace& trace) {
  if (grad_stage_probs.size() != cfg_.stacks)
    fail(ErrorKind::InvalidArg, "refiner backward needs one gradient per stage");
  Tensor carry;
  for (size_t i = cfg_.stacks; i-- > 0;) {
    Tensor g = grad_stage_probs[i];
    if (carry.size() != 0) {
      if (!carry.same_shape(g))
        fail(ErrorKind::InvalidArg, "refiner backward: stage gradient shapes disagree");
      for (size_t j = 0; j < g.size(); ++j) g[j] += carry[j];
    }
    carry = cfg_.kind == RefinerKind::Gru
                ? gru_stage_backward(GruStageSpec{cfg_.classes, cfg_.hidden}, stage_prefix(i),
                                     ps_, g, trace.gru[i])
                : tcn_backward(refiner_tcn_spec(cfg_), stage_prefix(i), ps_, g, trace.tcn[i]);
  }
  return carry;
}

void RefinerNet::save(const std::filesystem::path& path) const {
  io::write_checkpoint(
      path,
      with_meta({kRefinerId, static_cast<double>(static_cast<int>(cfg_.kind)),
                 static_cast<double>(cfg_.classes), static_cast<double>(cfg_.stacks),
                 static_cast<double>(cfg_.hidden), static_cast<double>(cfg_.filters),
                 static_cast<double>(cfg_.blocks)},
                ps_));
}

RefinerNet RefinerNet::load(const std::filesystem::path& path) {
  ParamSet loaded = io::read_checkpoint(path);
  auto meta = require_meta(loaded, path, kRefinerId, 7, "refiner");
  int kind_id = static_cast<int>(meta[1]);
  if (kind_id < 0 || kind_id > 2)
    fail(ErrorKind::Dependency, "checkpoint " + path.string() + " has an unknown refiner kind");
  RefinerConfig cfg;
  cfg.kind = static_cast<RefinerKind>(kind_id);
  cfg.classes = static_cast<size_t>(meta[2]);
  cfg.stacks = static_cast<size_t>(meta[3]);
  cfg.hidden = static_cast<size_t>(meta[4]);
  cfg.filters = static_cast<size_t>(meta[5]);
  cfg.blocks = static_cast<size_t>(meta[6]);
  RefinerNet net(cfg, 0);
  copy_params(loaded, net.ps_, path);
  return net;
}

InferResult multistage_infer(const MultiStage& m, const Tensor& feats) {
  if (!m.predictor) fail(ErrorKind::InvalidArg, "inference requires a predictor");
  InferResult r;
  r.predictor_probs = m.predictor->forward(feats);
  if (m.refiner) {
    if (m.refiner->config().classes != m.predictor->spec().classes)
      fail(ErrorKind::InvalidArg, "predictor and refiner class counts disagree");
    r.stage_probs = m.refiner->forward(r.predictor_probs);
  }
  r.labels = argmax_labels(r.final_probs());
  return r;
}

void StreamingSession::TrunkState::init(const TcnSpec& s, std::string pfx,
                                        const ParamSet& params) {
  spec = s;
  prefix = std::move(pfx);
  ps = &params;
  rings.resize(s.blocks);
  for (size_t l = 0; l < s.blocks; ++l)
    rings[l].init(s.filters, (s.kernel - 1) * (static_cast<size_t>(1) << l) + 1);
}

std::vector<double> StreamingSession::TrunkState::step(const double* frame, size_t t) {
  size_t f = spec.filters, k = spec.kernel;
  std::vector<double> h(f), c(f), p(f);
  apply_linear_row(frame, spec.in_dim, ps->at(prefix + "in.w").value,
                   ps->at(prefix + "in.b").value, h.data());
  for (size_t l = 0; l < spec.blocks; ++l) {
    ConvRing& ring = rings[l];
    std::copy(h.begin(), h.end(), ring.slot(t));
    std::string bp = block_prefix(prefix, l);
    const Tensor& kern = ps->at(bp + "conv.w").value;
    const Tensor& kb = ps->at(bp + "conv.b").value;
    long dil = 1L << l;
    for (size_t o = 0; o < f; ++o) c[o] = kb[o];
    for (size_t j = 0; j < k; ++j) {
      long s = static_cast<long>(t) - static_cast<long>(k - 1 - j) * dil;
      if (s < 0) continue;
      const double* xs = ring.slot(static_cast<size_t>(s));
      for (size_t o = 0; o < f; ++o) {
        const double* kj = kern.data() + (o * k + j) * f;
        double acc = 0.0;
        for (size_t ci = 0; ci < f; ++ci) acc += kj[ci] * xs[ci];
        c[o] += acc;
      }
    }
    for (size_t i = 0; i < f; ++i) c[i] = c[i] > 0.0 ? c[i] : 0.0;
    apply_linear_row(c.data(), f, ps->at(bp + "proj.w").value, ps->at(bp + "proj.b").value,
                     p.data());
    for (size_t i = 0; i < f; ++i) p[i] += h[i];
    h.swap(p);
  }
  std::vector<double> z(spec.classes), probs(spec.classes);
  apply_linear_row(h.data(), f, ps->at(prefix + "out.w").value, ps->at(prefix + "out.b").value,
                   z.data());
  softmax_row(z.data(), probs.data(), spec.classes);
  return probs;
}

void StreamingSession::GruState::init(const GruStageSpec& s, std::string pfx,
                                      const ParamSet& params) {
  spec = s;
  prefix = std::move(pfx);
  ps = &params;
  h.assign(s.hidden, 0.0);
}

std::vector<double> StreamingSession::GruState::step(const double* in_row) {
  std::vector<double> h_next(spec.hidden);
  gru_step(in_row, h.data(), gru_weights(*ps, prefix), h_next.data());
  h.swap(h_next);
  std::vector<double> z(spec.classes), probs(spec.classes);
  apply_linear_row(h.data(), spec.hidden, ps->at(prefix + "head.w").value,
                   ps->at(prefix + "head.b").value, z.data());
  softmax_row(z.data(), probs.data(), spec.classes);
  return probs;
}

StreamingSession::StreamingSession(const MultiStage& m) : m_(m) {
  if (!m.predictor) fail(ErrorKind::InvalidArg, "streaming requires a predictor");
  if (m.refiner && !m.refiner->causal())
    fail(ErrorKind::Config, "offline model cannot stream");
  predictor_.init(m.predictor->spec(), "", m.predictor->params());
  if (m.refiner) {
    const RefinerConfig& rc = m.refiner->config();
    if (rc.classes != m.predictor->spec().classes)
      fail(ErrorKind::InvalidArg, "predictor and refiner class counts disagree");
    for (size_t i = 0; i < rc.stacks; ++i) {
      if (rc.kind == RefinerKind::Gru) {
        gru_stages_.emplace_back();
        gru_stages_.back().init(GruStageSpec{rc.classes, rc.hidden}, stage_prefix(i),
                                m.refiner->params());
      } else {
        tcn_stages_.emplace_back();
        tcn_stages_.back().init(refiner_tcn_spec(rc), stage_prefix(i), m.refiner->params());
      }
    }
  }
}

int32_t StreamingSession::push(const double* frame, size_t dim,
                               std::vector<double>* final_probs) {
  if (dim != predictor_.spec.in_dim) {
    std::ostringstream os;
    os << "streaming frame has " << dim << " features, model expects " << predictor_.spec.in_dim;
    fail(ErrorKind::InvalidArg, os.str());
  }
  std::vector<double> row = predictor_.step(frame, frames_);
  for (auto& g : gru_stages_) row = g.step(row.data());
  for (auto& s : tcn_stages_) row = s.step(row.data(), frames_);
  ++frames_;
  size_t best = 0;
  for (size_t c = 1; c < row.size(); ++c)
    if (row[c] > row[best]) best = c;
  if (final_probs) *final_probs = std::move(row);
  return static_cast<int32_t>(best);
}

}  // namespace mstage
