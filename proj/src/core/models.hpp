#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "core/layers.hpp"
#include "core/losses.hpp"
#include "core/rng.hpp"

namespace mstage {

// per-frame argmax; ties broken toward the lowest class index
PhaseLabels argmax_labels(const Tensor& probs);

// ---- dilated-conv trunk (predictor and tcn refiner stages) ----
// in 1x1 -> blocks of [dilated conv(k) -> relu -> 1x1 -> residual] -> out 1x1 -> softmax

struct TcnSpec {
  size_t in_dim = 0;
  size_t classes = 0;
  size_t filters = 16;
  size_t blocks = 8;
  size_t kernel = 3;
  bool causal = true;
};

struct TcnBlockTrace {
  ConvCtx conv;
  ReluCtx relu;
  LinearCtx proj;
};

struct TcnTrace {
  LinearCtx in;
  std::vector<TcnBlockTrace> block;
  LinearCtx out;
  SoftmaxCtx softmax;
};

void tcn_init(const TcnSpec& spec, const std::string& prefix, ParamSet& ps, RngStream& rng);
Tensor tcn_forward(const TcnSpec& spec, const std::string& prefix, const ParamSet& ps,
                   const Tensor& x, TcnTrace* trace = nullptr);
// grad_probs is w.r.t. the softmax output; accumulates into ps grads, returns grad w.r.t. x
Tensor tcn_backward(const TcnSpec& spec, const std::string& prefix, ParamSet& ps,
                    const Tensor& grad_probs, const TcnTrace& trace);

// ---- GRU refinement stage: gru -> linear head -> softmax ----

struct GruStageSpec {
  size_t classes = 0;
  size_t hidden = 32;
};

struct GruStageTrace {
  GruCtx gru;
  LinearCtx head;
  SoftmaxCtx softmax;
};

void gru_stage_init(const GruStageSpec& spec, const std::string& prefix, ParamSet& ps,
                    RngStream& rng);
Tensor gru_stage_forward(const GruStageSpec& spec, const std::string& prefix, const ParamSet& ps,
                         const Tensor& x, GruStageTrace* trace = nullptr);
Tensor gru_stage_backward(const GruStageSpec& spec, const std::string& prefix, ParamSet& ps,
                          const Tensor& grad_probs, const GruStageTrace& trace);

// ---- predictor stage ----

class PredictorNet {
public:
  PredictorNet(size_t in_dim, size_t classes, uint64_t seed, size_t filters = 16,
               size_t blocks = 8);

  Tensor forward(const Tensor& feats, TcnTrace* trace = nullptr) const;
  Tensor backward(const Tensor& grad_probs, const TcnTrace& trace);

  void save(const std::filesystem::path& path) const;
  static PredictorNet load(const std::filesystem::path& path);

  ParamSet& params() { return ps_; }
  const ParamSet& params() const { return ps_; }
  const TcnSpec& spec() const { return spec_; }

private:
  PredictorNet() = default;
  TcnSpec spec_;
  ParamSet ps_;
};

// ---- refinement stage ----

enum class RefinerKind { Gru, CausalTcn, Tcn };

const char* refiner_kind_name(RefinerKind kind);
RefinerKind refiner_kind_from(const std::string& name);

struct RefinerConfig {
  RefinerKind kind = RefinerKind::Gru;
  size_t classes = 0;
  size_t stacks = 1;
  size_t hidden = 32;   // gru variant
  size_t filters = 16;  // tcn variants
  size_t blocks = 6;    // tcn variants
};

struct RefinerTrace {
  std::vector<GruStageTrace> gru;
  std::vector<TcnTrace> tcn;
};

class RefinerNet {
public:
  RefinerNet(const RefinerConfig& cfg, uint64_t seed);

  // one output per stage; stage i+1 consumes stage i's output
  std::vector<Tensor> forward(const Tensor& probs, RefinerTrace* trace = nullptr) const;
  // grad_stage_probs[i] is w.r.t. stage i's output; returns grad w.r.t. the input probs
  Tensor backward(const std::vector<Tensor>& grad_stage_probs, const RefinerTrace& trace);

  bool causal() const { return cfg_.kind != RefinerKind::Tcn; }

  void save(const std::filesystem::path& path) const;
  static RefinerNet load(const std::filesystem::path& path);

  ParamSet& params() { return ps_; }
  const ParamSet& params() const { return ps_; }
  const RefinerConfig& config() const { return cfg_; }

private:
  RefinerNet() = default;
  RefinerConfig cfg_;
  ParamSet ps_;
};

// ---- composed inference ----

struct MultiStage {
  const PredictorNet* predictor = nullptr;
  const RefinerNet* refiner = nullptr;  // optional
};

struct InferResult {
  PhaseLabels labels;
  Tensor predictor_probs;
  std::vector<Tensor> stage_probs;  // empty without a refiner

  const Tensor& final_probs() const {
    return stage_probs.empty() ? predictor_probs : stage_probs.back();
  }
};

InferResult multistage_infer(const MultiStage& m, const Tensor& feats);

// Frame-at-a-time inference. Only causal pipelines can stream; outputs agree with
// batch multistage_infer on every prefix.
class StreamingSession {
public:
  explicit StreamingSession(const MultiStage& m);

  // feeds one frame, returns its label; final_probs (optional) gets the last stage's row
  int32_t push(const double* frame, size_t dim, std::vector<double>* final_probs = nullptr);
  size_t frames_pushed() const { return frames_; }

private:
  struct ConvRing {
    size_t dim = 0, cap = 0;
    std::vector<double> buf;
    void init(size_t d, size_t c) {
      dim = d;
      cap = c;
      buf.assign(d * c, 0.0);
    }
    double* slot(size_t t) { return buf.data() + (t % cap) * dim; }
    const double* slot(size_t t) const { return buf.data() + (t % cap) * dim; }
  };

  struct TrunkState {
    TcnSpec spec;
    std::string prefix;
    const ParamSet* ps = nullptr;
    std::vector<ConvRing> rings;  // one per block, holds that block's input history

    void init(const TcnSpec& s, std::string pfx, const ParamSet& params);
    std::vector<double> step(const double* frame, size_t t);
  };

  struct GruState {
    GruStageSpec spec;
    std::string prefix;
    const ParamSet* ps = nullptr;
    std::vector<double> h;

    void init(const GruStageSpec& s, std::string pfx, const ParamSet& params);
    std::vector<double> step(const double* in_row);
  };

  const MultiStage m_;
  TrunkState predictor_;
  std::vector<TrunkState> tcn_stages_;
  std::vector<GruState> gru_stages_;
  size_t frames_ = 0;
};

}  // namespace mstage
