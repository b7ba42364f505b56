#include "core/trainer.hpp"

#include <chrono>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "core/adam.hpp"
#include "core/error.hpp"
#include "core/serialize.hpp"

namespace mstage {
namespace {

using Clock = std::chrono::steady_clock;

void check_cfg(const TrainConfig& cfg) {
  if (cfg.epochs < 1) fail(ErrorKind::InvalidArg, "epochs must be >= 1");
  if (!(cfg.lr > 0.0)) fail(ErrorKind::InvalidArg, "learning rate must be > 0");
  if (cfg.lambda < 0.0) fail(ErrorKind::InvalidArg, "lambda must be >= 0");
}

void check_labels(const PhaseLabels& labels, size_t t_len, size_t classes, const std::string& id) {
  if (labels.size() != t_len)
    fail(ErrorKind::Config, id + " has " + std::to_string(t_len) + " frames but " +
                                std::to_string(labels.size()) + " labels");
  for (int32_t c : labels)
    if (c < 0 || static_cast<size_t>(c) >= classes)
      fail(ErrorKind::Config, id + " has label " + std::to_string(c) +
                                  " outside [0, " + std::to_string(classes) + ")");
}

size_t match_count(const Tensor& probs, const PhaseLabels& labels) {
  PhaseLabels pred = argmax_labels(probs);
  size_t hits = 0;
  for (size_t t = 0; t < pred.size(); ++t)
    if (pred[t] == labels[t]) ++hits;
  return hits;
}

bool checkpoint_due(const TrainConfig& cfg, size_t epoch) {
  if (epoch == cfg.epochs) return true;
  return cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Shared loop for train_predictor (refiner == nullptr) and train_e2e: smoothed
// CE on the predictor output plus, when a refiner rides along, per-stage
// refinement cross-entropy with unit weights. One update per video.
TrainHistory train_joint(PredictorNet& net, RefinerNet* refiner,
                         const std::vector<VideoRecord>& videos, const TrainConfig& cfg) {
  check_cfg(cfg);
  if (videos.empty()) fail(ErrorKind::InvalidArg, "train split is empty");
  const TcnSpec& spec = net.spec();
  if (refiner && refiner->config().classes != spec.classes)
    fail(ErrorKind::Config,
         "refiner expects " + std::to_string(refiner->config().classes) +
             " classes but the predictor outputs " + std::to_string(spec.classes));
  for (const VideoRecord& v : videos) {
    if (v.features.rank() != 2 || v.features.dim(1) != spec.in_dim)
      fail(ErrorKind::Config, v.id + " features " + v.features.shape_str() +
                                  " do not match model input dim " + std::to_string(spec.in_dim));
    check_labels(v.labels, v.t_len(), spec.classes, v.id);
  }

  AdamState opt_p(net.params(), AdamConfig{cfg.lr});
  std::unique_ptr<AdamState> opt_r;
  if (refiner) opt_r = std::make_unique<AdamState>(refiner->params(), AdamConfig{cfg.lr});

  RngStream rng(cfg.seed);
  std::vector<size_t> order(videos.size());
  std::iota(order.begin(), order.end(), 0);

  const size_t stages = refiner ? refiner->config().stacks : 0;
  TrainHistory hist;
  for (size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto t0 = Clock::now();
    if (cfg.shuffle) rng.shuffle(order);
    double loss_sum = 0.0;
    std::vector<double> stage_sum(stages, 0.0);
    size_t hits = 0, frames = 0;
    for (size_t idx : order) {
      const VideoRecord& v = videos[idx];
      try {
        TcnTrace ptrace;
        Tensor probs = net.forward(v.features, &ptrace);
        Tensor gp;
        double loss = predictor_loss(probs, v.labels, cfg.lambda, &gp).total;

        RefinerTrace rtrace;
        std::vector<Tensor> outs, gps;
        if (refiner) {
          outs = refiner->forward(probs, &rtrace);
          for (size_t i = 0; i < outs.size(); ++i) {
            std::vector<Tensor> g1;
            double sl = refinement_loss({outs[i]}, v.labels, &g1).total;
            stage_sum[i] += sl;
            loss += sl;
            gps.push_back(std::move(g1[0]));
          }
        }
        if (!std::isfinite(loss)) fail(ErrorKind::Numeric, "non-finite loss");

        hits += match_count(refiner ? outs.back() : probs, v.labels);
        frames += v.t_len();

        if (refiner) {
          Tensor carry = refiner->backward(gps, rtrace);
          for (size_t i = 0; i < gp.size(); ++i) gp[i] += carry[i];
        }
        net.backward(gp, ptrace);
        if (cfg.grad_clip > 0.0) {
          clip_grad_norm(net.params(), cfg.grad_clip);
          if (refiner) clip_grad_norm(refiner->params(), cfg.grad_clip);
        }
        opt_p.step(net.params());
        if (refiner) opt_r->step(refiner->params());
        loss_sum += loss;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Numeric) throw;
        fail(ErrorKind::Numeric, std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                                     ", video " + v.id);
      }
    }

    EpochStats st;
    st.epoch = epoch;
    st.loss = loss_sum / static_cast<double>(videos.size());
    st.train_acc = static_cast<double>(hits) / static_cast<double>(frames);
    for (double s : stage_sum) st.stage_losses.push_back(s / static_cast<double>(videos.size()));
    st.seconds = seconds_since(t0);
    hist.epochs.push_back(st);

    if (!cfg.checkpoint.empty() && checkpoint_due(cfg, epoch)) {
      net.save(cfg.checkpoint);
      if (refiner && !cfg.checkpoint_refiner.empty()) refiner->save(cfg.checkpoint_refiner);
    }
  }
  return hist;
}

}  // namespace

void TrainHistory::write_jsonl(const std::filesystem::path& path) const {
  std::string out;
  for (const EpochStats& st : epochs) {
    nlohmann::json j;
    j["epoch"] = st.epoch;
    j["loss"] = st.loss;
    j["train_acc"] = st.train_acc;
    j["seconds"] = st.seconds;
    if (!st.stage_losses.empty()) j["stage_losses"] = st.stage_losses;
    out += j.dump();
    out += '\n';
  }
  io::atomic_write(path, out);
}

TrainHistory train_predictor(PredictorNet& net, const std::vector<VideoRecord>& videos,
                             const TrainConfig& cfg) {
  return train_joint(net, nullptr, videos, cfg);
}

TrainHistory train_refiner(RefinerNet& net, const std::vector<RefineSample>& samples,
                           const TrainConfig& cfg) {
  check_cfg(cfg);
  if (samples.empty()) fail(ErrorKind::InvalidArg, "no refinement samples");
  const size_t classes = net.config().classes;
  for (const RefineSample& s : samples) {
    if (s.probs.rank() != 2 || s.probs.dim(1) != classes)
      fail(ErrorKind::Config, "refiner expects " + std::to_string(classes) +
                                  " classes but sample " + s.id + " has shape " +
                                  s.probs.shape_str());
    check_labels(s.labels, s.probs.dim(0), classes, s.id);
  }

  AdamState opt(net.params(), AdamConfig{cfg.lr});
  RngStream rng(cfg.seed);
  std::vector<size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);

  const size_t stages = net.config().stacks;
  TrainHistory hist;
  for (size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto t0 = Clock::now();
    if (cfg.shuffle) rng.shuffle(order);
    double loss_sum = 0.0;
    std::vector<double> stage_sum(stages, 0.0);
    size_t hits = 0, frames = 0;
    for (size_t idx : order) {
      const RefineSample& s = samples[idx];
      try {
        RefinerTrace trace;
        std::vector<Tensor> outs = net.forward(s.probs, &trace);
        double loss = 0.0;
        std::vector<Tensor> gps;
        for (size_t i = 0; i < outs.size(); ++i) {
          std::vector<Tensor> g1;
          double sl = refinement_loss({outs[i]}, s.labels, &g1).total;
          stage_sum[i] += sl;
          loss += sl;
          gps.push_back(std::move(g1[0]));
        }
        if (!std::isfinite(loss)) fail(ErrorKind::Numeric, "non-finite loss");

        hits += match_count(outs.back(), s.labels);
        frames += s.labels.size();

        net.backward(gps, trace);
        if (cfg.grad_clip > 0.0) clip_grad_norm(net.params(), cfg.grad_clip);
        opt.step(net.params());
        loss_sum += loss;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Numeric) throw;
        fail(ErrorKind::Numeric, std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                                     ", sample " + s.id);
      }
    }

    EpochStats st;
    st.epoch = epoch;
    st.loss = loss_sum / static_cast<double>(samples.size());
    st.train_acc = static_cast<double>(hits) / static_cast<double>(frames);
    for (double s : stage_sum) st.stage_losses.push_back(s / static_cast<double>(samples.size()));
    st.seconds = seconds_since(t0);
    hist.epochs.push_back(st);

    if (!cfg.checkpoint.empty() && checkpoint_due(cfg, epoch)) net.save(cfg.checkpoint);
  }
  return hist;
}

TrainHistory train_e2e(PredictorNet& net, RefinerNet* refiner,
                       const std::vector<VideoRecord>& videos, const TrainConfig& cfg) {
  return train_joint(net, refiner, videos, cfg);
}

}  // namespace mstage
