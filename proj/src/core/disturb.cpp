#include "core/disturb.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "core/adam.hpp"
#include "core/error.hpp"
#include "core/layers.hpp"
#include "core/serialize.hpp"

namespace fs = std::filesystem;

namespace mstage {
namespace {

// frame-classifier training schedule for hard-frame detection
constexpr size_t kHardEpochs = 120;
constexpr double kHardLr = 0.1;

void check_videos(const std::vector<VideoRecord>& videos, const char* who) {
  if (videos.empty()) fail(ErrorKind::InvalidArg, std::string(who) + ": no training videos");
}

Tensor masked_features(const Tensor& feats, const std::vector<uint8_t>& mask, size_t* masked) {
  Tensor out = feats;
  *masked = 0;
  for (size_t t = 0; t < mask.size(); ++t) {
    if (!mask[t]) continue;
    double* row = out.row(t);
    for (size_t d = 0; d < out.dim(1); ++d) row[d] = 0.0;
    ++*masked;
  }
  return out;
}

DisturbedSample masked_sample(const VideoRecord& v, const PredictorNet& predictor,
                              const std::vector<uint8_t>& mask, Provenance prov) {
  if (predictor.spec().in_dim != v.features.dim(1))
    fail(ErrorKind::Config, v.id + " feature dim " + std::to_string(v.features.dim(1)) +
                                " does not match predictor input dim " +
                                std::to_string(predictor.spec().in_dim));
  size_t masked = 0;
  Tensor feats = masked_features(v.features, mask, &masked);
  if (masked == v.t_len())
    std::cerr << "warning: mask covers every frame of " << v.id << "\n";
  DisturbedSample s;
  s.id = v.id;
  s.input = predictor.forward(feats);
  s.target = v.labels;
  s.provenance = prov;
  s.mask_ratio = static_cast<double>(masked) / static_cast<double>(v.t_len());
  return s;
}

}  // namespace

FoldAssignment partition_folds(const std::vector<std::string>& ids, size_t k, uint64_t seed) {
  if (k < 2) fail(ErrorKind::InvalidArg, "K must be at least 2");
  if (k > ids.size())
    fail(ErrorKind::InvalidArg,
         "K=" + std::to_string(k) + " exceeds the " + std::to_string(ids.size()) +
             " training videos; use leave-one-out by setting K = N");
  std::set<std::string> seen(ids.begin(), ids.end());
  if (seen.size() != ids.size()) fail(ErrorKind::InvalidArg, "duplicate video id in fold input");

  std::vector<std::string> shuffled = ids;
  RngStream rng(seed);
  rng.shuffle(shuffled);

  FoldAssignment fa;
  fa.k = k;
  fa.members.resize(k);
  for (size_t i = 0; i < shuffled.size(); ++i) {
    fa.fold[shuffled[i]] = i % k;
    fa.members[i % k].push_back(shuffled[i]);
  }
  return fa;
}

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::Cv: return "cv";
    case Provenance::Mhf: return "mhf";
    case Provenance::Rm: return "rm";
  }
  fail(ErrorKind::Internal, "bad provenance");
}

Provenance provenance_from(const std::string& name) {
  if (name == "cv") return Provenance::Cv;
  if (name == "mhf") return Provenance::Mhf;
  if (name == "rm") return Provenance::Rm;
  fail(ErrorKind::Dependency, "unknown provenance '" + name + "'");
}

std::vector<RefineSample> to_refine_samples(const std::vector<DisturbedSample>& samples) {
  std::vector<RefineSample> out;
  out.reserve(samples.size());
  for (const DisturbedSample& s : samples)
    out.push_back({std::string(provenance_name(s.provenance)) + ":" + s.id, s.input, s.target});
  return out;
}

std::vector<DisturbedSample> gen_cross_validate(const std::vector<VideoRecord>& videos,
                                                const CvOptions& opt,
                                                std::vector<CvFoldLog>* log) {
  check_videos(videos, "gen_cross_validate");
  if (opt.classes < 2) fail(ErrorKind::InvalidArg, "classes must be at least 2");

  std::vector<std::string> ids;
  std::map<std::string, const VideoRecord*> by_id;
  for (const VideoRecord& v : videos) {
    ids.push_back(v.id);
    by_id[v.id] = &v;
  }
  FoldAssignment fa = partition_folds(ids, opt.k, opt.train.seed);
  const size_t in_dim = videos.front().features.dim(1);

  if (log) log->clear();
  std::vector<DisturbedSample> out;
  for (size_t f = 0; f < fa.k; ++f) {
    const uint64_t fold_seed = opt.train.seed ^ static_cast<uint64_t>(f);
    std::vector<VideoRecord> fold_train;
    CvFoldLog entry;
    entry.fold = f;
    entry.seed = fold_seed;
    for (const VideoRecord& v : videos) {
      if (fa.fold.at(v.id) == f) continue;
      fold_train.push_back(v);
      entry.train_ids.push_back(v.id);
    }
    entry.eval_ids = fa.members[f];

    PredictorNet net(in_dim, opt.classes, fold_seed, opt.filters, opt.blocks);
    TrainConfig tc = opt.train;
    tc.seed = fold_seed;
    tc.checkpoint.clear();
    tc.checkpoint_refiner.clear();
    TrainHistory hist;
    try {
      hist = train_predictor(net, fold_train, tc);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Numeric) throw;
      fail(ErrorKind::Numeric, std::string(e.what()) + " (fold " + std::to_string(f) + ")");
    }
    entry.final_loss = hist.epochs.back().loss;

    for (const std::string& id : fa.members[f]) {
      const VideoRecord& v = *by_id.at(id);
      DisturbedSample s;
      s.id = id;
      s.input = net.forward(v.features);
      s.target = v.labels;
      s.provenance = Provenance::Cv;
      s.fold = f;
      out.push_back(std::move(s));
    }
    if (log) log->push_back(std::move(entry));
  }
  return out;
}

double HardFrameMask::fraction() const {
  if (hard.empty()) return 0.0;
  size_t n = 0;
  for (uint8_t h : hard) n += (h != 0);
  return static_cast<double>(n) / static_cast<double>(hard.size());
}

std::vector<HardFrameMask> detect_hard_frames(const std::vector<VideoRecord>& videos,
                                              size_t classes, uint64_t seed) {
  check_videos(videos, "detect_hard_frames");
  const size_t dim = videos.front().features.dim(1);

  size_t total = 0;
  std::set<int32_t> distinct;
  for (const VideoRecord& v : videos) {
    if (v.features.dim(1) != dim)
      fail(ErrorKind::Config, v.id + " feature dim differs from the rest of the split");
    total += v.t_len();
    for (int32_t c : v.labels) {
      if (c < 0 || static_cast<size_t>(c) >= classes)
        fail(ErrorKind::Config, v.id + " has label " + std::to_string(c) + " outside [0, " +
                                    std::to_string(classes) + ")");
      distinct.insert(c);
    }
  }
  if (distinct.size() < 2)
    fail(ErrorKind::Config, "hard-frame detection needs at least two phases in the split");

  // all frames as one batch
  Tensor x({total, dim});
  PhaseLabels y(total);
  size_t at = 0;
  for (const VideoRecord& v : videos) {
    for (size_t t = 0; t < v.t_len(); ++t, ++at) {
      const double* src = v.features.row(t);
      std::copy(src, src + dim, x.row(at));
      y[at] = v.labels[t];
    }
  }

  ParamSet ps;
  RngStream rng(seed);
  Tensor& w = ps.add("w", Tensor::zeros({dim, classes}));
  ps.add("b", Tensor::zeros({classes}));
  const double bound = std::sqrt(1.0 / static_cast<double>(dim));
  for (size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);

  AdamState opt(ps, AdamConfig{kHardLr});
  for (size_t epoch = 0; epoch < kHardEpochs; ++epoch) {
    LinearCtx lctx;
    SoftmaxCtx sctx;
    Tensor probs = softmax_rows(
        linear_forward(x, ps.at("w").value, ps.at("b").value, &lctx), &sctx);
    std::vector<Tensor> grads;
    refinement_loss({probs}, y, &grads);
    Tensor glogits = softmax_rows_backward(grads[0], sctx);
    linear_backward(glogits, lctx, ps.at("w").value, ps.at("w").grad, ps.at("b").grad);
    opt.step(ps);
  }

  std::vector<HardFrameMask> masks;
  for (const VideoRecord& v : videos) {
    Tensor probs = softmax_rows(linear_forward(v.features, ps.at("w").value, ps.at("b").value));
    PhaseLabels pred = argmax_labels(probs);
    HardFrameMask m;
    m.id = v.id;
    m.hard.resize(v.t_len());
    for (size_t t = 0; t < v.t_len(); ++t) m.hard[t] = (pred[t] != v.labels[t]) ? 1 : 0;
    masks.push_back(std::move(m));
  }
  return masks;
}

double mean_hard_fraction(const std::vector<HardFrameMask>& masks) {
  size_t hard = 0, total = 0;
  for (const HardFrameMask& m : masks) {
    total += m.hard.size();
    for (uint8_t h : m.hard) hard += (h != 0);
  }
  if (total == 0) return 0.0;
  return static_cast<double>(hard) / static_cast<double>(total);
}

std::vector<DisturbedSample> gen_mask_hard_frame(const std::vector<VideoRecord>& videos,
                                                 const PredictorNet& predictor,
                                                 const std::vector<HardFrameMask>& masks) {
  check_videos(videos, "gen_mask_hard_frame");
  std::map<std::string, const HardFrameMask*> by_id;
  for (const HardFrameMask& m : masks) by_id[m.id] = &m;

  std::vector<DisturbedSample> out;
  for (const VideoRecord& v : videos) {
    auto it = by_id.find(v.id);
    if (it == by_id.end()) fail(ErrorKind::InvalidArg, "no hard-frame mask for " + v.id);
    const HardFrameMask& m = *it->second;
    if (m.hard.size() != v.t_len())
      fail(ErrorKind::InvalidArg, "mask length " + std::to_string(m.hard.size()) +
                                      " does not match " + v.id + " with " +
                                      std::to_string(v.t_len()) + " frames");
    out.push_back(masked_sample(v, predictor, m.hard, Provenance::Mhf));
  }
  return out;
}

std::vector<DisturbedSample> gen_random_mask(const std::vector<VideoRecord>& videos,
                                             const PredictorNet& predictor, double ratio,
                                             uint64_t seed) {
  check_videos(videos, "gen_random_mask");
  if (!(ratio >= 0.0 && ratio <= 1.0))
    fail(ErrorKind::InvalidArg, "mask ratio must lie in [0, 1]");

  RngStream rng(seed);
  std::vector<DisturbedSample> out;
  for (const VideoRecord& v : videos) {
    const size_t t_len = v.t_len();
    const size_t count = static_cast<size_t>(std::llround(ratio * static_cast<double>(t_len)));
    std::vector<size_t> order(t_len);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::vector<uint8_t> mask(t_len, 0);
    for (size_t i = 0; i < count; ++i) mask[order[i]] = 1;
    out.push_back(masked_sample(v, predictor, mask, Provenance::Rm));
  }
  return out;
}

void write_samples(const fs::path& dir, const std::vector<DisturbedSample>& samples,
                   size_t classes) {
  if (samples.empty()) fail(ErrorKind::InvalidArg, "no samples to write");
  if (classes == 0) fail(ErrorKind::InvalidArg, "classes must be positive");
  fs::create_directories(dir);

  std::set<std::string> seen;
  nlohmann::json index;
  index["version"] = 1;
  index["classes"] = classes;
  index["samples"] = nlohmann::json::array();
  for (const DisturbedSample& s : samples) {
    const std::string stem = std::string(provenance_name(s.provenance)) + "_" + s.id;
    if (!seen.insert(stem).second)
      fail(ErrorKind::InvalidArg, "duplicate sample " + stem);
    if (s.input.rank() != 2 || s.input.dim(1) != classes)
      fail(ErrorKind::InvalidArg, "sample " + stem + " probs " + s.input.shape_str() +
                                      " do not match " + std::to_string(classes) + " classes");
    if (s.target.size() != s.input.dim(0))
      fail(ErrorKind::InvalidArg, "sample " + stem + " target length mismatch");

    io::write_prob_seq(dir / (stem + ".mspp"), s.input);
    write_labels_text(dir / (stem + ".labels.txt"), s.target);

    nlohmann::json j;
    j["id"] = s.id;
    j["provenance"] = provenance_name(s.provenance);
    j["probs"] = stem + ".mspp";
    j["labels"] = stem + ".labels.txt";
    j["t"] = s.input.dim(0);
    if (s.provenance == Provenance::Cv)
      j["fold"] = s.fold;
    else
      j["mask_ratio"] = s.mask_ratio;
    index["samples"].push_back(std::move(j));
  }
  io::atomic_write(dir / "samples.json", index.dump(2) + "\n");
}

std::vector<DisturbedSample> read_samples(const fs::path& path) {
  const fs::path index_path = fs::is_directory(path) ? path / "samples.json" : path;
  const fs::path dir = index_path.parent_path();

  nlohmann::json index;
  try {
    index = nlohmann::json::parse(io::read_file(index_path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Dependency, index_path.string() + ": " + e.what());
  }

  try {
    if (index.at("version").get<int>() != 1)
      fail(ErrorKind::Dependency, index_path.string() + ": unsupported version");
    const size_t classes = index.at("classes").get<size_t>();
    if (classes == 0) fail(ErrorKind::Dependency, index_path.string() + ": zero classes");

    std::vector<DisturbedSample> out;
    for (const auto& j : index.at("samples")) {
      DisturbedSample s;
      s.id = j.at("id").get<std::string>();
      s.provenance = provenance_from(j.at("provenance").get<std::string>());
      s.input = io::read_prob_seq(dir / j.at("probs").get<std::string>());
      const size_t t_len = j.at("t").get<size_t>();
      if (s.input.dim(0) != t_len || s.input.dim(1) != classes)
        fail(ErrorKind::Dependency, "sample " + s.id + " probs " + s.input.shape_str() +
                                        " disagree with the index (" + std::to_string(t_len) +
                                        " x " + std::to_string(classes) + ")");
      s.target = read_labels_text(dir / j.at("labels").get<std::string>(), classes);
      if (s.target.size() != t_len)
        fail(ErrorKind::Dependency, "sample " + s.id + " target length mismatch");
      if (s.provenance == Provenance::Cv)
        s.fold = j.at("fold").get<size_t>();
      else
        s.mask_ratio = j.at("mask_ratio").get<double>();
      out.push_back(std::move(s));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Dependency, index_path.string() + ": " + e.what());
  }
}

}  // namespace mstage
