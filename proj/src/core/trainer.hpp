#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "core/models.hpp"

namespace mstage {

struct TrainConfig {
  size_t epochs = 50;
  double lr = 1e-3;
  double lambda = 1.0;  // predictor-loss smoothing weight (predictor / e2e only)
  uint64_t seed = 0;
  bool shuffle = true;
  double grad_clip = 0.0;  // 0 disables clipping
  // checkpoint written here when non-empty: every checkpoint_every epochs
  // (0 = final only) and always after the last epoch
  std::filesystem::path checkpoint;
  std::filesystem::path checkpoint_refiner;  // train_e2e's second artifact
  size_t checkpoint_every = 0;
};

struct EpochStats {
  size_t epoch = 0;
  double loss = 0.0;
  double train_acc = 0.0;
  double seconds = 0.0;
  std::vector<double> stage_losses;  // refiner / e2e stages, in stage order
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  void write_jsonl(const std::filesystem::path& path) const;
};

// A refinement training example: probability sequence in, labels out.
// Refiner training sees nothing else (in particular, no features).
struct RefineSample {
  std::string id;
  Tensor probs;  // T x C
  PhaseLabels labels;
};

TrainHistory train_predictor(PredictorNet& net, const std::vector<VideoRecord>& videos,
                             const TrainConfig& cfg);

TrainHistory train_refiner(RefinerNet& net, const std::vector<RefineSample>& samples,
                           const TrainConfig& cfg);

// Joint baseline: smoothed CE on the predictor output plus per-stage refinement
// cross-entropy, unit weights, one update over all parameters per video.
// refiner may be null, which reduces to train_predictor exactly.
TrainHistory train_e2e(PredictorNet& net, RefinerNet* refiner,
                       const std::vector<VideoRecord>& videos, const TrainConfig& cfg);

}  // namespace mstage
