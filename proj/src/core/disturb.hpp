#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "core/models.hpp"
#include "core/trainer.hpp"

namespace mstage {

// ---- fold partition for the cross-validate generator ----

struct FoldAssignment {
  size_t k = 0;
  std::map<std::string, size_t> fold;              // video id -> fold index
  std::vector<std::vector<std::string>> members;   // fold index -> video ids
};

// Uniformly random assignment under seed; fold sizes differ by at most one.
FoldAssignment partition_folds(const std::vector<std::string>& ids, size_t k, uint64_t seed);

// ---- disturbed samples ----

enum class Provenance { Cv, Mhf, Rm };

const char* provenance_name(Provenance p);
Provenance provenance_from(const std::string& name);

struct DisturbedSample {
  std::string id;
  Tensor input;  // T x C probability sequence
  PhaseLabels target;
  Provenance provenance = Provenance::Cv;
  size_t fold = 0;          // cv: fold whose model produced this sample
  double mask_ratio = 0.0;  // mhf/rm: realized fraction of masked frames
};

// trainer-ready view; ids gain a "<provenance>:" prefix for diagnostics
std::vector<RefineSample> to_refine_samples(const std::vector<DisturbedSample>& samples);

// ---- cross-validate generator ----

// Per-fold audit record: proves the model for fold f never saw its eval videos.
struct CvFoldLog {
  size_t fold = 0;
  uint64_t seed = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> eval_ids;
  double final_loss = 0.0;
};

// Fold predictors reuse the main predictor architecture.
struct CvOptions {
  size_t k = 10;
  size_t classes = 0;
  size_t filters = 16;
  size_t blocks = 8;
  TrainConfig train;  // train.seed is the base; fold f derives seed ^ f
};

std::vector<DisturbedSample> gen_cross_validate(const std::vector<VideoRecord>& videos,
                                                const CvOptions& opt,
                                                std::vector<CvFoldLog>* log = nullptr);

// ---- hard-frame detection and masking generators ----

struct HardFrameMask {
  std::string id;
  std::vector<uint8_t> hard;  // one flag per frame

  double fraction() const;
};

// Trains a single-frame linear-softmax classifier (no temporal context) on the
// split; a frame is hard iff that classifier's argmax misses the ground truth.
std::vector<HardFrameMask> detect_hard_frames(const std::vector<VideoRecord>& videos,
                                              size_t classes, uint64_t seed);

// total hard frames / total frames; the default random-mask ratio
double mean_hard_fraction(const std::vector<HardFrameMask>& masks);

// Zeroes features at hard frames, re-runs the trained predictor on the result.
std::vector<DisturbedSample> gen_mask_hard_frame(const std::vector<VideoRecord>& videos,
                                                 const PredictorNet& predictor,
                                                 const std::vector<HardFrameMask>& masks);

// Same masking, but round(ratio * T) uniformly chosen frames per video.
std::vector<DisturbedSample> gen_random_mask(const std::vector<VideoRecord>& videos,
                                             const PredictorNet& predictor, double ratio,
                                             uint64_t seed);

// ---- persistence: per-sample MSPP + labels, indexed by samples.json ----

void write_samples(const std::filesystem::path& dir,
                   const std::vector<DisturbedSample>& samples, size_t classes);
// path may be the directory or the samples.json inside it
std::vector<DisturbedSample> read_samples(const std::filesystem::path& path);

}  // namespace mstage
