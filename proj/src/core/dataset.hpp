#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "core/losses.hpp"
#include "core/tensor.hpp"

namespace mstage {

struct VideoRecord {
  std::string id;
  Tensor features;  // T x D
  PhaseLabels labels;
  std::vector<uint8_t> hard_mask;  // empty, or one flag per frame (diagnostics)

  size_t t_len() const { return labels.size(); }
};

// Synthetic workflow benchmark: per-phase unit prototypes, lognormal phase
// durations, monotone phase order, blended features near phase boundaries.
struct SynthConfig {
  size_t classes = 7;
  size_t feat_dim = 16;
  size_t train_videos = 40;
  size_t test_videos = 14;
  double dur_log_mean = 4.32;  // exp(.) ~ 75 frames/phase
  double dur_log_sd = 0.5;
  size_t dur_min = 20;
  size_t dur_max = 400;
  double p_skip = 0.05;
  double noise_sd = 1.0;
  size_t ambig_window = 6;  // w frames on each side of a boundary
  double p_amb = 0.5;
  double blend_lo = 0.3;
  double blend_hi = 0.7;
  uint64_t seed = 1;
};

struct ManifestEntry {
  std::string features;  // path relative to the manifest directory
  std::string labels;
  size_t t_len = 0;
};

struct DatasetManifest {
  size_t classes = 0;
  size_t feat_dim = 0;
  std::vector<std::string> train;
  std::vector<std::string> test;
  std::map<std::string, ManifestEntry> videos;
  std::optional<SynthConfig> generator;
  std::filesystem::path root;  // directory holding manifest.json

  const std::vector<std::string>& split(const std::string& name) const;
};

// Writes the dataset under dir (created if needed) and returns its manifest.
DatasetManifest generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& dir);

DatasetManifest read_manifest(const std::filesystem::path& manifest_path);

VideoRecord load_video(const DatasetManifest& m, const std::string& id);
std::vector<VideoRecord> load_videos(const DatasetManifest& m,
                                     const std::vector<std::string>& ids);

// Labels as text, one integer per line.
void write_labels_text(const std::filesystem::path& path, const PhaseLabels& labels);
PhaseLabels read_labels_text(const std::filesystem::path& path, size_t classes);

}  // namespace mstage
