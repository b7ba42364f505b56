#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "core/disturb.hpp"
#include "core/eval.hpp"
#include "core/models.hpp"
#include "core/trainer.hpp"

namespace mstage {

// Full comparison protocol: generate/load data, train the single-stage
// predictor, the E2E baseline, and the non-E2E refiner (on disturbed
// sequences), then evaluate all three on the test split, per seed.
struct ExperimentConfig {
  std::filesystem::path out;
  std::vector<uint64_t> seeds{1};

  // exactly one dataset source
  std::optional<std::filesystem::path> manifest;
  std::optional<SynthConfig> generate;

  size_t pred_filters = 16;
  size_t pred_blocks = 8;
  TrainConfig pred_train;

  std::vector<Provenance> types{Provenance::Cv, Provenance::Mhf};
  size_t k = 10;
  double mask_ratio = -1.0;  // < 0: use the measured hard-frame fraction

  RefinerConfig refiner;  // classes filled from the dataset
  TrainConfig refiner_train;
};

// Parses the documented JSON schema; relative paths resolve against base_dir.
// Unknown keys and schema violations fail with ErrorKind::Config.
ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::filesystem::path& base_dir);

struct MethodSummary {
  AggregateStat acc, jacc, rec;       // across seeds (population std)
  std::vector<double> per_seed_acc;   // seed order follows cfg.seeds
};

struct ExperimentResult {
  std::filesystem::path out;
  std::vector<uint64_t> seeds;
  std::map<std::string, MethodSummary> methods;  // predictor / e2e / non_e2e
};

// Runs everything under cfg.out and writes per-seed reports, a cross-seed
// summary.json, and ledger.json. Reports are byte-stable across repeat runs;
// timestamps live only in the ledger.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

}  // namespace mstage
