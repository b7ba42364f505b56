#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "core/dataset.hpp"
#include "core/disturb.hpp"
#include "core/models.hpp"
#include "core/trainer.hpp"

// JSON config schemas for the pipeline operations. Each parser rejects unknown
// keys (ErrorKind::Config) so typos never silently fall back to defaults.
namespace mstage::opcfg {

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                const std::string& where);

// Reads path (optional), applies the overrides object (optional, recursive
// merge — scalars and arrays replace, objects merge). Missing file ->
// Dependency, malformed JSON -> Config.
nlohmann::json load_config(const char* path_or_null, const char* overrides_or_null);
void merge(nlohmann::json& base, const nlohmann::json& overlay);

TrainConfig parse_train(const nlohmann::json& j, const std::string& where);
SynthConfig parse_generate(const nlohmann::json& j, const std::string& where);
std::vector<Provenance> parse_types(const nlohmann::json& j, const std::string& where);

struct TrainPredictorOpts {
  size_t filters = 16;
  size_t blocks = 8;
  uint64_t seed = 0;
  TrainConfig train;
};
TrainPredictorOpts parse_train_predictor(const nlohmann::json& j);

struct GenDisturbedOpts {
  std::vector<Provenance> types{Provenance::Cv, Provenance::Mhf};
  size_t k = 10;
  double mask_ratio = -1.0;  // < 0: measured hard-frame fraction
  uint64_t seed = 0;
  TrainConfig train;  // fold predictor training
};
GenDisturbedOpts parse_gen_disturbed(const nlohmann::json& j);

struct TrainRefinerOpts {
  RefinerConfig refiner;  // classes filled from the samples
  uint64_t seed = 0;
  TrainConfig train;
};
TrainRefinerOpts parse_train_refiner(const nlohmann::json& j);

struct TrainE2eOpts {
  size_t filters = 16;
  size_t blocks = 8;
  RefinerConfig refiner;
  uint64_t seed = 0;
  TrainConfig train;
};
TrainE2eOpts parse_train_e2e(const nlohmann::json& j);

void parse_refiner_arch(const nlohmann::json& j, const std::string& where, RefinerConfig& out);

}  // namespace mstage::opcfg
