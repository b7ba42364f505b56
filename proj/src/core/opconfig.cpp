#include "core/opconfig.hpp"

#include <set>

#include "core/error.hpp"
#include "core/serialize.hpp"

using nlohmann::json;

namespace mstage::opcfg {
namespace {

template <class T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!j.is_object()) fail(ErrorKind::Config, where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) known = true;
    if (!known) fail(ErrorKind::Config, where + ": unknown key \"" + it.key() + "\"");
  }
}

void merge(json& base, const json& overlay) {
  if (!base.is_object() || !overlay.is_object()) {
    base = overlay;
    return;
  }
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    if (base.contains(it.key()))
      merge(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

json load_config(const char* path_or_null, const char* overrides_or_null) {
  json base = json::object();
  if (path_or_null) {
    try {
      base = json::parse(io::read_file(path_or_null));
    } catch (const json::exception& e) {
      fail(ErrorKind::Config, std::string(path_or_null) + ": " + e.what());
    }
    if (!base.is_object())
      fail(ErrorKind::Config, std::string(path_or_null) + ": config must be a JSON object");
  }
  if (overrides_or_null) {
    json overlay;
    try {
      overlay = json::parse(overrides_or_null);
    } catch (const json::exception& e) {
      fail(ErrorKind::Config, std::string("overrides: ") + e.what());
    }
    merge(base, overlay);
  }
  return base;
}

TrainConfig parse_train(const json& j, const std::string& where) {
  check_keys(j, {"epochs", "lr", "lambda", "shuffle", "grad_clip", "checkpoint_every"}, where);
  TrainConfig t;
  try {
    get_if(j, "epochs", t.epochs);
    get_if(j, "lr", t.lr);
    get_if(j, "lambda", t.lambda);
    get_if(j, "shuffle", t.shuffle);
    get_if(j, "grad_clip", t.grad_clip);
    get_if(j, "checkpoint_every", t.checkpoint_every);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, where + ": " + e.what());
  }
  if (t.epochs < 1) fail(ErrorKind::Config, where + ".epochs must be >= 1");
  if (!(t.lr > 0.0)) fail(ErrorKind::Config, where + ".lr must be > 0");
  if (t.lambda < 0.0) fail(ErrorKind::Config, where + ".lambda must be >= 0");
  return t;
}

SynthConfig parse_generate(const json& j, const std::string& where) {
  check_keys(j,
             {"classes", "feat_dim", "train_videos", "test_videos", "dur_log_mean", "dur_log_sd",
              "dur_min", "dur_max", "p_skip", "noise_sd", "ambig_window", "p_amb", "blend_lo",
              "blend_hi", "seed"},
             where);
  SynthConfig c;
  try {
    get_if(j, "classes", c.classes);
    get_if(j, "feat_dim", c.feat_dim);
    get_if(j, "train_videos", c.train_videos);
    get_if(j, "test_videos", c.test_videos);
    get_if(j, "dur_log_mean", c.dur_log_mean);
    get_if(j, "dur_log_sd", c.dur_log_sd);
    get_if(j, "dur_min", c.dur_min);
    get_if(j, "dur_max", c.dur_max);
    get_if(j, "p_skip", c.p_skip);
    get_if(j, "noise_sd", c.noise_sd);
    get_if(j, "ambig_window", c.ambig_window);
    get_if(j, "p_amb", c.p_amb);
    get_if(j, "blend_lo", c.blend_lo);
    get_if(j, "blend_hi", c.blend_hi);
    get_if(j, "seed", c.seed);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, where + ": " + e.what());
  }
  return c;
}

std::vector<Provenance> parse_types(const json& j, const std::string& where) {
  if (!j.is_array()) fail(ErrorKind::Config, where + " must be an array");
  std::vector<Provenance> out;
  for (const auto& t : j) {
    if (!t.is_string()) fail(ErrorKind::Config, where + " entries must be strings");
    const std::string name = t.get<std::string>();
    if (name != "cv" && name != "mhf" && name != "rm")
      fail(ErrorKind::Config, where + ": unknown type \"" + name + "\"");
    out.push_back(provenance_from(name));
  }
  if (out.empty()) fail(ErrorKind::Config, where + " must not be empty");
  std::set<std::string> uniq;
  for (Provenance p : out) uniq.insert(provenance_name(p));
  if (uniq.size() != out.size()) fail(ErrorKind::Config, where + " must be distinct");
  return out;
}

TrainPredictorOpts parse_train_predictor(const json& j) {
  check_keys(j, {"filters", "blocks", "seed", "train"}, "train-predictor config");
  TrainPredictorOpts o;
  try {
    get_if(j, "filters", o.filters);
    get_if(j, "blocks", o.blocks);
    get_if(j, "seed", o.seed);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("train-predictor config: ") + e.what());
  }
  if (j.contains("train")) o.train = parse_train(j.at("train"), "train");
  return o;
}

GenDisturbedOpts parse_gen_disturbed(const json& j) {
  check_keys(j, {"types", "k", "mask_ratio", "seed", "train"}, "gen-disturbed config");
  GenDisturbedOpts o;
  try {
    if (j.contains("types")) o.types = parse_types(j.at("types"), "types");
    get_if(j, "k", o.k);
    get_if(j, "mask_ratio", o.mask_ratio);
    get_if(j, "seed", o.seed);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("gen-disturbed config: ") + e.what());
  }
  if (o.mask_ratio > 1.0) fail(ErrorKind::Config, "mask_ratio must be <= 1");
  if (j.contains("train")) o.train = parse_train(j.at("train"), "train");
  return o;
}

void parse_refiner_arch(const json& j, const std::string& where, RefinerConfig& out) {
  check_keys(j, {"kind", "stacks", "hidden", "filters", "blocks"}, where);
  try {
    if (j.contains("kind")) out.kind = refiner_kind_from(j.at("kind").get<std::string>());
    get_if(j, "stacks", out.stacks);
    get_if(j, "hidden", out.hidden);
    get_if(j, "filters", out.filters);
    get_if(j, "blocks", out.blocks);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, where + ": " + e.what());
  }
  if (out.stacks < 1) fail(ErrorKind::Config, where + ".stacks must be >= 1");
}

TrainRefinerOpts parse_train_refiner(const json& j) {
  check_keys(j, {"kind", "stacks", "hidden", "filters", "blocks", "seed", "train"},
             "train-refiner config");
  TrainRefinerOpts o;
  json arch = j;
  arch.erase("seed");
  arch.erase("train");
  parse_refiner_arch(arch, "train-refiner config", o.refiner);
  try {
    get_if(j, "seed", o.seed);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("train-refiner config: ") + e.what());
  }
  if (j.contains("train")) o.train = parse_train(j.at("train"), "train");
  return o;
}

TrainE2eOpts parse_train_e2e(const json& j) {
  check_keys(j, {"predictor", "refiner", "seed", "train"}, "train-e2e config");
  TrainE2eOpts o;
  try {
    if (j.contains("predictor")) {
      const json& p = j.at("predictor");
      check_keys(p, {"filters", "blocks"}, "predictor");
      get_if(p, "filters", o.filters);
      get_if(p, "blocks", o.blocks);
    }
    if (j.contains("refiner")) parse_refiner_arch(j.at("refiner"), "refiner", o.refiner);
    get_if(j, "seed", o.seed);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("train-e2e config: ") + e.what());
  }
  if (j.contains("train")) o.train = parse_train(j.at("train"), "train");
  return o;
}

}  // namespace mstage::opcfg
