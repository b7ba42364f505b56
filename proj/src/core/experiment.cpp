#include "core/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <set>

#include <json.hpp>

#include "core/error.hpp"
#include "core/opconfig.hpp"
#include "core/serialize.hpp"
#include "core/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mstage {
using opcfg::check_keys;
namespace {

template <class T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string iso_now() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string fnv1a_hex(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json train_to_json(const TrainConfig& t) {
  json j;
  j["epochs"] = t.epochs;
  j["lr"] = t.lr;
  j["lambda"] = t.lambda;
  j["shuffle"] = t.shuffle;
  j["grad_clip"] = t.grad_clip;
  j["checkpoint_every"] = t.checkpoint_every;
  return j;
}

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["out"] = cfg.out.string();
  j["seeds"] = cfg.seeds;
  if (cfg.manifest) j["dataset"]["manifest"] = cfg.manifest->string();
  if (cfg.generate) {
    const SynthConfig& c = *cfg.generate;
    json g;
    g["classes"] = c.classes;
    g["feat_dim"] = c.feat_dim;
    g["train_videos"] = c.train_videos;
    g["test_videos"] = c.test_videos;
    g["dur_log_mean"] = c.dur_log_mean;
    g["dur_log_sd"] = c.dur_log_sd;
    g["dur_min"] = c.dur_min;
    g["dur_max"] = c.dur_max;
    g["p_skip"] = c.p_skip;
    g["noise_sd"] = c.noise_sd;
    g["ambig_window"] = c.ambig_window;
    g["p_amb"] = c.p_amb;
    g["blend_lo"] = c.blend_lo;
    g["blend_hi"] = c.blend_hi;
    g["seed"] = c.seed;
    j["dataset"]["generate"] = g;
  }
  j["predictor"]["filters"] = cfg.pred_filters;
  j["predictor"]["blocks"] = cfg.pred_blocks;
  j["predictor"]["train"] = train_to_json(cfg.pred_train);
  json types = json::array();
  for (Provenance p : cfg.types) types.push_back(provenance_name(p));
  j["disturb"]["types"] = types;
  j["disturb"]["k"] = cfg.k;
  j["disturb"]["mask_ratio"] = cfg.mask_ratio;
  j["refiner"]["kind"] = refiner_kind_name(cfg.refiner.kind);
  j["refiner"]["stacks"] = cfg.refiner.stacks;
  j["refiner"]["hidden"] = cfg.refiner.hidden;
  j["refiner"]["filters"] = cfg.refiner.filters;
  j["refiner"]["blocks"] = cfg.refiner.blocks;
  j["refiner"]["train"] = train_to_json(cfg.refiner_train);
  return j;
}

AggregateStat stat_of(const std::vector<double>& xs) {
  AggregateStat s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  for (double x : xs) s.stddev += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(s.stddev / static_cast<double>(xs.size()));
  return s;
}

MetricsReport eval_on(const PredictorNet& pred, const RefinerNet* refiner,
                      const std::vector<VideoRecord>& videos) {
  std::vector<VideoMetrics> vm;
  for (const VideoRecord& v : videos) {
    InferResult res = multistage_infer({&pred, refiner}, v.features);
    vm.push_back(video_metrics(v.id, res.labels, v.labels));
  }
  return aggregate(std::move(vm));
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("config: ") + e.what());
  }

  try {
    check_keys(j, {"out", "seeds", "dataset", "predictor", "disturb", "refiner"}, "config");
    ExperimentConfig cfg;
    if (j.contains("out")) {
      fs::path p = j.at("out").get<std::string>();
      cfg.out = p.is_absolute() ? p : base_dir / p;
    }
    if (j.contains("seeds")) {
      cfg.seeds = j.at("seeds").get<std::vector<uint64_t>>();
      if (cfg.seeds.empty()) fail(ErrorKind::Config, "seeds must not be empty");
      std::set<uint64_t> uniq(cfg.seeds.begin(), cfg.seeds.end());
      if (uniq.size() != cfg.seeds.size()) fail(ErrorKind::Config, "seeds must be distinct");
    }

    if (!j.contains("dataset")) fail(ErrorKind::Config, "config: missing dataset section");
    const json& d = j.at("dataset");
    check_keys(d, {"manifest", "generate"}, "dataset");
    if (d.contains("manifest") == d.contains("generate"))
      fail(ErrorKind::Config, "dataset needs exactly one of \"manifest\" or \"generate\"");
    if (d.contains("manifest")) {
      fs::path p = d.at("manifest").get<std::string>();
      cfg.manifest = p.is_absolute() ? p : base_dir / p;
    } else {
      cfg.generate = opcfg::parse_generate(d.at("generate"), "dataset.generate");
    }

    if (j.contains("predictor")) {
      const json& p = j.at("predictor");
      check_keys(p, {"filters", "blocks", "train"}, "predictor");
      get_if(p, "filters", cfg.pred_filters);
      get_if(p, "blocks", cfg.pred_blocks);
      if (p.contains("train"))
        cfg.pred_train = opcfg::parse_train(p.at("train"), "predictor.train");
    }

    if (j.contains("disturb")) {
      const json& ds = j.at("disturb");
      check_keys(ds, {"types", "k", "mask_ratio"}, "disturb");
      if (ds.contains("types")) cfg.types = opcfg::parse_types(ds.at("types"), "disturb.types");
      get_if(ds, "k", cfg.k);
      get_if(ds, "mask_ratio", cfg.mask_ratio);
      if (cfg.mask_ratio > 1.0) fail(ErrorKind::Config, "disturb.mask_ratio must be <= 1");
    }

    if (j.contains("refiner")) {
      const json& r = j.at("refiner");
      json arch = r;
      arch.erase("train");
      opcfg::parse_refiner_arch(arch, "refiner", cfg.refiner);
      if (r.contains("train"))
        cfg.refiner_train = opcfg::parse_train(r.at("train"), "refiner.train");
    }
    return cfg;
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("config: ") + e.what());
  }
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  if (cfg.out.empty()) fail(ErrorKind::Config, "experiment needs an output directory");
  if (cfg.seeds.empty()) fail(ErrorKind::Config, "experiment needs at least one seed");
  if (cfg.types.empty()) fail(ErrorKind::Config, "experiment needs at least one disturb type");
  if (cfg.manifest.has_value() == cfg.generate.has_value())
    fail(ErrorKind::Config, "experiment needs exactly one dataset source");

  fs::create_directories(cfg.out);
  const std::string config_text = config_to_json(cfg).dump(2) + "\n";
  io::atomic_write(cfg.out / "config.json", config_text);

  json ledger;
  ledger["version"] = kLibVersion;
  ledger["config_hash"] = fnv1a_hex(config_text);
  ledger["started"] = iso_now();

  DatasetManifest manifest;
  if (cfg.generate) {
    manifest = generate_synthetic(*cfg.generate, cfg.out / "dataset");
    ledger["dataset"] = "dataset/manifest.json";
  } else {
    manifest = read_manifest(*cfg.manifest);
    ledger["dataset"] = cfg.manifest->string();
  }
  const auto train_videos = load_videos(manifest, manifest.train);
  const auto test_videos = load_videos(manifest, manifest.test);
  const size_t classes = manifest.classes;
  const size_t in_dim = manifest.feat_dim;

  std::map<std::string, std::vector<double>> acc, jacc, rec;
  const char* method_names[] = {"predictor", "e2e", "non_e2e"};
  ledger["seeds"] = json::array();

  for (uint64_t seed : cfg.seeds) {
    const fs::path seed_dir = cfg.out / ("seed_" + std::to_string(seed));
    fs::create_directories(seed_dir / "reports");
    json entry;
    entry["seed"] = seed;
    entry["predictor_train_ids"] = manifest.train;

    // single-stage predictor
    PredictorNet pred(in_dim, classes, seed, cfg.pred_filters, cfg.pred_blocks);
    TrainConfig pt = cfg.pred_train;
    pt.seed = seed;
    pt.checkpoint = seed_dir / "predictor.msck";
    train_predictor(pred, train_videos, pt).write_jsonl(seed_dir / "predictor_history.jsonl");

    // disturbed sequences for the refiner
    std::vector<DisturbedSample> samples;
    std::vector<HardFrameMask> masks;
    bool have_masks = false;
    for (Provenance type : cfg.types) {
      if (type == Provenance::Cv) {
        CvOptions co;
        co.k = cfg.k;
        co.classes = classes;
        co.filters = cfg.pred_filters;
        co.blocks = cfg.pred_blocks;
        co.train = cfg.pred_train;
        co.train.seed = seed;
        std::vector<CvFoldLog> fold_log;
        auto cv = gen_cross_validate(train_videos, co, &fold_log);
        samples.insert(samples.end(), cv.begin(), cv.end());
        json folds = json::array();
        for (const CvFoldLog& f : fold_log) {
          json fj;
          fj["fold"] = f.fold;
          fj["seed"] = f.seed;
          fj["train_ids"] = f.train_ids;
          fj["eval_ids"] = f.eval_ids;
          fj["final_loss"] = f.final_loss;
          folds.push_back(std::move(fj));
        }
        entry["cv_folds"] = std::move(folds);
      } else if (type == Provenance::Mhf) {
        if (!have_masks) {
          masks = detect_hard_frames(train_videos, classes, seed);
          have_masks = true;
        }
        auto mhf = gen_mask_hard_frame(train_videos, pred, masks);
        samples.insert(samples.end(), mhf.begin(), mhf.end());
      } else {
        double ratio = cfg.mask_ratio;
        if (ratio < 0.0) {
          if (!have_masks) {
            masks = detect_hard_frames(train_videos, classes, seed);
            have_masks = true;
          }
          ratio = mean_hard_fraction(masks);
        }
        entry["rm_ratio"] = ratio;
        auto rm = gen_random_mask(train_videos, pred, ratio, seed);
        samples.insert(samples.end(), rm.begin(), rm.end());
      }
    }
    write_samples(seed_dir / "disturbed", samples, classes);
    json sample_ids = json::array();
    for (const DisturbedSample& s : samples)
      sample_ids.push_back(std::string(provenance_name(s.provenance)) + ":" + s.id);
    entry["refiner_samples"] = std::move(sample_ids);

    // non-e2e refiner on the disturbed sequences
    RefinerConfig rc = cfg.refiner;
    rc.classes = classes;
    RefinerNet refiner(rc, seed);
    TrainConfig rt = cfg.refiner_train;
    rt.seed = seed;
    rt.checkpoint = seed_dir / "refiner.msck";
    train_refiner(refiner, to_refine_samples(samples), rt)
        .write_jsonl(seed_dir / "refiner_history.jsonl");

    // e2e baseline: same architectures, joint training
    PredictorNet e2e_pred(in_dim, classes, seed, cfg.pred_filters, cfg.pred_blocks);
    RefinerNet e2e_ref(rc, seed);
    TrainConfig et = cfg.pred_train;
    et.seed = seed;
    et.checkpoint = seed_dir / "e2e_predictor.msck";
    et.checkpoint_refiner = seed_dir / "e2e_refiner.msck";
    train_e2e(e2e_pred, &e2e_ref, train_videos, et).write_jsonl(seed_dir / "e2e_history.jsonl");

    // evaluate the three methods on the held-out split
    const MetricsReport reports[] = {
        eval_on(pred, nullptr, test_videos),
        eval_on(e2e_pred, &e2e_ref, test_videos),
        eval_on(pred, &refiner, test_videos),
    };
    const char* report_files[] = {"predictor.json", "e2e.json", "non_e2e.json"};
    for (int i = 0; i < 3; ++i) {
      write_report(seed_dir / "reports" / report_files[i], reports[i]);
      acc[method_names[i]].push_back(reports[i].acc.mean);
      jacc[method_names[i]].push_back(reports[i].jacc.mean);
      rec[method_names[i]].push_back(reports[i].rec.mean);
    }
    json cmp;
    cmp["non_e2e_vs_predictor"] =
        json::parse(comparison_to_json_text(compare_reports(reports[0], reports[2])));
    cmp["non_e2e_vs_e2e"] =
        json::parse(comparison_to_json_text(compare_reports(reports[1], reports[2])));
    io::atomic_write(seed_dir / "reports" / "comparison.json", cmp.dump(2) + "\n");

    json artifacts = json::array();
    for (const char* a :
         {"predictor.msck", "predictor_history.jsonl", "disturbed", "refiner.msck",
          "refiner_history.jsonl", "e2e_predictor.msck", "e2e_refiner.msck", "e2e_history.jsonl",
          "reports/predictor.json", "reports/e2e.json", "reports/non_e2e.json",
          "reports/comparison.json"})
      artifacts.push_back((fs::path("seed_" + std::to_string(seed)) / a).generic_string());
    entry["artifacts"] = std::move(artifacts);
    ledger["seeds"].push_back(std::move(entry));
  }

  // cross-seed summary
  ExperimentResult result;
  result.out = cfg.out;
  result.seeds = cfg.seeds;
  json summary;
  summary["seeds"] = cfg.seeds;
  for (const char* m : method_names) {
    MethodSummary ms;
    ms.acc = stat_of(acc[m]);
    ms.jacc = stat_of(jacc[m]);
    ms.rec = stat_of(rec[m]);
    ms.per_seed_acc = acc[m];
    json mj;
    mj["acc"] = {{"mean", ms.acc.mean}, {"std", ms.acc.stddev}, {"per_seed", acc[m]}};
    mj["jacc"] = {{"mean", ms.jacc.mean}, {"std", ms.jacc.stddev}, {"per_seed", jacc[m]}};
    mj["rec"] = {{"mean", ms.rec.mean}, {"std", ms.rec.stddev}, {"per_seed", rec[m]}};
    summary["methods"][m] = std::move(mj);
    result.methods[m] = std::move(ms);
  }
  io::atomic_write(cfg.out / "summary.json", summary.dump(2) + "\n");

  ledger["finished"] = iso_now();
  io::atomic_write(cfg.out / "ledger.json", ledger.dump(2) + "\n");
  return result;
}

}  // namespace mstage
