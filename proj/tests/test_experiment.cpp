#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include <json.hpp>

#include "core/error.hpp"
#include "core/experiment.hpp"
#include "core/serialize.hpp"

using namespace mstage;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("mstage_exp_" + std::to_string(getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// small but complete profile: three methods, three disturb types, two seeds
ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig cfg;
  cfg.out = out;
  cfg.seeds = {1, 2};
  SynthConfig sc;
  sc.classes = 3;
  sc.feat_dim = 6;
  sc.train_videos = 6;
  sc.test_videos = 2;
  sc.dur_log_mean = 3.0;
  sc.dur_log_sd = 0.3;
  sc.dur_min = 10;
  sc.dur_max = 50;
  sc.noise_sd = 0.2;
  sc.ambig_window = 4;
  sc.seed = 3;
  cfg.generate = sc;
  cfg.pred_filters = 8;
  cfg.pred_blocks = 2;
  cfg.pred_train.epochs = 4;
  cfg.pred_train.lr = 1e-2;
  cfg.types = {Provenance::Cv, Provenance::Mhf, Provenance::Rm};
  cfg.k = 3;
  cfg.refiner.kind = RefinerKind::Gru;
  cfg.refiner.stacks = 2;
  cfg.refiner.hidden = 8;
  cfg.refiner_train.epochs = 4;
  cfg.refiner_train.lr = 1e-2;
  return cfg;
}

}  // namespace

TEST_CASE("config parsing applies defaults and rejects bad schemas") {
  const std::string text = R"({
    "out": "runs/demo",
    "seeds": [5, 6],
    "dataset": {"generate": {"classes": 4, "feat_dim": 8, "train_videos": 10, "test_videos": 3}},
    "predictor": {"filters": 12, "blocks": 4, "train": {"epochs": 20, "lr": 0.005}},
    "disturb": {"types": ["cv", "rm"], "k": 5, "mask_ratio": 0.2},
    "refiner": {"kind": "causal-tcn", "stacks": 3, "train": {"epochs": 10}}
  })";
  ExperimentConfig cfg = parse_experiment_config(text, "/base");
  CHECK(cfg.out == fs::path("/base/runs/demo"));
  CHECK(cfg.seeds == std::vector<uint64_t>{5, 6});
  REQUIRE(cfg.generate.has_value());
  CHECK(cfg.generate->classes == 4);
  CHECK(cfg.generate->train_videos == 10);
  CHECK(cfg.generate->noise_sd == 1.0);  // untouched default
  CHECK(cfg.pred_filters == 12);
  CHECK(cfg.pred_blocks == 4);
  CHECK(cfg.pred_train.epochs == 20);
  CHECK(cfg.pred_train.lr == 0.005);
  CHECK(cfg.pred_train.lambda == 1.0);
  REQUIRE(cfg.types.size() == 2);
  CHECK(cfg.types[0] == Provenance::Cv);
  CHECK(cfg.types[1] == Provenance::Rm);
  CHECK(cfg.k == 5);
  CHECK(cfg.mask_ratio == 0.2);
  CHECK(cfg.refiner.kind == RefinerKind::CausalTcn);
  CHECK(cfg.refiner.stacks == 3);
  CHECK(cfg.refiner_train.epochs == 10);

  // minimal config: only a dataset
  ExperimentConfig minimal =
      parse_experiment_config(R"({"dataset": {"manifest": "m.json"}})", "/base");
  CHECK(minimal.manifest == fs::path("/base/m.json"));
  CHECK(minimal.seeds == std::vector<uint64_t>{1});
  CHECK(minimal.pred_train.epochs == 50);
  CHECK(minimal.refiner.kind == RefinerKind::Gru);

  auto expect_config_error = [](const std::string& body, const std::string& needle) {
    try {
      parse_experiment_config(body, "/base");
      FAIL_CHECK("accepted: " << body);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Config);
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  expect_config_error("{not json", "config");
  expect_config_error(R"({"dataset": {"manifest": "m"}, "bogus": 1})", "bogus");
  expect_config_error(R"({"dataset": {}})", "exactly one");
  expect_config_error(R"({"dataset": {"manifest": "m", "generate": {}}})", "exactly one");
  expect_config_error(R"({"dataset": {"manifest": "m"}, "seeds": []})", "seeds");
  expect_config_error(R"({"dataset": {"manifest": "m"}, "seeds": [1, 1]})", "distinct");
  expect_config_error(R"({"dataset": {"manifest": "m"}, "disturb": {"types": ["zz"]}})", "zz");
  expect_config_error(R"({"dataset": {"manifest": "m"}, "disturb": {"types": []}})", "empty");
  expect_config_error(
      R"({"dataset": {"manifest": "m"}, "predictor": {"train": {"epochs": 0}}})", "epochs");
  expect_config_error(
      R"({"dataset": {"manifest": "m"}, "refiner": {"kind": "mlp"}})", "mlp");
  expect_config_error(
      R"({"dataset": {"manifest": "m"}, "refiner": {"train": {"lr": -1}}})", "lr");
}

TEST_CASE("run_experiment writes the full artifact tree") {
  TempDir dir;
  ExperimentConfig cfg = tiny_config(dir.path / "run");
  ExperimentResult result = run_experiment(cfg);

  CHECK(result.methods.size() == 3);
  for (const char* m : {"predictor", "e2e", "non_e2e"}) {
    REQUIRE(result.methods.count(m) == 1);
    const MethodSummary& ms = result.methods.at(m);
    CHECK(ms.per_seed_acc.size() == 2);
    CHECK(ms.acc.mean > 0.0);
    CHECK(ms.acc.mean <= 1.0);
  }

  for (const char* f : {"config.json", "summary.json", "ledger.json", "dataset/manifest.json"})
    CHECK(fs::exists(cfg.out / f));
  for (uint64_t seed : {1, 2}) {
    fs::path sd = cfg.out / ("seed_" + std::to_string(seed));
    for (const char* f :
         {"predictor.msck", "predictor_history.jsonl", "refiner.msck", "refiner_history.jsonl",
          "e2e_predictor.msck", "e2e_refiner.msck", "e2e_history.jsonl",
          "disturbed/samples.json", "reports/predictor.json", "reports/e2e.json",
          "reports/non_e2e.json", "reports/comparison.json"})
      CHECK(fs::exists(sd / f));
    // 3 disturb types emit one sample per training video each
    auto samples = read_samples(sd / "disturbed");
    CHECK(samples.size() == 3 * 6);
  }

  // every ledger artifact exists on disk
  auto ledger = nlohmann::json::parse(io::read_file(cfg.out / "ledger.json"));
  CHECK(ledger.at("version").is_string());
  CHECK(ledger.at("config_hash").get<std::string>().size() == 16);
  for (const auto& entry : ledger.at("seeds")) {
    for (const auto& a : entry.at("artifacts"))
      CHECK(fs::exists(cfg.out / a.get<std::string>()));
    // anti-leakage audit
    for (const auto& fold : entry.at("cv_folds")) {
      for (const auto& ev : fold.at("eval_ids")) {
        for (const auto& tr : fold.at("train_ids")) CHECK(ev != tr);
      }
    }
  }

  // summary matches the returned result
  auto summary = nlohmann::json::parse(io::read_file(cfg.out / "summary.json"));
  CHECK(summary.at("methods").at("non_e2e").at("acc").at("mean").get<double>() ==
        doctest::Approx(result.methods.at("non_e2e").acc.mean).epsilon(1e-12));

  // loadable checkpoints compose a working pipeline
  PredictorNet pred = PredictorNet::load(cfg.out / "seed_1" / "predictor.msck");
  RefinerNet refiner = RefinerNet::load(cfg.out / "seed_1" / "refiner.msck");
  auto manifest = read_manifest(cfg.out / "dataset" / "manifest.json");
  VideoRecord v = load_video(manifest, manifest.test.front());
  InferResult res = multistage_infer({&pred, &refiner}, v.features);
  CHECK(res.labels.size() == v.t_len());
  CHECK(res.stage_probs.size() == 2);
}

TEST_CASE("repeat runs produce byte-identical reports") {
  TempDir dir;
  ExperimentConfig cfg = tiny_config(dir.path / "a");
  cfg.seeds = {4};
  run_experiment(cfg);
  ExperimentConfig again = tiny_config(dir.path / "b");
  again.seeds = {4};
  run_experiment(again);

  for (const char* f : {"seed_4/reports/predictor.json", "seed_4/reports/e2e.json",
                        "seed_4/reports/non_e2e.json", "seed_4/reports/comparison.json",
                        "summary.json", "dataset/manifest.json", "seed_4/predictor.msck",
                        "seed_4/refiner.msck", "seed_4/disturbed/samples.json"})
    CHECK(io::read_file(dir.path / "a" / f) == io::read_file(dir.path / "b" / f));
}

TEST_CASE("run_experiment validates its inputs") {
  ExperimentConfig cfg;
  cfg.generate = SynthConfig{};
  CHECK_THROWS_AS(run_experiment(cfg), Error);  // no out dir

  cfg.out = "/tmp/never_used";
  cfg.types.clear();
  CHECK_THROWS_AS(run_experiment(cfg), Error);

  cfg.types = {Provenance::Cv};
  cfg.generate.reset();
  CHECK_THROWS_AS(run_experiment(cfg), Error);  // no dataset source
}
