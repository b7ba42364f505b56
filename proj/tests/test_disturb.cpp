#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>

#include "core/disturb.hpp"
#include "core/error.hpp"
#include "core/serialize.hpp"
#include "helpers.hpp"

using namespace mstage;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("mstage_disturb_" + std::to_string(getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<std::string> make_ids(size_t n) {
  std::vector<std::string> ids;
  for (size_t i = 0; i < n; ++i) ids.push_back("video_" + std::to_string(i));
  return ids;
}

// Noiseless separable videos (features = one-hot of the label).
std::vector<VideoRecord> separable_videos(size_t n, size_t t_len, size_t classes, uint64_t seed) {
  RngStream rng(seed);
  std::vector<VideoRecord> out;
  for (size_t v = 0; v < n; ++v) {
    VideoRecord r;
    r.id = "video_" + std::to_string(v);
    r.labels.resize(t_len);
    r.features = Tensor::zeros({t_len, classes});
    int32_t phase = 0;
    for (size_t t = 0; t < t_len; ++t) {
      if (t > 0 && rng.bernoulli(0.1)) phase = static_cast<int32_t>(rng.below(classes));
      r.labels[t] = phase;
      r.features.at2(t, static_cast<size_t>(phase)) = 1.0;
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::multiset<size_t> fold_sizes(const FoldAssignment& fa) {
  std::multiset<size_t> sizes;
  for (const auto& m : fa.members) sizes.insert(m.size());
  return sizes;
}

PredictorNet tiny_trained_predictor(const std::vector<VideoRecord>& videos, size_t classes) {
  PredictorNet net(videos.front().features.dim(1), classes, 3, /*filters=*/8, /*blocks=*/2);
  TrainConfig cfg;
  cfg.epochs = 25;
  cfg.lr = 1e-2;
  cfg.seed = 4;
  train_predictor(net, videos, cfg);
  return net;
}

bool probs_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("partition_folds balances and covers") {
  auto ten = partition_folds(make_ids(10), 10, 1);
  std::multiset<size_t> ones;
  for (int i = 0; i < 10; ++i) ones.insert(1);
  CHECK(fold_sizes(ten) == ones);

  auto uneven = partition_folds(make_ids(27), 10, 2);
  std::multiset<size_t> expect;
  for (int i = 0; i < 7; ++i) expect.insert(3);
  for (int i = 0; i < 3; ++i) expect.insert(2);
  CHECK(fold_sizes(uneven) == expect);

  std::set<std::string> covered;
  for (const auto& [id, f] : uneven.fold) {
    CHECK(f < 10);
    covered.insert(id);
  }
  CHECK(covered.size() == 27);
  size_t member_total = 0;
  for (size_t f = 0; f < uneven.members.size(); ++f) {
    member_total += uneven.members[f].size();
    for (const auto& id : uneven.members[f]) CHECK(uneven.fold.at(id) == f);
  }
  CHECK(member_total == 27);
}

TEST_CASE("partition_folds is seeded and validates K") {
  auto ids = make_ids(12);
  auto a = partition_folds(ids, 5, 42);
  auto b = partition_folds(ids, 5, 42);
  CHECK(a.fold == b.fold);

  auto c = partition_folds(ids, 5, 43);
  CHECK(a.fold != c.fold);

  CHECK_THROWS_AS(partition_folds(ids, 1, 0), Error);
  try {
    partition_folds(ids, 13, 0);
    FAIL("K > N accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidArg);
    CHECK(std::string(e.what()).find("leave-one-out") != std::string::npos);
  }

  auto dup = make_ids(3);
  dup.push_back("video_0");
  CHECK_THROWS_AS(partition_folds(dup, 2, 0), Error);
}

TEST_CASE("gen_cross_validate emits one leakage-free sample per video") {
  auto videos = separable_videos(6, 30, 3, 9);
  CvOptions opt;
  opt.k = 3;
  opt.classes = 3;
  opt.filters = 8;
  opt.blocks = 2;
  opt.train.epochs = 5;
  opt.train.lr = 1e-2;
  opt.train.seed = 11;

  std::vector<CvFoldLog> log;
  auto samples = gen_cross_validate(videos, opt, &log);

  REQUIRE(samples.size() == videos.size());
  REQUIRE(log.size() == opt.k);

  std::map<size_t, const CvFoldLog*> by_fold;
  for (const auto& e : log) by_fold[e.fold] = &e;
  std::set<std::string> sample_ids;
  for (const auto& s : samples) {
    CHECK(s.provenance == Provenance::Cv);
    sample_ids.insert(s.id);
    const CvFoldLog& e = *by_fold.at(s.fold);
    // the model that produced this sample never trained on it
    CHECK(std::find(e.train_ids.begin(), e.train_ids.end(), s.id) == e.train_ids.end());
    CHECK(std::find(e.eval_ids.begin(), e.eval_ids.end(), s.id) != e.eval_ids.end());
    CHECK(e.train_ids.size() == videos.size() - e.eval_ids.size());
    // valid prob rows
    for (size_t t = 0; t < s.input.dim(0); ++t) {
      double sum = 0;
      for (size_t c = 0; c < s.input.dim(1); ++c) sum += s.input.at2(t, c);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
    CHECK(s.target.size() == s.input.dim(0));
  }
  CHECK(sample_ids.size() == videos.size());
}

TEST_CASE("gen_cross_validate supports leave-one-out and is deterministic") {
  auto videos = separable_videos(5, 25, 3, 13);
  CvOptions opt;
  opt.k = 5;
  opt.classes = 3;
  opt.filters = 8;
  opt.blocks = 2;
  opt.train.epochs = 3;
  opt.train.seed = 21;

  std::vector<CvFoldLog> log;
  auto a = gen_cross_validate(videos, opt, &log);
  CHECK(a.size() == 5);
  CHECK(log.size() == 5);
  for (const auto& e : log) {
    CHECK(e.train_ids.size() == 4);
    CHECK(e.eval_ids.size() == 1);
  }

  auto b = gen_cross_validate(videos, opt);
  REQUIRE(b.size() == a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(probs_equal(a[i].input, b[i].input));
  }
}

TEST_CASE("detect_hard_frames is quiet on separable data and flags boundaries on blended data") {
  auto clean = separable_videos(4, 60, 3, 31);
  auto masks = detect_hard_frames(clean, 3, 7);
  REQUIRE(masks.size() == clean.size());
  CHECK(mean_hard_fraction(masks) <= 0.01);

  // blended benchmark: hard frames should hug phase boundaries
  SynthConfig sc;
  sc.classes = 4;
  sc.feat_dim = 8;
  sc.train_videos = 6;
  sc.test_videos = 1;
  sc.dur_log_mean = 3.4;
  sc.dur_min = 15;
  sc.dur_max = 80;
  sc.noise_sd = 0.1;
  sc.ambig_window = 5;
  sc.p_amb = 1.0;
  sc.seed = 5;
  TempDir dir;
  auto manifest = generate_synthetic(sc, dir.path);
  auto videos = load_videos(manifest, manifest.train);

  auto blended = detect_hard_frames(videos, sc.classes, 7);
  size_t near = 0, total = 0;
  for (size_t v = 0; v < videos.size(); ++v) {
    std::vector<size_t> bounds;
    for (size_t t = 1; t < videos[v].labels.size(); ++t)
      if (videos[v].labels[t] != videos[v].labels[t - 1]) bounds.push_back(t);
    for (size_t t = 0; t < blended[v].hard.size(); ++t) {
      if (!blended[v].hard[t]) continue;
      ++total;
      for (size_t b : bounds) {
        size_t d = t < b ? b - t : t - b;
        if (d <= sc.ambig_window) {
          ++near;
          break;
        }
      }
    }
  }
  REQUIRE(total > 0);
  CHECK(static_cast<double>(near) / static_cast<double>(total) >= 0.8);

  // deterministic under seed
  auto again = detect_hard_frames(videos, sc.classes, 7);
  for (size_t v = 0; v < blended.size(); ++v) CHECK(blended[v].hard == again[v].hard);
}

TEST_CASE("detect_hard_frames rejects a single-phase split") {
  std::vector<VideoRecord> flat;
  VideoRecord r;
  r.id = "flat";
  r.features = Tensor::zeros({10, 3});
  r.labels.assign(10, 0);
  flat.push_back(std::move(r));
  try {
    detect_hard_frames(flat, 3, 0);
    FAIL("degenerate split accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }
}

TEST_CASE("gen_mask_hard_frame perturbs exactly the masked frames") {
  auto videos = separable_videos(4, 40, 3, 17);
  PredictorNet net = tiny_trained_predictor(videos, 3);

  // empty masks: samples equal the plain training-set predictions
  std::vector<HardFrameMask> empty;
  for (const auto& v : videos) empty.push_back({v.id, std::vector<uint8_t>(v.t_len(), 0)});
  auto plain = gen_mask_hard_frame(videos, net, empty);
  REQUIRE(plain.size() == videos.size());
  for (size_t i = 0; i < videos.size(); ++i) {
    CHECK(plain[i].provenance == Provenance::Mhf);
    CHECK(plain[i].mask_ratio == 0.0);
    CHECK(probs_equal(plain[i].input, net.forward(videos[i].features)));
  }

  // non-empty masks change at least one frame's prediction
  std::vector<HardFrameMask> some = empty;
  for (auto& m : some)
    for (size_t t = 5; t < m.hard.size(); t += 7) m.hard[t] = 1;
  auto disturbed = gen_mask_hard_frame(videos, net, some);
  for (size_t i = 0; i < videos.size(); ++i) {
    CHECK(disturbed[i].mask_ratio > 0.0);
    CHECK(!probs_equal(disturbed[i].input, plain[i].input));
    CHECK(disturbed[i].target == videos[i].labels);
  }

  // missing or mis-sized masks are rejected
  std::vector<HardFrameMask> missing(empty.begin(), empty.end() - 1);
  CHECK_THROWS_AS(gen_mask_hard_frame(videos, net, missing), Error);
  auto bad = empty;
  bad[0].hard.pop_back();
  CHECK_THROWS_AS(gen_mask_hard_frame(videos, net, bad), Error);
}

TEST_CASE("gen_random_mask matches its ratio and seed") {
  auto videos = separable_videos(3, 40, 3, 23);
  PredictorNet net = tiny_trained_predictor(videos, 3);

  auto zero = gen_random_mask(videos, net, 0.0, 1);
  for (size_t i = 0; i < videos.size(); ++i) {
    CHECK(zero[i].mask_ratio == 0.0);
    CHECK(probs_equal(zero[i].input, net.forward(videos[i].features)));
  }

  auto full = gen_random_mask(videos, net, 1.0, 1);
  for (size_t i = 0; i < videos.size(); ++i) {
    CHECK(full[i].mask_ratio == 1.0);
    Tensor blank = Tensor::zeros({videos[i].t_len(), videos[i].features.dim(1)});
    CHECK(probs_equal(full[i].input, net.forward(blank)));
  }

  auto a = gen_random_mask(videos, net, 0.5, 9);
  auto b = gen_random_mask(videos, net, 0.5, 9);
  auto c = gen_random_mask(videos, net, 0.5, 10);
  bool differs = false;
  for (size_t i = 0; i < videos.size(); ++i) {
    CHECK(a[i].mask_ratio == 0.5);  // 20 of 40 frames
    CHECK(a[i].provenance == Provenance::Rm);
    CHECK(probs_equal(a[i].input, b[i].input));
    if (!probs_equal(a[i].input, c[i].input)) differs = true;
  }
  CHECK(differs);

  CHECK_THROWS_AS(gen_random_mask(videos, net, -0.1, 0), Error);
  CHECK_THROWS_AS(gen_random_mask(videos, net, 1.1, 0), Error);
}

TEST_CASE("combining generators concatenates sample lists") {
  auto videos = separable_videos(3, 20, 3, 29);
  PredictorNet net = tiny_trained_predictor(videos, 3);
  auto masks = detect_hard_frames(videos, 3, 1);
  auto mhf = gen_mask_hard_frame(videos, net, masks);
  auto rm = gen_random_mask(videos, net, mean_hard_fraction(masks), 2);

  std::vector<DisturbedSample> both = mhf;
  both.insert(both.end(), rm.begin(), rm.end());
  CHECK(both.size() == 2 * videos.size());

  auto refine = to_refine_samples(both);
  REQUIRE(refine.size() == both.size());
  CHECK(refine.front().id == "mhf:video_0");
  CHECK(refine.back().id == "rm:video_2");
}

TEST_CASE("samples round-trip through the on-disk index") {
  TempDir dir;
  auto videos = separable_videos(3, 24, 3, 37);
  PredictorNet net = tiny_trained_predictor(videos, 3);
  auto masks = detect_hard_frames(videos, 3, 1);

  CvOptions opt;
  opt.k = 3;
  opt.classes = 3;
  opt.filters = 8;
  opt.blocks = 2;
  opt.train.epochs = 2;
  opt.train.seed = 31;
  auto all = gen_cross_validate(videos, opt);
  auto mhf = gen_mask_hard_frame(videos, net, masks);
  all.insert(all.end(), mhf.begin(), mhf.end());
  auto rm = gen_random_mask(videos, net, 0.25, 3);
  all.insert(all.end(), rm.begin(), rm.end());

  fs::path out = dir.path / "samples";
  write_samples(out, all, 3);
  auto loaded = read_samples(out);
  REQUIRE(loaded.size() == all.size());
  for (size_t i = 0; i < all.size(); ++i) {
    CHECK(loaded[i].id == all[i].id);
    CHECK(loaded[i].provenance == all[i].provenance);
    CHECK(loaded[i].fold == all[i].fold);
    CHECK(loaded[i].mask_ratio == all[i].mask_ratio);
    CHECK(loaded[i].target == all[i].target);
    REQUIRE(loaded[i].input.same_shape(all[i].input));
    for (size_t j = 0; j < all[i].input.size(); ++j)
      CHECK(loaded[i].input[j] == doctest::Approx(all[i].input[j]).epsilon(1e-6));
  }

  // writing what was read reproduces the artifact byte for byte
  fs::path out2 = dir.path / "samples2";
  write_samples(out2, loaded, 3);
  CHECK(io::read_file(out / "samples.json") == io::read_file(out2 / "samples.json"));
  for (const auto& entry : fs::directory_iterator(out))
    CHECK(io::read_file(entry.path()) ==
          io::read_file(out2 / entry.path().filename()));
}

TEST_CASE("sample reading rejects broken artifacts") {
  TempDir dir;
  auto videos = separable_videos(2, 16, 3, 41);
  PredictorNet net = tiny_trained_predictor(videos, 3);
  auto rm = gen_random_mask(videos, net, 0.5, 5);
  fs::path out = dir.path / "samples";
  write_samples(out, rm, 3);

  SUBCASE("corrupt index json") {
    io::atomic_write(out / "samples.json", "{not json");
    try {
      read_samples(out);
      FAIL("parse error missed");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Dependency);
    }
  }
  SUBCASE("missing prob file") {
    fs::remove(out / "rm_video_0.mspp");
    CHECK_THROWS_AS(read_samples(out), Error);
  }
  SUBCASE("unknown provenance") {
    auto text = io::read_file(out / "samples.json");
    auto pos = text.find("\"rm\"");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 4, "\"xx\"");
    io::atomic_write(out / "samples.json", text);
    try {
      read_samples(out);
      FAIL("bad provenance missed");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Dependency);
      CHECK(std::string(e.what()).find("xx") != std::string::npos);
    }
  }
  SUBCASE("duplicate sample names rejected on write") {
    auto dup = rm;
    dup.push_back(rm[0]);
    CHECK_THROWS_AS(write_samples(dir.path / "dup", dup, 3), Error);
  }
}
