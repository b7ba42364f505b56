#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "core/serialize.hpp"
#include "helpers.hpp"

using namespace mstage;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("mstage-fmt-" + std::to_string(::getpid()) + "-" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  static int& counter() {
    static int n = 0;
    return n;
  }
};

std::string slurp(const fs::path& p) { return io::read_file(p); }

void corrupt_byte(const fs::path& p, size_t offset, char value) {
  std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(static_cast<std::streamoff>(offset));
  f.put(value);
}

void truncate_to(const fs::path& p, size_t bytes) {
  std::string data = slurp(p);
  data.resize(bytes);
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

Tensor round_probs(size_t t_len, size_t classes, uint64_t seed) {
  // build rows that survive the f32 round trip with exact row sums
  RngStream rng(seed);
  Tensor p({t_len, classes});
  for (size_t t = 0; t < t_len; ++t) {
    float sum = 0.0f;
    std::vector<float> row(classes);
    for (size_t c = 0; c + 1 < classes; ++c) {
      row[c] = static_cast<float>(rng.uniform(0.0, 1.0 - sum));
      row[c] = std::floor(row[c] * 1024.0f) / 1024.0f;
      sum += row[c];
    }
    row[classes - 1] = 1.0f - sum;
    for (size_t c = 0; c < classes; ++c) p.at2(t, c) = row[c];
  }
  return p;
}

}  // namespace

TEST_CASE("feature files: write, read, rewrite is byte-identical") {
  TempDir dir;
  RngStream rng(41);
  Tensor feats = test::random_tensor({37, 16}, rng, 2.0);
  // store f32-representable values so the first write is already exact
  for (size_t i = 0; i < feats.size(); ++i) feats[i] = static_cast<float>(feats[i]);

  fs::path a = dir.path / "a.mspf";
  fs::path b = dir.path / "b.mspf";
  io::write_feature_seq(a, feats);
  Tensor back = io::read_feature_seq(a);
  REQUIRE(back.shape() == feats.shape());
  for (size_t i = 0; i < feats.size(); ++i) CHECK(back[i] == feats[i]);
  io::write_feature_seq(b, back);
  CHECK(slurp(a) == slurp(b));
}

TEST_CASE("prob files: write, read, rewrite is byte-identical") {
  TempDir dir;
  Tensor probs = round_probs(23, 7, 43);
  fs::path a = dir.path / "a.mspp";
  fs::path b = dir.path / "b.mspp";
  io::write_prob_seq(a, probs);
  Tensor back = io::read_prob_seq(a);
  REQUIRE(back.shape() == probs.shape());
  io::write_prob_seq(b, back);
  CHECK(slurp(a) == slurp(b));
}

TEST_CASE("prob files: rows that do not sum to one are rejected on read") {
  TempDir dir;
  Tensor probs = round_probs(4, 3, 47);
  fs::path p = dir.path / "bad.mspp";
  io::write_prob_seq(p, probs);
  // payload starts after magic(4) + version(4) + T(4) + C(4)
  corrupt_byte(p, 16 + 3, 0x7f);
  CHECK_THROWS_AS(io::read_prob_seq(p), Error);
}

TEST_CASE("prob files: writer refuses malformed rows") {
  TempDir dir;
  Tensor bad = Tensor::from({1, 2}, {0.9, 0.3});
  CHECK_THROWS_AS(io::write_prob_seq(dir.path / "x.mspp", bad), Error);
  Tensor neg = Tensor::from({1, 2}, {-0.1, 1.1});
  CHECK_THROWS_AS(io::write_prob_seq(dir.path / "y.mspp", neg), Error);
}

TEST_CASE("checkpoints: write, read, rewrite is byte-identical and order-preserving") {
  TempDir dir;
  RngStream rng(53);
  ParamSet ps;
  ps.add("conv.w", test::random_tensor({4, 3, 2}, rng));
  ps.add("conv.b", test::random_tensor({4}, rng));
  ps.add("head.w", test::random_tensor({4, 7}, rng));
  for (auto& prm : ps.params())
    for (size_t i = 0; i < prm.value.size(); ++i)
      prm.value[i] = static_cast<float>(prm.value[i]);

  fs::path a = dir.path / "a.msck";
  fs::path b = dir.path / "b.msck";
  io::write_checkpoint(a, ps);
  ParamSet back = io::read_checkpoint(a);
  REQUIRE(back.params().size() == 3);
  CHECK(back.params()[0].name == "conv.w");
  CHECK(back.params()[1].name == "conv.b");
  CHECK(back.params()[2].name == "head.w");
  CHECK(back.at("head.w").value.shape() == ps.at("head.w").value.shape());
  for (size_t i = 0; i < ps.at("conv.w").value.size(); ++i)
    CHECK(back.at("conv.w").value[i] == ps.at("conv.w").value[i]);
  io::write_checkpoint(b, back);
  CHECK(slurp(a) == slurp(b));
}

TEST_CASE("corrupted magic is rejected with a message naming the file") {
  TempDir dir;
  RngStream rng(59);
  Tensor feats = test::random_tensor({5, 3}, rng);
  fs::path p = dir.path / "zapped.mspf";
  io::write_feature_seq(p, feats);
  corrupt_byte(p, 0, 'X');
  try {
    io::read_feature_seq(p);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Dependency);
    CHECK(std::string(e.what()).find("zapped.mspf") != std::string::npos);
    CHECK(std::string(e.what()).find("magic") != std::string::npos);
  }
}

TEST_CASE("wrong format version is rejected") {
  TempDir dir;
  RngStream rng(61);
  Tensor feats = test::random_tensor({5, 3}, rng);
  fs::path p = dir.path / "v9.mspf";
  io::write_feature_seq(p, feats);
  corrupt_byte(p, 4, 9);
  try {
    io::read_feature_seq(p);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Dependency);
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
}

TEST_CASE("truncated payload is rejected") {
  TempDir dir;
  RngStream rng(67);
  Tensor feats = test::random_tensor({8, 4}, rng);
  fs::path p = dir.path / "cut.mspf";
  io::write_feature_seq(p, feats);
  truncate_to(p, 16 + 5 * 4);
  try {
    io::read_feature_seq(p);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Dependency);
    CHECK(std::string(e.what()).find("truncated") != std::string::npos);
  }
}

TEST_CASE("trailing bytes are rejected") {
  TempDir dir;
  RngStream rng(71);
  Tensor feats = test::random_tensor({3, 2}, rng);
  fs::path p = dir.path / "tail.mspf";
  io::write_feature_seq(p, feats);
  std::ofstream app(p, std::ios::binary | std::ios::app);
  app.put('\0');
  app.close();
  try {
    io::read_feature_seq(p);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("trailing") != std::string::npos);
  }
}

TEST_CASE("missing file is a dependency error naming the path") {
  try {
    io::read_feature_seq("/nonexistent/nowhere.mspf");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Dependency);
    CHECK(std::string(e.what()).find("nowhere.mspf") != std::string::npos);
  }
}

TEST_CASE("wrong container magic for the reader in use is rejected") {
  TempDir dir;
  Tensor probs = round_probs(3, 2, 73);
  fs::path p = dir.path / "probs.mspp";
  io::write_prob_seq(p, probs);
  CHECK_THROWS_AS(io::read_feature_seq(p), Error);
}

TEST_CASE("atomic write leaves no temp file and replaces content") {
  TempDir dir;
  fs::path p = dir.path / "note.json";
  io::atomic_write(p, "first");
  io::atomic_write(p, "second");
  CHECK(slurp(p) == "second");
  size_t entries = 0;
  for (auto& entry : fs::directory_iterator(dir.path)) {
    (void)entry;
    ++entries;
  }
  CHECK(entries == 1);
}
