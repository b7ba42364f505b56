#include "core/dataset.hpp"

#include <json.hpp>

#include <cmath>
#include <sstream>

#include "core/rng.hpp"
#include "core/serialize.hpp"

namespace mstage {

using nlohmann::json;

namespace {

constexpr uint32_t kManifestVersion = 1;
constexpr uint64_t kProtoSalt = 1;
constexpr uint64_t kTrainSalt = 0x100000000ULL;
constexpr uint64_t kTestSalt = 0x200000000ULL;

void check_config(const SynthConfig& c) {
  if (c.classes < 2) fail(ErrorKind::Config, "synthetic benchmark needs at least 2 classes");
  if (c.classes > c.feat_dim) {
    std::ostringstream os;
    os << "cannot build " << c.classes << " near-orthogonal prototypes in " << c.feat_dim
       << " dimensions: raise D to at least " << c.classes;
    fail(ErrorKind::Config, os.str());
  }
  if (c.train_videos == 0 || c.test_videos == 0)
    fail(ErrorKind::Config, "train and test video counts must be positive");
  if (c.dur_min == 0 || c.dur_min > c.dur_max)
    fail(ErrorKind::Config, "phase duration bounds must satisfy 0 < min <= max");
  if (c.p_skip < 0 || c.p_skip >= 1 || c.p_amb < 0 || c.p_amb > 1)
    fail(ErrorKind::Config, "probabilities must lie in [0,1] (p_skip < 1)");
  if (c.blend_lo < 0 || c.blend_hi > 1 || c.blend_lo > c.blend_hi)
    fail(ErrorKind::Config, "blend range must satisfy 0 <= lo <= hi <= 1");
  if (c.noise_sd < 0) fail(ErrorKind::Config, "noise sd must be non-negative");
}

std::vector<std::vector<double>> make_prototypes(const SynthConfig& c, RngStream& rng) {
  std::vector<std::vector<double>> protos;
  while (protos.size() < c.classes) {
    std::vector<double> v(c.feat_dim);
    for (auto& x : v) x = rng.normal();
    for (const auto& u : protos) {
      double dot = 0;
      for (size_t i = 0; i < v.size(); ++i) dot += v[i] * u[i];
      for (size_t i = 0; i < v.size(); ++i) v[i] -= dot * u[i];
    }
    double norm = 0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;  // re-draw a degenerate direction
    for (auto& x : v) x /= norm;
    protos.push_back(std::move(v));
  }
  return protos;
}

struct GeneratedVideo {
  PhaseLabels labels;
  Tensor features;
  std::vector<uint8_t> hard;
};

GeneratedVideo make_video(const SynthConfig& c, const std::vector<std::vector<double>>& protos,
                          RngStream& rng) {
  // phases in increasing order, each present unless skipped; re-draw if all skipped
  std::vector<int32_t> phases;
  do {
    phases.clear();
    for (size_t p = 0; p < c.classes; ++p)
      if (!(rng.uniform() < c.p_skip)) phases.push_back(static_cast<int32_t>(p));
  } while (phases.empty());

  GeneratedVideo v;
  std::vector<size_t> starts;  // segment start frames
  for (int32_t p : phases) {
    double draw = std::exp(c.dur_log_mean + c.dur_log_sd * rng.normal());
    size_t dur = static_cast<size_t>(std::llround(draw));
    dur = std::min(std::max(dur, c.dur_min), c.dur_max);
    starts.push_back(v.labels.size());
    v.labels.insert(v.labels.end(), dur, p);
  }
  size_t t_len = v.labels.size();

  // boundary b sits between frames b-1 and b
  std::vector<size_t> boundaries(starts.begin() + 1, starts.end());

  v.features = Tensor({t_len, c.feat_dim});
  v.hard.assign(t_len, 0);
  long w = static_cast<long>(c.ambig_window);
  for (size_t t = 0; t < t_len; ++t) {
    // nearest boundary covering t, if any (boundary b covers frames [b-w, b+w-1])
    long best_b = -1;
    long best_d = 0;
    for (size_t b : boundaries) {
      long lb = static_cast<long>(b), lt = static_cast<long>(t);
      if (lt < lb - w || lt > lb + w - 1) continue;
      long d = std::labs(2 * lt - 2 * lb + 1);  // distance to the b-0.5 midpoint, doubled
      if (best_b < 0 || d < best_d) {
        best_b = lb;
        best_d = d;
      }
    }

    double* row = v.features.row(t);
    const std::vector<double>& cur = protos[static_cast<size_t>(v.labels[t])];
    bool blended = false;
    if (best_b >= 0 && rng.uniform() < c.p_amb) {
      size_t adj_frame = static_cast<long>(t) < best_b ? static_cast<size_t>(best_b)
                                                       : static_cast<size_t>(best_b - 1);
      const std::vector<double>& adj = protos[static_cast<size_t>(v.labels[adj_frame])];
      double alpha = rng.uniform(c.blend_lo, c.blend_hi);
      for (size_t i = 0; i < c.feat_dim; ++i) row[i] = alpha * cur[i] + (1 - alpha) * adj[i];
      v.hard[t] = 1;
      blended = true;
    }
    if (!blended)
      for (size_t i = 0; i < c.feat_dim; ++i) row[i] = cur[i];
    for (size_t i = 0; i < c.feat_dim; ++i) row[i] += c.noise_sd * rng.normal();
  }
  return v;
}

std::string video_id(const char* split, size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%03zu", split, i);
  return buf;
}

void write_mask_text(const std::filesystem::path& path, const std::vector<uint8_t>& mask) {
  std::string out;
  out.reserve(mask.size() * 2);
  for (uint8_t m : mask) {
    out.push_back(m ? '1' : '0');
    out.push_back('\n');
  }
  io::atomic_write(path, out);
}

json synth_to_json(const SynthConfig& c) {
  return json{{"classes", c.classes},
              {"feat_dim", c.feat_dim},
              {"train_videos", c.train_videos},
              {"test_videos", c.test_videos},
              {"dur_log_mean", c.dur_log_mean},
              {"dur_log_sd", c.dur_log_sd},
              {"dur_min", c.dur_min},
              {"dur_max", c.dur_max},
              {"p_skip", c.p_skip},
              {"noise_sd", c.noise_sd},
              {"ambig_window", c.ambig_window},
              {"p_amb", c.p_amb},
              {"blend_lo", c.blend_lo},
              {"blend_hi", c.blend_hi},
              {"seed", c.seed}};
}

SynthConfig synth_from_json(const json& j) {
  SynthConfig c;
  c.classes = j.at("classes").get<size_t>();
  c.feat_dim = j.at("feat_dim").get<size_t>();
  c.train_videos = j.at("train_videos").get<size_t>();
  c.test_videos = j.at("test_videos").get<size_t>();
  c.dur_log_mean = j.at("dur_log_mean").get<double>();
  c.dur_log_sd = j.at("dur_log_sd").get<double>();
  c.dur_min = j.at("dur_min").get<size_t>();
  c.dur_max = j.at("dur_max").get<size_t>();
  c.p_skip = j.at("p_skip").get<double>();
  c.noise_sd = j.at("noise_sd").get<double>();
  c.ambig_window = j.at("ambig_window").get<size_t>();
  c.p_amb = j.at("p_amb").get<double>();
  c.blend_lo = j.at("blend_lo").get<double>();
  c.blend_hi = j.at("blend_hi").get<double>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  json videos = json::object();
  for (const auto& [id, e] : m.videos)
    videos[id] = json{{"features", e.features}, {"labels", e.labels}, {"T", e.t_len}};
  json j{{"version", kManifestVersion}, {"C", m.classes},   {"D", m.feat_dim},
         {"train", m.train},            {"test", m.test},   {"videos", videos}};
  if (m.generator) j["generator"] = synth_to_json(*m.generator);
  io::atomic_write(path, j.dump(2) + "\n");
}

const json& require_key(const json& j, const char* key, const std::filesystem::path& path) {
  if (!j.contains(key))
    fail(ErrorKind::Dependency, "manifest " + path.string() + " is missing key \"" + key + "\"");
  return j.at(key);
}

}  // namespace

const std::vector<std::string>& DatasetManifest::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "test") return test;
  fail(ErrorKind::InvalidArg, "unknown split \"" + name + "\" (use train or test)");
}

DatasetManifest generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& dir) {
  check_config(cfg);
  std::filesystem::create_directories(dir);

  RngStream root(cfg.seed);
  RngStream proto_rng = root.split(kProtoSalt);
  auto protos = make_prototypes(cfg, proto_rng);

  DatasetManifest m;
  m.classes = cfg.classes;
  m.feat_dim = cfg.feat_dim;
  m.generator = cfg;
  m.root = dir;

  auto emit = [&](const char* split, size_t count, uint64_t salt,
                  std::vector<std::string>& ids) {
    for (size_t i = 0; i < count; ++i) {
      std::string id = video_id(split, i);
      RngStream rng = root.split(salt + i);
      GeneratedVideo v = make_video(cfg, protos, rng);
      io::write_feature_seq(dir / (id + ".mspf"), v.features);
      write_labels_text(dir / (id + ".labels.txt"), v.labels);
      write_mask_text(dir / (id + ".hard.txt"), v.hard);
      m.videos[id] = ManifestEntry{id + ".mspf", id + ".labels.txt", v.labels.size()};
      ids.push_back(id);
    }
  };
  emit("train", cfg.train_videos, kTrainSalt, m.train);
  emit("test", cfg.test_videos, kTestSalt, m.test);

  write_manifest(m, dir / "manifest.json");
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path& manifest_path) {
  std::string text = io::read_file(manifest_path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Dependency,
         "manifest parse error in " + manifest_path.string() + ": " + e.what());
  }

  if (require_key(j, "version", manifest_path).get<uint32_t>() != kManifestVersion)
    fail(ErrorKind::Dependency, "unsupported manifest version in " + manifest_path.string());

  DatasetManifest m;
  m.root = manifest_path.parent_path();
  try {
    m.classes = require_key(j, "C", manifest_path).get<size_t>();
    m.feat_dim = require_key(j, "D", manifest_path).get<size_t>();
    m.train = require_key(j, "train", manifest_path).get<std::vector<std::string>>();
    m.test = require_key(j, "test", manifest_path).get<std::vector<std::string>>();
    const json& videos = require_key(j, "videos", manifest_path);
    for (auto it = videos.begin(); it != videos.end(); ++it) {
      ManifestEntry e;
      e.features = it.value().at("features").get<std::string>();
      e.labels = it.value().at("labels").get<std::string>();
      e.t_len = it.value().at("T").get<size_t>();
      m.videos[it.key()] = e;
    }
    if (j.contains("generator")) m.generator = synth_from_json(j.at("generator"));
  } catch (const json::exception& e) {
    fail(ErrorKind::Dependency,
         "malformed manifest " + manifest_path.string() + ": " + e.what());
  }

  if (m.classes < 1 || m.feat_dim < 1)
    fail(ErrorKind::Dependency, "manifest " + manifest_path.string() + " has zero C or D");

  std::map<std::string, int> seen;
  for (const auto& id : m.train) seen[id] |= 1;
  for (const auto& id : m.test) {
    seen[id] |= 2;
    if (seen[id] == 3)
      fail(ErrorKind::Dependency,
           "train and test splits overlap in " + manifest_path.string() + " (video " + id + ")");
  }
  if (seen.size() != m.train.size() + m.test.size())
    fail(ErrorKind::Dependency, "duplicate video id in a split of " + manifest_path.string());

  for (const auto& [id, flag] : seen) {
    (void)flag;
    auto it = m.videos.find(id);
    if (it == m.videos.end())
      fail(ErrorKind::Dependency,
           "split references unknown video \"" + id + "\" in " + manifest_path.string());
    for (const std::string& rel : {it->second.features, it->second.labels}) {
      std::filesystem::path p = m.root / rel;
      if (!std::filesystem::exists(p))
        fail(ErrorKind::Dependency, "manifest references missing file " + p.string());
    }
  }
  return m;
}

void write_labels_text(const std::filesystem::path& path, const PhaseLabels& labels) {
  std::string out;
  out.reserve(labels.size() * 3);
  for (int32_t l : labels) {
    out += std::to_string(l);
    out.push_back('\n');
  }
  io::atomic_write(path, out);
}

PhaseLabels read_labels_text(const std::filesystem::path& path, size_t classes) {
  std::istringstream in(io::read_file(path));
  PhaseLabels labels;
  std::string tok;
  size_t line = 0;
  while (in >> tok) {
    ++line;
    size_t pos = 0;
    long v = 0;
    try {
      v = std::stol(tok, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != tok.size())
      fail(ErrorKind::Dependency,
           "bad label \"" + tok + "\" at line " + std::to_string(line) + " of " + path.string());
    if (v < 0 || static_cast<size_t>(v) >= classes) {
      std::ostringstream os;
      os << "label " << v << " out of range [0," << classes << ") at line " << line << " of "
         << path.string();
      fail(ErrorKind::Dependency, os.str());
    }
    labels.push_back(static_cast<int32_t>(v));
  }
  if (labels.empty()) fail(ErrorKind::Dependency, "empty labels file " + path.string());
  return labels;
}

VideoRecord load_video(const DatasetManifest& m, const std::string& id) {
  auto it = m.videos.find(id);
  if (it == m.videos.end())
    fail(ErrorKind::Dependency, "video \"" + id + "\" is not in the manifest");
  const ManifestEntry& e = it->second;

  VideoRecord v;
  v.id = id;
  v.features = io::read_feature_seq(m.root / e.features);
  v.labels = read_labels_text(m.root / e.labels, m.classes);
  if (v.features.dim(0) != v.labels.size()) {
    std::ostringstream os;
    os << "length mismatch for video " << id << ": " << v.labels.size() << " labels vs "
       << v.features.dim(0) << " feature frames";
    fail(ErrorKind::Dependency, os.str());
  }
  if (v.features.dim(1) != m.feat_dim)
    fail(ErrorKind::Dependency, "video " + id + " feature dim disagrees with manifest D");
  if (e.t_len != v.labels.size())
    fail(ErrorKind::Dependency, "manifest T disagrees with files for video " + id);

  std::filesystem::path mask = m.root / (id + ".hard.txt");
  if (std::filesystem::exists(mask)) {
    std::istringstream in(io::read_file(mask));
    std::string tok;
    while (in >> tok) {
      if (tok != "0" && tok != "1")
        fail(ErrorKind::Dependency, "bad hard-frame flag in " + mask.string());
      v.hard_mask.push_back(tok == "1" ? 1 : 0);
    }
    if (v.hard_mask.size() != v.labels.size())
      fail(ErrorKind::Dependency, "hard-frame mask length mismatch for video " + id);
  }
  return v;
}

std::vector<VideoRecord> load_videos(const DatasetManifest& m,
                                     const std::vector<std::string>& ids) {
  std::vector<VideoRecord> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(load_video(m, id));
  return out;
}

}  // namespace mstage
