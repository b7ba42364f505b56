#include "core/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "core/serialize.hpp"

namespace mstage {

using nlohmann::json;

namespace {

void check_pair(const PhaseLabels& pred, const PhaseLabels& gt) {
  if (gt.empty()) fail(ErrorKind::InvalidArg, "metrics need at least one frame");
  if (pred.size() != gt.size()) {
    std::ostringstream os;
    os << "metrics length mismatch: " << pred.size() << " predictions vs " << gt.size()
       << " ground-truth frames";
    fail(ErrorKind::InvalidArg, os.str());
  }
}

AggregateStat stat_of(const std::vector<double>& xs) {
  AggregateStat s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(xs.size()));
  return s;
}

json stat_json(const AggregateStat& s) { return json{{"mean", s.mean}, {"std", s.stddev}}; }

AggregateStat stat_from_json(const json& j) {
  AggregateStat s;
  s.mean = j.at("mean").get<double>();
  s.stddev = j.at("std").get<double>();
  return s;
}

}  // namespace

double accuracy(const PhaseLabels& pred, const PhaseLabels& gt) {
  check_pair(pred, gt);
  size_t hits = 0;
  for (size_t t = 0; t < gt.size(); ++t)
    if (pred[t] == gt[t]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(gt.size());
}

PhaseMetric phase_jaccard(const PhaseLabels& pred, const PhaseLabels& gt) {
  check_pair(pred, gt);
  std::set<int32_t> phases(gt.begin(), gt.end());
  PhaseMetric m;
  for (int32_t p : phases) {
    size_t inter = 0, uni = 0;
    for (size_t t = 0; t < gt.size(); ++t) {
      bool in_pred = pred[t] == p, in_gt = gt[t] == p;
      if (in_pred && in_gt) ++inter;
      if (in_pred || in_gt) ++uni;
    }
    m.per_phase[p] = static_cast<double>(inter) / static_cast<double>(uni);
    m.mean += m.per_phase[p];
  }
  m.mean /= static_cast<double>(phases.size());
  return m;
}

PhaseMetric phase_recall(const PhaseLabels& pred, const PhaseLabels& gt) {
  check_pair(pred, gt);
  std::set<int32_t> phases(gt.begin(), gt.end());
  PhaseMetric m;
  for (int32_t p : phases) {
    size_t inter = 0, total = 0;
    for (size_t t = 0; t < gt.size(); ++t) {
      if (gt[t] != p) continue;
      ++total;
      if (pred[t] == p) ++inter;
    }
    m.per_phase[p] = static_cast<double>(inter) / static_cast<double>(total);
    m.mean += m.per_phase[p];
  }
  m.mean /= static_cast<double>(phases.size());
  return m;
}

VideoMetrics video_metrics(const std::string& id, const PhaseLabels& pred,
                           const PhaseLabels& gt) {
  VideoMetrics v;
  v.id = id;
  v.acc = accuracy(pred, gt);
  PhaseMetric j = phase_jaccard(pred, gt);
  PhaseMetric r = phase_recall(pred, gt);
  v.jacc = j.mean;
  v.rec = r.mean;
  v.phase_jacc = std::move(j.per_phase);
  v.phase_rec = std::move(r.per_phase);
  return v;
}

MetricsReport aggregate(std::vector<VideoMetrics> videos) {
  if (videos.empty()) fail(ErrorKind::InvalidArg, "cannot aggregate an empty metrics list");
  std::sort(videos.begin(), videos.end(),
            [](const VideoMetrics& a, const VideoMetrics& b) { return a.id < b.id; });
  MetricsReport r;
  std::vector<double> accs, jaccs, recs;
  for (const auto& v : videos) {
    accs.push_back(v.acc);
    jaccs.push_back(v.jacc);
    recs.push_back(v.rec);
  }
  r.videos = std::move(videos);
  r.acc = stat_of(accs);
  r.jacc = stat_of(jaccs);
  r.rec = stat_of(recs);
  return r;
}

ReportComparison compare_reports(const MetricsReport& a, const MetricsReport& b) {
  std::map<std::string, const VideoMetrics*> bm;
  for (const auto& v : b.videos) bm[v.id] = &v;
  if (a.videos.size() != b.videos.size())
    fail(ErrorKind::InvalidArg, "reports cover different video sets");

  ReportComparison cmp;
  cmp.d_acc_mean = b.acc.mean - a.acc.mean;
  cmp.d_jacc_mean = b.jacc.mean - a.jacc.mean;
  cmp.d_rec_mean = b.rec.mean - a.rec.mean;
  for (const auto& va : a.videos) {
    auto it = bm.find(va.id);
    if (it == bm.end())
      fail(ErrorKind::InvalidArg, "reports cover different video sets (missing " + va.id + ")");
    const VideoMetrics& vb = *it->second;
    CompareRow row;
    row.id = va.id;
    row.d_acc = vb.acc - va.acc;
    row.d_jacc = vb.jacc - va.jacc;
    row.d_rec = vb.rec - va.rec;
    auto tally = [](WinLoss& wl, double d) {
      if (d > 0)
        ++wl.wins;
      else if (d < 0)
        ++wl.losses;
      else
        ++wl.ties;
    };
    tally(cmp.acc_wl, row.d_acc);
    tally(cmp.jacc_wl, row.d_jacc);
    tally(cmp.rec_wl, row.d_rec);
    cmp.videos.push_back(std::move(row));
  }
  return cmp;
}

void write_report(const std::filesystem::path& path, const MetricsReport& report) {
  json videos = json::array();
  for (const auto& v : report.videos) {
    json per_phase = json::object();
    for (const auto& [p, x] : v.phase_jacc)
      per_phase[std::to_string(p)] = json{{"jacc", x}, {"rec", v.phase_rec.at(p)}};
    videos.push_back(json{{"id", v.id},
                          {"acc", v.acc},
                          {"jacc", v.jacc},
                          {"rec", v.rec},
                          {"per_phase", per_phase}});
  }
  json j{{"videos", videos},
         {"aggregate", json{{"acc", stat_json(report.acc)},
                            {"jacc", stat_json(report.jacc)},
                            {"rec", stat_json(report.rec)}}}};
  io::atomic_write(path, j.dump(2) + "\n");
}

MetricsReport read_report(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorKind::Dependency, "report parse error in " + path.string() + ": " + e.what());
  }
  MetricsReport r;
  try {
    for (const auto& jv : j.at("videos")) {
      VideoMetrics v;
      v.id = jv.at("id").get<std::string>();
      v.acc = jv.at("acc").get<double>();
      v.jacc = jv.at("jacc").get<double>();
      v.rec = jv.at("rec").get<double>();
      for (auto it = jv.at("per_phase").begin(); it != jv.at("per_phase").end(); ++it) {
        int32_t p = static_cast<int32_t>(std::stol(it.key()));
        v.phase_jacc[p] = it.value().at("jacc").get<double>();
        v.phase_rec[p] = it.value().at("rec").get<double>();
      }
      r.videos.push_back(std::move(v));
    }
    r.acc = stat_from_json(j.at("aggregate").at("acc"));
    r.jacc = stat_from_json(j.at("aggregate").at("jacc"));
    r.rec = stat_from_json(j.at("aggregate").at("rec"));
  } catch (const json::exception& e) {
    fail(ErrorKind::Dependency, "malformed report " + path.string() + ": " + e.what());
  }
  return r;
}

void write_report_csv(const std::filesystem::path& path, const MetricsReport& report) {
  std::ostringstream os;
  os << "id,acc,jacc,rec\n";
  os.precision(17);
  for (const auto& v : report.videos)
    os << v.id << "," << v.acc << "," << v.jacc << "," << v.rec << "\n";
  io::atomic_write(path, os.str());
}

std::string comparison_to_json_text(const ReportComparison& cmp) {
  json videos = json::array();
  for (const auto& row : cmp.videos)
    videos.push_back(json{
        {"id", row.id}, {"d_acc", row.d_acc}, {"d_jacc", row.d_jacc}, {"d_rec", row.d_rec}});
  auto wl = [](const WinLoss& w) {
    return json{{"wins", w.wins}, {"losses", w.losses}, {"ties", w.ties}};
  };
  json j{{"delta_mean",
          json{{"acc", cmp.d_acc_mean}, {"jacc", cmp.d_jacc_mean}, {"rec", cmp.d_rec_mean}}},
         {"win_loss", json{{"acc", wl(cmp.acc_wl)}, {"jacc", wl(cmp.jacc_wl)},
                           {"rec", wl(cmp.rec_wl)}}},
         {"videos", videos}};
  return j.dump(2) + "\n";
}

}  // namespace mstage
