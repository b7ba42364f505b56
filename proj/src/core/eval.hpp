#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "core/losses.hpp"

namespace mstage {

struct PhaseMetric {
  std::map<int32_t, double> per_phase;  // phases present in ground truth
  double mean = 0.0;
};

struct VideoMetrics {
  std::string id;
  double acc = 0.0, jacc = 0.0, rec = 0.0;
  std::map<int32_t, double> phase_jacc, phase_rec;
};

struct AggregateStat {
  double mean = 0.0, stddev = 0.0;  // population std
};

struct MetricsReport {
  std::vector<VideoMetrics> videos;  // sorted by id
  AggregateStat acc, jacc, rec;
};

double accuracy(const PhaseLabels& pred, const PhaseLabels& gt);
PhaseMetric phase_jaccard(const PhaseLabels& pred, const PhaseLabels& gt);
PhaseMetric phase_recall(const PhaseLabels& pred, const PhaseLabels& gt);

VideoMetrics video_metrics(const std::string& id, const PhaseLabels& pred,
                           const PhaseLabels& gt);

MetricsReport aggregate(std::vector<VideoMetrics> videos);

struct CompareRow {
  std::string id;
  double d_acc = 0.0, d_jacc = 0.0, d_rec = 0.0;  // b - a
};

struct WinLoss {
  size_t wins = 0, losses = 0, ties = 0;  // from b's perspective
};

struct ReportComparison {
  double d_acc_mean = 0.0, d_jacc_mean = 0.0, d_rec_mean = 0.0;
  std::vector<CompareRow> videos;
  WinLoss acc_wl, jacc_wl, rec_wl;
};

ReportComparison compare_reports(const MetricsReport& a, const MetricsReport& b);

// Report JSON: {videos:[{id, acc, jacc, rec, per_phase:{...}}],
//               aggregate:{acc:{mean,std}, jacc:{...}, rec:{...}}}
void write_report(const std::filesystem::path& path, const MetricsReport& report);
MetricsReport read_report(const std::filesystem::path& path);
void write_report_csv(const std::filesystem::path& path, const MetricsReport& report);

std::string comparison_to_json_text(const ReportComparison& cmp);

}  // namespace mstage
