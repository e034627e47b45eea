#pragma once

// Experiment outputs: report.csv, summary.json, the ablation table and the run manifest.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "robustst/config.hpp"
#include "robustst/pipeline.hpp"

namespace robustst {

inline constexpr const char* kArtifactVersion = "1.0.0";

inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

/// Writes `text` to `path` through a temporary file and a rename.
inline void write_atomically(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << text;
    out.flush();
    if (!out) throw std::runtime_error("failed while writing '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

/// Ordering check for ours_cls -> ours_cls_box -> ours_full. A drop smaller than
/// `flag_margin` (AP as a fraction, so 0.005 is half a point) is flagged rather than failed.
struct MonotonicityCheck {
  enum class Status { monotone, flagged, violated, not_applicable };
  Status status = Status::not_applicable;
  double largest_drop = 0.0;
};

inline const char* to_string(MonotonicityCheck::Status s) noexcept {
  switch (s) {
    case MonotonicityCheck::Status::monotone: return "monotone";
    case MonotonicityCheck::Status::flagged: return "flagged";
    case MonotonicityCheck::Status::violated: return "violated";
    case MonotonicityCheck::Status::not_applicable: return "not_applicable";
  }
  return "?";
}

inline MonotonicityCheck check_ablation_monotonicity(const ExperimentReport& report, double flag_margin = 0.005) {
  MonotonicityCheck out;
  const Variant chain[] = {Variant::ours_cls, Variant::ours_cls_box, Variant::ours_full};
  std::vector<double> means;
  for (Variant v : chain) {
    const VariantSummary* m = report.mean_of(v);
    if (!m) return out;
    means.push_back(m->mean_map);
  }
  for (std::size_t i = 1; i < means.size(); ++i) out.largest_drop = std::max(out.largest_drop, means[i - 1] - means[i]);
  if (out.largest_drop <= 0.0) {
    out.status = MonotonicityCheck::Status::monotone;
  } else if (out.largest_drop < flag_margin) {
    out.status = MonotonicityCheck::Status::flagged;
  } else {
    out.status = MonotonicityCheck::Status::violated;
  }
  return out;
}

/// One row per (variant, seed) followed by one mean row per variant. Fixed "%.6f" formatting
/// so identical runs give identical bytes.
inline std::string report_csv(const ExperimentReport& report, int num_classes) {
  std::ostringstream out;
  out << "variant,seed,map";
  for (int k = 1; k <= num_classes; ++k) out << ",ap_class" << k;
  out << ",pl_count,pl_true_pos,pl_false_pos,pl_false_neg,pl_class_accuracy,pl_mean_iou,aux_accuracy\n";
  auto quality = [&](const ReportRow& row) {
    if (!row.pseudo_quality) return std::string(",,,,,,");
    const PseudoLabelQuality& q = *row.pseudo_quality;
    return "," + std::to_string(q.num_pseudo) + "," + std::to_string(q.true_positives) + "," +
           std::to_string(q.false_positives) + "," + std::to_string(q.false_negatives) + "," +
           fixed6(q.class_accuracy) + "," + fixed6(q.mean_iou);
  };
  for (const ReportRow& row : report.rows) {
    out << to_string(row.variant) << ',' << row.seed << ',' << fixed6(row.eval.map);
    for (double ap : row.eval.class_ap) out << ',' << fixed6(ap);
    out << quality(row) << ',' << (row.aux_accuracy ? fixed6(*row.aux_accuracy) : "") << '\n';
  }
  for (const VariantSummary& m : report.means) {
    out << to_string(m.variant) << ",mean," << fixed6(m.mean_map);
    for (double ap : m.mean_class_ap) out << ',' << fixed6(ap);
    out << ",,,,,,,\n";
  }
  return out.str();
}

inline json summary_json(const ExperimentReport& report) {
  json j;
  j["seeds"] = report.seeds;
  json variants = json::object();
  for (const VariantSummary& m : report.means) {
    json v;
    v["mean_ap"] = m.mean_map;
    v["mean_class_ap"] = m.mean_class_ap;
    v["per_seed_ap"] = report.per_seed(m.variant);
    variants[std::string(to_string(m.variant))] = std::move(v);
  }
  j["variants"] = std::move(variants);
  const MonotonicityCheck mono = check_ablation_monotonicity(report);
  j["ablation_monotonicity"] = {{"status", to_string(mono.status)}, {"largest_drop", mono.largest_drop}};
  json warnings = json::array();
  for (const SeedRun& run : report.runs)
    for (const PhaseReport& p : run.phases)
      for (const std::string& w : p.warnings)
        warnings.push_back("seed " + std::to_string(run.seed) + ", phase " + std::to_string(p.phase) + ": " + w);
  j["warnings"] = std::move(warnings);
  return j;
}

/// Methods as rows, correction flags as columns, mean AP (in points) as the last column.
inline std::string ablation_table(const ExperimentReport& report) {
  std::ostringstream out;
  out << "method,cls_cor,box_r,fn_cor,ap\n";
  for (const VariantSummary& m : report.means) {
    const char* flags = ",,,";
    switch (m.variant) {
      case Variant::pseudo_label: flags = ",no,no,no,"; break;
      case Variant::ours_cls: flags = ",yes,no,no,"; break;
      case Variant::ours_cls_box: flags = ",yes,yes,no,"; break;
      case Variant::ours_full: flags = ",yes,yes,yes,"; break;
      default: flags = ",,,,"; break;
    }
    out << to_string(m.variant) << flags << fixed6(100.0 * m.mean_map) << '\n';
  }
  return out.str();
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Run manifest. Written before work starts (status "running") and rewritten when it ends.
/// Only `started_at`, `finished_at` and `wall_seconds` vary between identical runs.
struct RunManifest {
  std::string command;
  json config;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> outputs;
  std::string status = "running";
  std::string error;
  std::string started_at;
  std::string finished_at;
  double wall_seconds = 0.0;

  json to_json() const {
    json j;
    j["artifact_version"] = kArtifactVersion;
    j["command"] = command;
    j["status"] = status;
    if (!error.empty()) j["error"] = error;
    j["seeds"] = seeds;
    j["outputs"] = outputs;
    j["config"] = config;
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    j["wall_seconds"] = wall_seconds;
    return j;
  }

  void write(const std::filesystem::path& path) const { write_atomically(path, to_json().dump(2) + "\n"); }
};

}  // namespace robustst
