#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "lidarsim/error.hpp"
#include "lidarsim/evaluator.hpp"
#include "lidarsim/normals.hpp"
#include "lidarsim/sequence_store.hpp"

namespace lidarsim {

inline nlohmann::json stats_to_json(const ErrorStats& s) {
  return {{"rmse", s.rmse}, {"mean", s.mean}, {"median", s.median}, {"std", s.std},
          {"min", s.min},   {"max", s.max},   {"count", s.count}};
}

inline nlohmann::json metric_to_json(const MetricResult& r) {
  nlohmann::json j = {{"metric", r.metric}, {"settings", r.settings}, {"unit", "m"}, {"stats", stats_to_json(r.stats)}};
  if (r.rotation_stats) j["rotation_stats_rad"] = stats_to_json(*r.rotation_stats);
  if (r.alignment) {
    const auto& a = *r.alignment;
    j["alignment"] = {{"rotation_wxyz", {a.rotation.w(), a.rotation.x(), a.rotation.y(), a.rotation.z()}},
                      {"translation", {a.translation.x(), a.translation.y(), a.translation.z()}},
                      {"scale", a.scale}};
  }
  return j;
}

/// `t,error` (plus `rotation_error` when present).
inline std::string series_csv(const MetricResult& r) {
  const bool rot = !r.rotation_errors.empty();
  std::string out = rot ? "t,error,rotation_error\n" : "t,error\n";
  char buf[128];
  for (std::size_t i = 0; i < r.errors.size(); ++i) {
    if (rot)
      std::snprintf(buf, sizeof buf, "%.9f,%.12g,%.12g\n", r.t[i], r.errors[i], r.rotation_errors[i]);
    else
      std::snprintf(buf, sizeof buf, "%.9f,%.12g\n", r.t[i], r.errors[i]);
    out += buf;
  }
  return out;
}

/// Whitespace columns for overlay plots:
/// `t ref_x ref_y ref_z est_x est_y est_z` with the estimate aligned.
inline std::string trajectory_overlay(const MetricResult& r, const Trajectory& est, const Trajectory& ref) {
  std::string out = "# t ref_x ref_y ref_z est_x est_y est_z\n";
  char buf[256];
  for (const auto& m : r.pairs) {
    const Vec3 pr = ref[m.ref].pose.position;
    const Vec3 pe = r.alignment ? r.alignment->apply(est[m.est].pose.position) : est[m.est].pose.position;
    std::snprintf(buf, sizeof buf, "%.9f %.9f %.9f %.9f %.9f %.9f %.9f\n", ref[m.ref].t, pr.x(), pr.y(), pr.z(), pe.x(),
                  pe.y(), pe.z());
    out += buf;
  }
  return out;
}

inline std::string normals_csv(const PlaneNormalResult& r) {
  std::string out = "t,error,evaluated,skipped\n";
  char buf[128];
  for (std::size_t i = 0; i < r.t.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.9f,%.12g,%zu,%zu\n", r.t[i], r.frame_error[i], r.evaluated[i], r.skipped[i]);
    out += buf;
  }
  return out;
}

struct ReportFiles {
  std::filesystem::path json, csv, overlay;
};

/// Writes `<prefix>.json`, `<prefix>.csv` and, when trajectories are given,
/// `<prefix>.overlay.dat`.
inline ReportFiles write_metric_report(const MetricResult& r, const std::filesystem::path& prefix,
                                       const Trajectory* est = nullptr, const Trajectory* ref = nullptr) {
  if (r.errors.empty()) throw PreconditionError("write_metric_report: empty result");
  ReportFiles f{prefix.string() + ".json", prefix.string() + ".csv", {}};
  if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
  detail::write_file_atomic(f.json, metric_to_json(r).dump(2) + "\n");
  detail::write_file_atomic(f.csv, series_csv(r));
  if (est && ref) {
    f.overlay = prefix.string() + ".overlay.dat";
    detail::write_file_atomic(f.overlay, trajectory_overlay(r, *est, *ref));
  }
  return f;
}

// ---------------------------------------------------------------------------
// Batch summary: one row per sequence, one column per algorithm (rmse), the
// lowest value per row marked with '*'.

struct SummaryEntry {
  std::string sequence;
  std::string control;  // e.g. Auto / Manual
  std::string feature;  // e.g. Structural / Dynamic
  std::string algorithm;
  ErrorStats stats;
};

/// Long form, one line per (sequence, algorithm).
inline std::string summary_csv(const std::vector<SummaryEntry>& rows) {
  if (rows.empty()) throw PreconditionError("summary: no results");
  std::string out = "sequence,control,feature,algorithm,rmse,mean,median,std,min,max,count\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%zu\n", r.sequence.c_str(),
                  r.control.c_str(), r.feature.c_str(), r.algorithm.c_str(), r.stats.rmse, r.stats.mean,
                  r.stats.median, r.stats.std, r.stats.min, r.stats.max, r.stats.count);
    out += buf;
  }
  return out;
}

inline std::string summary_table(const std::vector<SummaryEntry>& rows) {
  if (rows.empty()) throw PreconditionError("summary: no results");
  std::vector<std::string> seqs, algs;
  std::map<std::pair<std::string, std::string>, double> cell;
  std::map<std::string, std::pair<std::string, std::string>> meta;
  for (const auto& r : rows) {
    if (std::find(seqs.begin(), seqs.end(), r.sequence) == seqs.end()) seqs.push_back(r.sequence);
    if (std::find(algs.begin(), algs.end(), r.algorithm) == algs.end()) algs.push_back(r.algorithm);
    cell[{r.sequence, r.algorithm}] = r.stats.rmse;
    meta[r.sequence] = {r.control, r.feature};
  }
  auto pad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
  };
  std::size_t sw = 8;
  for (const auto& s : seqs) sw = std::max(sw, s.size());
  std::vector<std::size_t> aw;
  for (const auto& a : algs) aw.push_back(std::max<std::size_t>(10, a.size()));

  std::string out = pad("Index", 6) + "| " + pad("Sequence", sw) + " | " + pad("Control", 8) + " | " + pad("Feature", 11) + " |";
  for (std::size_t i = 0; i < algs.size(); ++i) out += " " + pad(algs[i], aw[i]) + " |";
  out += "\n";
  std::string rule(out.size() - 1, '-');
  out += rule + "\n";
  for (std::size_t si = 0; si < seqs.size(); ++si) {
    const auto& s = seqs[si];
    double best = std::numeric_limits<double>::infinity();
    for (const auto& a : algs)
      if (auto it = cell.find({s, a}); it != cell.end()) best = std::min(best, it->second);
    out += pad(std::to_string(si + 1), 6) + "| " + pad(s, sw) + " | " + pad(meta[s].first, 8) + " | " +
           pad(meta[s].second, 11) + " |";
    for (std::size_t i = 0; i < algs.size(); ++i) {
      std::string v = "-";
      if (auto it = cell.find({s, algs[i]}); it != cell.end()) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", it->second);
        v = buf;
        if (it->second == best) v += "*";
      }
      out += " " + pad(v, aw[i]) + " |";
    }
    out += "\n";
  }
  out += "APE rmse in meters; * marks the lowest error per sequence.\n";
  return out;
}

}  // namespace lidarsim
