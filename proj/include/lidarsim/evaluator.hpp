#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/SVD>

#include "lidarsim/error.hpp"
#include "lidarsim/pose.hpp"

namespace lidarsim {

using Trajectory = std::vector<StampedPose>;

inline void validate_trajectory(const Trajectory& traj, const std::string& name) {
  if (traj.empty()) throw ValidationError(name + ": trajectory is empty");
  for (std::size_t i = 1; i < traj.size(); ++i)
    if (!(traj[i].t > traj[i - 1].t))
      throw ValidationError(name + ": timestamps must be strictly increasing (pose " + std::to_string(i) + ")");
}

// ---------------------------------------------------------------------------
// Statistics

struct ErrorStats {
  double rmse = 0.0;
  double mean = 0.0;
  double median = 0.0;
  double std = 0.0;  // population
  double min = 0.0;
  double max = 0.0;
  std::size_t count = 0;
};

/// Single pass for rmse/mean/std/min/max (Welford running means, so a
/// constant series yields that constant exactly); median from a sorted copy.
inline ErrorStats compute_stats(std::span<const double> errors) {
  if (errors.empty()) throw PreconditionError("compute_stats: empty error series");
  ErrorStats s;
  double mean = 0.0, m2 = 0.0, mean_sq = 0.0;
  s.min = std::numeric_limits<double>::infinity();
  s.max = -s.min;
  std::size_t n = 0;
  for (double e : errors) {
    ++n;
    const double d = e - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (e - mean);
    mean_sq += (e * e - mean_sq) / static_cast<double>(n);
    s.min = std::min(s.min, e);
    s.max = std::max(s.max, e);
  }
  s.count = n;
  s.mean = mean;
  s.rmse = std::sqrt(mean_sq);
  s.std = std::sqrt(std::max(0.0, m2 / static_cast<double>(n)));
  std::vector<double> sorted(errors.begin(), errors.end());
  std::sort(sorted.begin(), sorted.end());
  s.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  return s;
}

// ---------------------------------------------------------------------------
// Association

struct MatchedPair {
  std::size_t est = 0;
  std::size_t ref = 0;
  double dt = 0.0;  // t_est - t_ref
};

/// One-to-one nearest-timestamp matching within max_dt. Candidates are taken
/// greedily by |dt|, ties going to the lower est index, then the lower ref
/// index. The result is ordered by est time.
inline std::vector<MatchedPair> associate(const Trajectory& est, const Trajectory& ref, double max_dt = 0.01) {
  if (est.empty() || ref.empty()) throw PreconditionError("associate: empty trajectory");
  if (!(max_dt > 0.0)) throw PreconditionError("associate: max_dt must be > 0");
  std::vector<std::tuple<double, std::size_t, std::size_t>> cand;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double t = est[i].t;
    auto it = std::lower_bound(ref.begin(), ref.end(), t - max_dt,
                               [](const StampedPose& p, double v) { return p.t < v; });
    for (; it != ref.end() && it->t <= t + max_dt; ++it)
      cand.emplace_back(std::abs(t - it->t), i, static_cast<std::size_t>(it - ref.begin()));
  }
  std::sort(cand.begin(), cand.end());
  std::vector<char> est_used(est.size(), 0), ref_used(ref.size(), 0);
  std::vector<MatchedPair> out;
  for (const auto& [adt, i, j] : cand) {
    if (est_used[i] || ref_used[j]) continue;
    est_used[i] = ref_used[j] = 1;
    out.push_back({i, j, est[i].t - ref[j].t});
  }
  if (out.empty()) throw ValidationError("associate: zero matches within max_dt = " + std::to_string(max_dt) + " s");
  std::sort(out.begin(), out.end(), [](const MatchedPair& a, const MatchedPair& b) { return a.est < b.est; });
  return out;
}

// ---------------------------------------------------------------------------
// Umeyama alignment

struct AlignmentTransform {
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }

  /// Applies to a pose: scaled position, rotated orientation.
  Pose apply(const Pose& p) const {
    Pose out;
    out.position = apply(p.position);
    out.orientation = (rotation * p.orientation).normalized();
    return out;
  }
};

/// Closed-form least-squares similarity mapping est onto ref. SVD of the
/// cross-covariance with Eigen's JacobiSVD (singular values descending);
/// when det(U)det(V) < 0 the sign of the smallest singular direction flips
/// so the result is a proper rotation.
inline AlignmentTransform umeyama_align(std::span<const Vec3> est, std::span<const Vec3> ref, bool with_scale) {
  if (est.size() != ref.size()) throw PreconditionError("umeyama_align: point counts differ");
  const std::size_t n = est.size();
  if (n < 3) throw ValidationError("umeyama_align: need at least 3 matched pairs");
  Vec3 mu_e = Vec3::Zero(), mu_r = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mu_e += est[i];
    mu_r += ref[i];
  }
  mu_e /= static_cast<double>(n);
  mu_r /= static_cast<double>(n);
  Mat3 sigma = Mat3::Zero(), cov_e = Mat3::Zero(), cov_r = Mat3::Zero();
  double var_e = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 e = est[i] - mu_e;
    const Vec3 r = ref[i] - mu_r;
    sigma += r * e.transpose();
    cov_e += e * e.transpose();
    cov_r += r * r.transpose();
    var_e += e.squaredNorm();
  }
  sigma /= static_cast<double>(n);
  var_e /= static_cast<double>(n);

  // Rank check: a unique rotation needs both point sets to span >= 2 dims.
  auto rank_ok = [](const Mat3& c) {
    const Vec3 sv = Eigen::JacobiSVD<Mat3>(c).singularValues();
    return sv[0] > 0.0 && sv[1] > 1e-12 * sv[0];
  };
  if (!rank_ok(cov_e) || !rank_ok(cov_r))
    throw ValidationError("umeyama_align: degenerate configuration (points coincident or collinear)");

  Eigen::JacobiSVD<Mat3> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Vec3 s_diag(1.0, 1.0, 1.0);
  if (u.determinant() * v.determinant() < 0.0) s_diag[2] = -1.0;
  const Mat3 r = u * s_diag.asDiagonal() * v.transpose();

  AlignmentTransform t;
  t.rotation = Quat(r).normalized();
  t.scale = with_scale ? svd.singularValues().dot(s_diag) / var_e : 1.0;
  t.translation = mu_r - t.scale * (r * mu_e);
  return t;
}

// ---------------------------------------------------------------------------
// APE / RPE

enum class AlignMode { none, se3, sim3 };

inline AlignMode parse_align_mode(const std::string& s) {
  if (s == "none") return AlignMode::none;
  if (s == "se3") return AlignMode::se3;
  if (s == "sim3") return AlignMode::sim3;
  throw ParseError("unknown alignment '" + s + "' (expected none, se3 or sim3)");
}

inline const char* to_string(AlignMode m) {
  switch (m) {
    case AlignMode::none: return "none";
    case AlignMode::se3: return "se3";
    case AlignMode::sim3: return "sim3";
  }
  return "?";
}

struct MetricResult {
  std::string metric;  // "ape" or "rpe"
  ErrorStats stats;    // translational, m
  std::vector<double> t;
  std::vector<double> errors;
  std::optional<ErrorStats> rotation_stats;  // rad, when requested
  std::vector<double> rotation_errors;
  std::optional<AlignmentTransform> alignment;
  std::vector<MatchedPair> pairs;
  std::string settings;  // human-readable summary of options
};

struct ApeOptions {
  AlignMode align = AlignMode::none;
  double max_dt = 0.01;
  bool rotational = false;
};

inline MetricResult ape(const Trajectory& est, const Trajectory& ref, const ApeOptions& opt = {}) {
  validate_trajectory(est, "estimate");
  validate_trajectory(ref, "reference");
  MetricResult res;
  res.metric = "ape";
  res.settings = std::string("align=") + to_string(opt.align) + " max_dt=" + std::to_string(opt.max_dt);
  res.pairs = associate(est, ref, opt.max_dt);
  AlignmentTransform tf;
  if (opt.align != AlignMode::none) {
    std::vector<Vec3> pe, pr;
    for (const auto& m : res.pairs) {
      pe.push_back(est[m.est].pose.position);
      pr.push_back(ref[m.ref].pose.position);
    }
    tf = umeyama_align(pe, pr, opt.align == AlignMode::sim3);
    res.alignment = tf;
  }
  for (const auto& m : res.pairs) {
    const Pose& r = ref[m.ref].pose;
    const Pose& e = est[m.est].pose;
    res.t.push_back(ref[m.ref].t);
    const Vec3 pe = opt.align == AlignMode::none ? e.position : tf.apply(e.position);
    res.errors.push_back((r.position - pe).norm());
    if (opt.rotational) {
      const Quat qe = opt.align == AlignMode::none ? e.orientation : tf.rotation * e.orientation;
      res.rotation_errors.push_back(rotation_angle(r.orientation.conjugate() * qe));
    }
  }
  res.stats = compute_stats(res.errors);
  if (opt.rotational) res.rotation_stats = compute_stats(res.rotation_errors);
  return res;
}

struct RpeOptions {
  /// Pair-step offset (delta_seconds unset) or time offset in seconds.
  std::size_t delta_steps = 1;
  std::optional<double> delta_seconds;
  double max_dt = 0.01;
  bool rotational = false;
};

/// Relative error between matched pose pairs (i, j):
/// E = (Q_i^-1 Q_j)^-1 (P_i^-1 P_j), Q = reference, P = estimate.
inline Pose relative_error(const Pose& ref_i, const Pose& ref_j, const Pose& est_i, const Pose& est_j) {
  return (ref_i.inverse() * ref_j).inverse() * (est_i.inverse() * est_j);
}

inline MetricResult rpe(const Trajectory& est, const Trajectory& ref, const RpeOptions& opt = {}) {
  validate_trajectory(est, "estimate");
  validate_trajectory(ref, "reference");
  MetricResult res;
  res.metric = "rpe";
  res.pairs = associate(est, ref, opt.max_dt);
  const auto& pairs = res.pairs;
  const std::size_t n = pairs.size();

  std::vector<std::pair<std::size_t, std::size_t>> windows;
  if (opt.delta_seconds) {
    const double d = *opt.delta_seconds;
    if (!(d > 0.0)) throw PreconditionError("rpe: delta must be > 0");
    res.settings = "delta=" + std::to_string(d) + "s";
    std::size_t j = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double ti = ref[pairs[i].ref].t;
      j = std::max(j, i + 1);
      while (j < n && ref[pairs[j].ref].t - ti < d - 1e-9) ++j;
      if (j >= n) break;
      windows.emplace_back(i, j);
    }
  } else {
    if (opt.delta_steps == 0) throw PreconditionError("rpe: delta must be > 0");
    res.settings = "delta=" + std::to_string(opt.delta_steps) + " steps";
    for (std::size_t i = 0; i + opt.delta_steps < n; ++i) windows.emplace_back(i, i + opt.delta_steps);
  }
  if (windows.empty()) throw ValidationError("rpe: delta exceeds the matched trajectory span");
  res.settings += " max_dt=" + std::to_string(opt.max_dt);

  for (const auto& [i, j] : windows) {
    const Pose e = relative_error(ref[pairs[i].ref].pose, ref[pairs[j].ref].pose, est[pairs[i].est].pose,
                                  est[pairs[j].est].pose);
    res.t.push_back(ref[pairs[i].ref].t);
    res.errors.push_back(e.position.norm());
    if (opt.rotational) res.rotation_errors.push_back(rotation_angle(e.orientation));
  }
  res.stats = compute_stats(res.errors);
  if (opt.rotational) res.rotation_stats = compute_stats(res.rotation_errors);
  return res;
}

}  // namespace lidarsim
