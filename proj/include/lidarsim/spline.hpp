#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "lidarsim/error.hpp"
#include "lidarsim/pose.hpp"

namespace lidarsim {

inline constexpr std::size_t kSplineSamples = 5000;

/// Clamped uniform B-spline through the first and last control points,
/// densely sampled at uniform parameter values u_k = k / (N - 1).
struct SplinePath {
  std::vector<Vec2> control_points;  // after collapsing repeats
  int degree = 3;
  std::vector<double> knots;
  std::vector<Vec2> samples;
  std::vector<double> arclength;  // cumulative, per sample
  std::vector<std::string> warnings;

  double length() const { return arclength.empty() ? 0.0 : arclength.back(); }
  std::size_t last_index() const { return samples.size() - 1; }

  /// de Boor evaluation at u in [0, 1].
  Vec2 evaluate(double u) const {
    const int p = degree;
    const int n = static_cast<int>(control_points.size());
    int span = p;
    if (u >= knots[n]) {
      span = n - 1;
    } else {
      while (span < n - 1 && knots[span + 1] <= u) ++span;
    }
    std::vector<Vec2> d(p + 1);
    for (int j = 0; j <= p; ++j) d[j] = control_points[j + span - p];
    for (int r = 1; r <= p; ++r) {
      for (int j = p; j >= r; --j) {
        const double lo = knots[j + span - p];
        const double hi = knots[j + 1 + span - r];
        const double alpha = hi == lo ? 0.0 : (u - lo) / (hi - lo);
        d[j] = (1.0 - alpha) * d[j - 1] + alpha * d[j];
      }
    }
    return d[p];
  }
};

inline SplinePath build_spline(std::span<const Vec2> points, std::size_t sample_count = kSplineSamples) {
  if (points.size() < 2) throw PreconditionError("build_spline: need at least 2 control points");
  if (sample_count < 2) throw PreconditionError("build_spline: need at least 2 samples");
  SplinePath path;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!path.control_points.empty() && (points[i] - path.control_points.back()).norm() < 1e-9) {
      path.warnings.push_back("control point " + std::to_string(i) +
                              " coincides with its predecessor; collapsed");
      continue;
    }
    path.control_points.push_back(points[i]);
  }
  const int n = static_cast<int>(path.control_points.size());
  if (n < 2) throw PreconditionError("build_spline: need at least 2 distinct control points");
  const int p = std::min(3, n - 1);
  path.degree = p;

  path.knots.assign(static_cast<std::size_t>(n + p + 1), 0.0);
  const int interior = n - p - 1;
  for (int i = 1; i <= interior; ++i) path.knots[p + i] = static_cast<double>(i) / (interior + 1);
  for (int i = n; i < n + p + 1; ++i) path.knots[i] = 1.0;

  path.samples.resize(sample_count);
  path.arclength.resize(sample_count);
  const double denom = static_cast<double>(sample_count - 1);
  for (std::size_t k = 0; k < sample_count; ++k) {
    path.samples[k] = path.evaluate(static_cast<double>(k) / denom);
    path.arclength[k] = k == 0 ? 0.0 : path.arclength[k - 1] + (path.samples[k] - path.samples[k - 1]).norm();
  }
  return path;
}

}  // namespace lidarsim
