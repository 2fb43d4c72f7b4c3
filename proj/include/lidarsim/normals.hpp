#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "lidarsim/error.hpp"
#include "lidarsim/kdtree.hpp"
#include "lidarsim/pose.hpp"

namespace lidarsim {

struct OrientedPoint {
  Vec3 p = Vec3::Zero();
  Vec3 n = Vec3::UnitZ();  // unit
};

struct NormalFrame {
  double t = 0.0;
  std::vector<OrientedPoint> points;
  Vec3 sensor_origin = Vec3::Zero();  // used to orient fitted normals
};

/// Plane normal of a neighbourhood: eigenvector of the smallest eigenvalue
/// of the scatter about the centroid, flipped to face `viewpoint`.
inline std::optional<Vec3> fit_normal(std::span<const Vec3> pts, const Vec3& viewpoint) {
  if (pts.size() < 3) return std::nullopt;
  Vec3 c = Vec3::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  Mat3 scatter = Mat3::Zero();
  for (const auto& p : pts) scatter += (p - c) * (p - c).transpose();
  Eigen::SelfAdjointEigenSolver<Mat3> es(scatter);
  if (es.info() != Eigen::Success) return std::nullopt;
  // Need a 2-D spread; a line or a single point has no unique normal.
  if (!(es.eigenvalues()[1] > 1e-12 * es.eigenvalues()[2])) return std::nullopt;
  Vec3 n = es.eigenvectors().col(0).normalized();
  if (n.dot(viewpoint - c) < 0.0) n = -n;
  return n;
}

struct PlaneNormalOptions {
  std::size_t k = 5;
  double radius = 1.0;  // m; neighbours farther than this do not count
};

struct PlaneNormalResult {
  std::vector<double> t;
  std::vector<double> frame_error;  // sum over evaluated points of 1 - |n_est . n_gt|
  std::vector<std::size_t> evaluated;
  std::vector<std::size_t> skipped;  // fewer than k neighbours within radius, or no fit
  std::size_t total_skipped() const {
    std::size_t s = 0;
    for (auto v : skipped) s += v;
    return s;
  }
};

/// Ground-truth normal at q from the k nearest reference points, or nullopt.
inline std::optional<Vec3> gt_normal_at(const KdTree& tree, const std::vector<Vec3>& gt, const Vec3& q,
                                        const Vec3& viewpoint, const PlaneNormalOptions& opt) {
  const auto nb = tree.knn(q, opt.k, opt.radius);
  if (nb.size() < opt.k) return std::nullopt;
  std::vector<Vec3> local;
  local.reserve(nb.size());
  for (const auto& n : nb) local.push_back(gt[n.index]);
  return fit_normal(local, viewpoint);
}

inline PlaneNormalResult plane_normal_error(const std::vector<NormalFrame>& frames, const std::vector<Vec3>& gt_cloud,
                                            const PlaneNormalOptions& opt = {}) {
  if (opt.k < 3) throw PreconditionError("plane_normal_error: k must be >= 3");
  if (!(opt.radius > 0.0)) throw PreconditionError("plane_normal_error: radius must be > 0");
  if (gt_cloud.size() < opt.k) throw ValidationError("plane_normal_error: ground-truth cloud has fewer than k points");
  const KdTree tree(gt_cloud);
  PlaneNormalResult res;
  std::size_t evaluated_total = 0;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const auto& fr = frames[f];
    if (fr.points.empty()) throw ValidationError("plane_normal_error: frame " + std::to_string(f) + " is empty");
    double sum = 0.0;
    std::size_t ok = 0, skip = 0;
    for (const auto& op : fr.points) {
      const auto n_gt = gt_normal_at(tree, gt_cloud, op.p, fr.sensor_origin, opt);
      if (!n_gt) {
        ++skip;
        continue;
      }
      sum += 1.0 - std::min(1.0, std::abs(op.n.dot(*n_gt)));
      ++ok;
    }
    res.t.push_back(fr.t);
    res.frame_error.push_back(sum);
    res.evaluated.push_back(ok);
    res.skipped.push_back(skip);
    evaluated_total += ok;
  }
  if (!frames.empty() && evaluated_total == 0)
    throw ValidationError("plane_normal_error: ground-truth cloud too sparse, no query had " + std::to_string(opt.k) +
                          " neighbours within " + std::to_string(opt.radius) + " m");
  return res;
}

/// Normals for every point of a cloud from its own k-neighbourhoods; points
/// without a fit are dropped.
inline std::vector<OrientedPoint> estimate_normals(const std::vector<Vec3>& cloud, const Vec3& viewpoint,
                                                   const PlaneNormalOptions& opt = {}) {
  const KdTree tree(cloud);
  std::vector<OrientedPoint> out;
  for (const auto& p : cloud)
    if (auto n = gt_normal_at(tree, cloud, p, viewpoint, opt)) out.push_back({p, *n});
  return out;
}

/// Normal-set CSV `t,px,py,pz,nx,ny,nz`, grouped into frames by t. An
/// optional header line is skipped; normals are renormalised.
inline std::vector<NormalFrame> parse_normal_csv(std::istream& in, const std::string& source) {
  std::map<double, NormalFrame> by_t;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r" || line[0] == '#') continue;
    if (row == 1 && line.rfind("t,", 0) == 0) continue;
    double v[7];
    std::istringstream ls(line);
    for (int i = 0; i < 7; ++i) {
      std::string cell;
      if (!std::getline(ls, cell, ',')) throw ParseError(source + ": row " + std::to_string(row) + ": expected 7 columns");
      try {
        v[i] = std::stod(cell);
      } catch (const std::exception&) {
        throw ParseError(source + ": row " + std::to_string(row) + ": column " + std::to_string(i + 1) +
                         " is not a number");
      }
    }
    Vec3 n(v[4], v[5], v[6]);
    if (!(n.norm() > 0.0)) throw ParseError(source + ": row " + std::to_string(row) + ": zero normal");
    auto& fr = by_t[v[0]];
    fr.t = v[0];
    fr.points.push_back({Vec3(v[1], v[2], v[3]), n.normalized()});
  }
  std::vector<NormalFrame> out;
  for (auto& [t, f] : by_t) out.push_back(std::move(f));
  return out;
}

inline std::vector<NormalFrame> load_normal_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open normal set " + path);
  return parse_normal_csv(in, path);
}

/// Whitespace- or comma-separated `x y z` rows (extra columns ignored).
inline std::vector<Vec3> parse_xyz(std::istream& in, const std::string& source) {
  std::vector<Vec3> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    for (char& c : line)
      if (c == ',') c = ' ';
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#' || std::isalpha(static_cast<unsigned char>(line[first])))
      continue;
    std::istringstream ls(line);
    Vec3 p;
    if (!(ls >> p.x() >> p.y() >> p.z())) throw ParseError(source + ": row " + std::to_string(row) + ": expected x y z");
    out.push_back(p);
  }
  return out;
}

}  // namespace lidarsim
