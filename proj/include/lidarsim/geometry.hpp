#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "lidarsim/pose.hpp"

namespace lidarsim {

enum class PrimitiveKind { plane, box, cylinder, sphere, mesh };

inline const char* to_string(PrimitiveKind k) {
  switch (k) {
    case PrimitiveKind::plane: return "plane";
    case PrimitiveKind::box: return "box";
    case PrimitiveKind::cylinder: return "cylinder";
    case PrimitiveKind::sphere: return "sphere";
    case PrimitiveKind::mesh: return "mesh";
  }
  return "?";
}

using Triangle = std::array<Vec3, 3>;

inline double triangle_area(const Triangle& tri) {
  return 0.5 * (tri[1] - tri[0]).cross(tri[2] - tri[0]).norm();
}

/// Shape in its own local frame, placed by `local_pose`.
///
/// box: `half_extents` (x, y, z). cylinder: `radius`, `height`, axis along
/// local z, centered on the origin. sphere: `radius`. plane: the z = 0
/// boundary of the local frame, unbounded unless `plane_half_size` is set.
/// mesh: `triangles` in local coordinates.
struct GeometryPrimitive {
  PrimitiveKind kind = PrimitiveKind::box;
  Vec3 half_extents = Vec3::Ones();
  double radius = 1.0;
  double height = 1.0;
  std::optional<Vec2> plane_half_size;
  std::vector<Triangle> triangles;
  Pose local_pose;

  bool unbounded() const { return kind == PrimitiveKind::plane && !plane_half_size; }

  /// Number of independently intersectable pieces (triangles for meshes).
  std::size_t piece_count() const {
    return kind == PrimitiveKind::mesh ? triangles.size() : 1;
  }
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitX();
};

/// Hit candidate in the frame the ray was expressed in. `normal` is the
/// outward surface normal, not yet flipped toward the ray.
struct LocalHit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal = Vec3::UnitZ();
};

struct Aabb {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void extend(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  void extend(const Aabb& b) {
    lo = lo.cwiseMin(b.lo);
    hi = hi.cwiseMax(b.hi);
  }
  Aabb padded(double pad) const {
    return {lo - Vec3::Constant(pad), hi + Vec3::Constant(pad)};
  }
  Vec3 center() const { return 0.5 * (lo + hi); }
  bool valid() const { return (lo.array() <= hi.array()).all(); }

  /// Slab test. Returns entry distance (clamped at 0) if the ray meets the box
  /// within [0, t_max].
  std::optional<double> hit(const Ray& ray, double t_max) const {
    double t0 = 0.0;
    double t1 = t_max;
    for (int a = 0; a < 3; ++a) {
      const double o = ray.origin[a];
      const double d = ray.direction[a];
      if (d == 0.0) {
        if (o < lo[a] || o > hi[a]) return std::nullopt;
        continue;
      }
      const double inv = 1.0 / d;
      double ta = (lo[a] - o) * inv;
      double tb = (hi[a] - o) * inv;
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (t0 > t1) return std::nullopt;
    }
    return t0;
  }
};

namespace detail {

inline std::optional<LocalHit> intersect_plane(const GeometryPrimitive& g, const Ray& r) {
  const double dz = r.direction.z();
  if (dz == 0.0) return std::nullopt;
  const double t = -r.origin.z() / dz;
  if (!(t >= 0.0)) return std::nullopt;
  if (g.plane_half_size) {
    const Vec3 p = r.origin + t * r.direction;
    if (std::abs(p.x()) > g.plane_half_size->x() || std::abs(p.y()) > g.plane_half_size->y())
      return std::nullopt;
  }
  return LocalHit{t, Vec3::UnitZ()};
}

inline std::optional<LocalHit> intersect_box(const GeometryPrimitive& g, const Ray& r) {
  const Vec3& h = g.half_extents;
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  int axis_in = -1;
  int axis_out = -1;
  for (int a = 0; a < 3; ++a) {
    const double o = r.origin[a];
    const double d = r.direction[a];
    if (d == 0.0) {
      if (o < -h[a] || o > h[a]) return std::nullopt;
      continue;
    }
    double ta = (-h[a] - o) / d;
    double tb = (h[a] - o) / d;
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      axis_in = a;
    }
    if (tb < t1) {
      t1 = tb;
      axis_out = a;
    }
  }
  if (t0 > t1 || t1 < 0.0) return std::nullopt;
  LocalHit hit;
  if (t0 >= 0.0 && axis_in >= 0) {
    hit.t = t0;
    hit.normal = Vec3::Zero();
    hit.normal[axis_in] = r.direction[axis_in] > 0.0 ? -1.0 : 1.0;
  } else {
    // origin inside: the exit face
    hit.t = t1;
    hit.normal = Vec3::Zero();
    hit.normal[axis_out] = r.direction[axis_out] > 0.0 ? 1.0 : -1.0;
  }
  return hit;
}

inline std::optional<LocalHit> intersect_sphere(const GeometryPrimitive& g, const Ray& r) {
  const double b = r.origin.dot(r.direction);
  const double c = r.origin.squaredNorm() - g.radius * g.radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double s = std::sqrt(disc);
  double t = -b - s;
  if (t < 0.0) t = -b + s;
  if (t < 0.0) return std::nullopt;
  const Vec3 p = r.origin + t * r.direction;
  return LocalHit{t, p.normalized()};
}

inline std::optional<LocalHit> intersect_cylinder(const GeometryPrimitive& g, const Ray& r) {
  const double half_h = 0.5 * g.height;
  const double rad2 = g.radius * g.radius;
  LocalHit best;
  bool found = false;
  auto consider = [&](double t, const Vec3& n) {
    if (t >= 0.0 && t < best.t) {
      best.t = t;
      best.normal = n;
      found = true;
    }
  };
  const Vec3& o = r.origin;
  const Vec3& d = r.direction;
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a > 0.0) {
    const double b = o.x() * d.x() + o.y() * d.y();
    const double c = o.x() * o.x() + o.y() * o.y() - rad2;
    const double disc = b * b - a * c;
    if (disc >= 0.0) {
      const double s = std::sqrt(disc);
      for (const double t : {(-b - s) / a, (-b + s) / a}) {
        const double z = o.z() + t * d.z();
        if (std::abs(z) <= half_h) {
          const Vec3 p = o + t * d;
          consider(t, Vec3(p.x(), p.y(), 0.0).normalized());
        }
      }
    }
  }
  if (d.z() != 0.0) {
    for (const double zc : {-half_h, half_h}) {
      const double t = (zc - o.z()) / d.z();
      const Vec3 p = o + t * d;
      if (p.x() * p.x() + p.y() * p.y() <= rad2) consider(t, Vec3(0.0, 0.0, zc > 0 ? 1.0 : -1.0));
    }
  }
  if (!found) return std::nullopt;
  return best;
}

}  // namespace detail

/// Möller–Trumbore, two-sided. Normal follows the triangle winding.
inline std::optional<LocalHit> intersect_triangle(const Triangle& tri, const Ray& r) {
  const Vec3 e1 = tri[1] - tri[0];
  const Vec3 e2 = tri[2] - tri[0];
  const Vec3 pvec = r.direction.cross(e2);
  const double det = e1.dot(pvec);
  if (det == 0.0) return std::nullopt;
  const double inv_det = 1.0 / det;
  const Vec3 tvec = r.origin - tri[0];
  const double u = tvec.dot(pvec) * inv_det;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 qvec = tvec.cross(e1);
  const double v = r.direction.dot(qvec) * inv_det;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(qvec) * inv_det;
  if (t < 0.0) return std::nullopt;
  return LocalHit{t, e1.cross(e2).normalized()};
}

/// Intersects one piece of a primitive with a ray already expressed in the
/// primitive's local frame.
inline std::optional<LocalHit> intersect_local(const GeometryPrimitive& g, std::size_t piece,
                                               const Ray& local_ray) {
  switch (g.kind) {
    case PrimitiveKind::plane: return detail::intersect_plane(g, local_ray);
    case PrimitiveKind::box: return detail::intersect_box(g, local_ray);
    case PrimitiveKind::sphere: return detail::intersect_sphere(g, local_ray);
    case PrimitiveKind::cylinder: return detail::intersect_cylinder(g, local_ray);
    case PrimitiveKind::mesh: return intersect_triangle(g.triangles[piece], local_ray);
  }
  return std::nullopt;
}

/// Local-frame bounds of one piece. Unbounded planes have no box.
inline std::optional<Aabb> local_bounds(const GeometryPrimitive& g, std::size_t piece) {
  Aabb b;
  switch (g.kind) {
    case PrimitiveKind::plane:
      if (!g.plane_half_size) return std::nullopt;
      b.extend(Vec3(-g.plane_half_size->x(), -g.plane_half_size->y(), 0.0));
      b.extend(Vec3(g.plane_half_size->x(), g.plane_half_size->y(), 0.0));
      return b;
    case PrimitiveKind::box:
      return Aabb{-g.half_extents, g.half_extents};
    case PrimitiveKind::sphere:
      return Aabb{Vec3::Constant(-g.radius), Vec3::Constant(g.radius)};
    case PrimitiveKind::cylinder:
      return Aabb{Vec3(-g.radius, -g.radius, -0.5 * g.height),
                  Vec3(g.radius, g.radius, 0.5 * g.height)};
    case PrimitiveKind::mesh:
      for (const auto& v : g.triangles[piece]) b.extend(v);
      return b;
  }
  return std::nullopt;
}

/// World-frame box of a local box under a rigid transform (corner hull).
inline Aabb transform_bounds(const Aabb& local, const Pose& pose) {
  Aabb out;
  for (int i = 0; i < 8; ++i) {
    const Vec3 c((i & 1) ? local.hi.x() : local.lo.x(), (i & 2) ? local.hi.y() : local.lo.y(),
                 (i & 4) ? local.hi.z() : local.lo.z());
    out.extend(pose.transform_point(c));
  }
  return out;
}

}  // namespace lidarsim
