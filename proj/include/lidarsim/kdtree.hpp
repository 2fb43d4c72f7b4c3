#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <queue>
#include <utility>
#include <vector>

#include "lidarsim/error.hpp"
#include "lidarsim/pose.hpp"

namespace lidarsim {

struct Neighbor {
  std::size_t index = 0;
  double dist2 = 0.0;

  bool operator<(const Neighbor& o) const { return dist2 != o.dist2 ? dist2 < o.dist2 : index < o.index; }
};

/// Static 3-D kd-tree over a point set it does not own. Queries are
/// read-only and safe to run concurrently.
class KdTree {
 public:
  explicit KdTree(const std::vector<Vec3>& points, std::size_t leaf_size = 8)
      : pts_(&points), leaf_size_(std::max<std::size_t>(1, leaf_size)) {
    order_.resize(points.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (!points.empty()) build(0, points.size());
  }

  std::size_t size() const { return order_.size(); }

  /// Up to k nearest points within `radius`, sorted by (distance, index).
  std::vector<Neighbor> knn(const Vec3& q, std::size_t k,
                            double radius = std::numeric_limits<double>::infinity()) const {
    std::vector<Neighbor> heap;  // max-heap on operator<
    if (k == 0 || nodes_.empty()) return heap;
    heap.reserve(k + 1);
    const double r2 = radius * radius;
    search(0, q, k, r2, heap);
    std::sort_heap(heap.begin(), heap.end());
    return heap;
  }

 private:
  struct Node {
    std::size_t begin = 0, end = 0;  // range in order_
    int axis = -1;                   // -1: leaf
    double split = 0.0;
    std::uint32_t left = 0, right = 0;
  };

  std::uint32_t build(std::size_t begin, std::size_t end) {
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back({begin, end});
    if (end - begin <= leaf_size_) return id;
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin((*pts_)[order_[i]]);
      hi = hi.cwiseMax((*pts_)[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    if (!(hi[axis] > lo[axis])) return id;  // all coincident: leave as leaf
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t a, std::size_t b) {
                       const double va = (*pts_)[a][axis], vb = (*pts_)[b][axis];
                       return va != vb ? va < vb : a < b;
                     });
    const double split = (*pts_)[order_[mid]][axis];
    const auto l = build(begin, mid);
    const auto r = build(mid, end);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  void offer(std::size_t idx, double d2, std::size_t k, std::vector<Neighbor>& heap) const {
    const Neighbor n{idx, d2};
    if (heap.size() < k) {
      heap.push_back(n);
      std::push_heap(heap.begin(), heap.end());
    } else if (n < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = n;
      std::push_heap(heap.begin(), heap.end());
    }
  }

  void search(std::uint32_t id, const Vec3& q, std::size_t k, double r2, std::vector<Neighbor>& heap) const {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::size_t idx = order_[i];
        const double d2 = ((*pts_)[idx] - q).squaredNorm();
        if (d2 <= r2) offer(idx, d2, k, heap);
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const auto near = diff < 0.0 ? n.left : n.right;
    const auto far = diff < 0.0 ? n.right : n.left;
    search(near, q, k, r2, heap);
    // <= keeps equal-distance candidates reachable for the index tie-break
    const double plane2 = diff * diff;
    if (plane2 <= r2 && (heap.size() < k || plane2 <= heap.front().dist2)) search(far, q, k, r2, heap);
  }

  const std::vector<Vec3>* pts_;
  std::size_t leaf_size_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

/// Reference implementation for tests.
inline std::vector<Neighbor> knn_brute_force(const std::vector<Vec3>& pts, const Vec3& q, std::size_t k,
                                             double radius = std::numeric_limits<double>::infinity()) {
  std::vector<Neighbor> all;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double d2 = (pts[i] - q).squaredNorm();
    if (d2 <= radius * radius) all.push_back({i, d2});
  }
  std::sort(all.begin(), all.end());
  if (all.size() > k) all.resize(k);
  return all;
}

}  // namespace lidarsim
