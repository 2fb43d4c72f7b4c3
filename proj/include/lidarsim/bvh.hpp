#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "lidarsim/geometry.hpp"

namespace lidarsim {

/// Binary bounding-volume hierarchy over item boxes (median split on the
/// widest centroid axis). The hierarchy only prunes: callers decide hits, so
/// traversal visits every item whose box the ray enters at or before the
/// current best distance.
class Bvh {
 public:
  static constexpr std::uint32_t kLeafSize = 4;

  Bvh() = default;

  explicit Bvh(std::vector<Aabb> item_bounds) : bounds_(std::move(item_bounds)) {
    order_.resize(bounds_.size());
    std::iota(order_.begin(), order_.end(), 0u);
    if (!bounds_.empty()) {
      nodes_.reserve(2 * bounds_.size() / kLeafSize + 1);
      build(0, static_cast<std::uint32_t>(bounds_.size()));
    }
  }

  std::size_t item_count() const { return bounds_.size(); }
  std::size_t node_count() const { return nodes_.size(); }

  /// visit(item) is called for candidate items; it may lower `t_best`.
  template <class Visit>
  void traverse(const Ray& ray, double& t_best, Visit&& visit) const {
    if (nodes_.empty()) return;
    std::uint32_t stack[64];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
      const Node& node = nodes_[stack[--top]];
      const auto entry = node.box.hit(ray, t_best);
      if (!entry || *entry > t_best) continue;
      if (node.count > 0) {
        for (std::uint32_t i = node.first; i < node.first + node.count; ++i) visit(order_[i]);
        continue;
      }
      const auto el = nodes_[node.left].box.hit(ray, t_best);
      const auto er = nodes_[node.right].box.hit(ray, t_best);
      // push the farther child first so the nearer one pops next
      if (el && er) {
        if (*el <= *er) {
          stack[top++] = node.right;
          stack[top++] = node.left;
        } else {
          stack[top++] = node.left;
          stack[top++] = node.right;
        }
      } else if (el) {
        stack[top++] = node.left;
      } else if (er) {
        stack[top++] = node.right;
      }
    }
  }

 private:
  struct Node {
    Aabb box;
    std::uint32_t first = 0;
    std::uint32_t count = 0;  // > 0 for leaves
    std::uint32_t left = 0;
    std::uint32_t right = 0;
  };

  std::uint32_t build(std::uint32_t begin, std::uint32_t end) {
    const auto index = static_cast<std::uint32_t>(nodes_.size());
    nodes_.emplace_back();
    Aabb box;
    Aabb centroids;
    for (std::uint32_t i = begin; i < end; ++i) {
      box.extend(bounds_[order_[i]]);
      centroids.extend(bounds_[order_[i]].center());
    }
    nodes_[index].box = box;
    if (end - begin <= kLeafSize) {
      nodes_[index].first = begin;
      nodes_[index].count = end - begin;
      return index;
    }
    int axis = 0;
    (centroids.hi - centroids.lo).maxCoeff(&axis);
    const std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) {
                       const double ca = bounds_[a].center()[axis];
                       const double cb = bounds_[b].center()[axis];
                       return ca < cb || (ca == cb && a < b);
                     });
    const std::uint32_t left = build(begin, mid);
    const std::uint32_t right = build(mid, end);
    nodes_[index].left = left;
    nodes_[index].right = right;
    return index;
  }

  std::vector<Aabb> bounds_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace lidarsim
