#include <gtest/gtest.h>

#include <random>

#include "lidarsim/kdtree.hpp"

using namespace lidarsim;

TEST(KdTree, MatchesBruteForce) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-10, 10);
  std::vector<Vec3> pts(3000);
  for (auto& p : pts) p = Vec3(u(rng), u(rng), 0.1 * u(rng));
  // duplicates and a regular grid for ties
  for (int i = 0; i < 50; ++i) pts.push_back(pts[static_cast<std::size_t>(i)]);
  for (int x = 0; x < 10; ++x)
    for (int y = 0; y < 10; ++y) pts.emplace_back(x, y, 0.0);
  const KdTree tree(pts, 4);
  EXPECT_EQ(tree.size(), pts.size());
  for (int q = 0; q < 500; ++q) {
    const Vec3 c = q % 5 == 0 ? Vec3(std::floor(u(rng) / 2) + 0.5, std::floor(u(rng) / 2) + 0.5, 0) : Vec3(u(rng), u(rng), u(rng));
    for (std::size_t k : {1u, 5u, 17u}) {
      for (double r : {std::numeric_limits<double>::infinity(), 1.0, 0.3}) {
        const auto a = tree.knn(c, k, r);
        const auto b = knn_brute_force(pts, c, k, r);
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
          ASSERT_EQ(a[i].index, b[i].index);
          ASSERT_EQ(a[i].dist2, b[i].dist2);
        }
      }
    }
  }
}

TEST(KdTree, EdgeCases) {
  std::vector<Vec3> none;
  EXPECT_TRUE(KdTree(none).knn(Vec3::Zero(), 3).empty());
  std::vector<Vec3> two{Vec3(0, 0, 0), Vec3(1, 0, 0)};
  const KdTree t(two);
  EXPECT_EQ(t.knn(Vec3::Zero(), 5).size(), 2u);
  EXPECT_TRUE(t.knn(Vec3::Zero(), 0).empty());
  EXPECT_EQ(t.knn(Vec3(0.4, 0, 0), 1)[0].index, 0u);
}
