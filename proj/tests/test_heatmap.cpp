#include "brule/heatmap.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace brule;

namespace {

std::set<std::pair<int, int>> as_set(const EdgeGraph& g) { return {g.edges.begin(), g.edges.end()}; }

Heatmap uniform_heatmap(int h, int w) {
  Heatmap m(h, w, 1.0 / (h * w));
  return m;
}

Heatmap random_normalized(std::mt19937_64& rng, int h, int w) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Heatmap m(h, w);
  for (auto& v : m.data()) v = u(rng);
  m.normalize();
  return m;
}

}  // namespace

TEST(KnnGraph, Examples) {
  const LandmarkSet two{Vec2(0, 0), Vec2(1, 1)};
  EXPECT_EQ(knn_graph(two, 2).edges, (std::vector<std::pair<int, int>>{{0, 1}}));
  const LandmarkSet line{Vec2(0, 0), Vec2(0.5, 0), Vec2(1, 0)};
  EXPECT_EQ(as_set(knn_graph(line, 2)), (std::set<std::pair<int, int>>{{0, 1}, {1, 2}, {0, 2}}));
  EXPECT_THROW(knn_graph(LandmarkSet{Vec2(0, 0)}, 2), InvalidArgument);
}

TEST(KnnGraph, TiesGoToSmallerIndex) {
  // Point 0 is equidistant from 1 and 2; with k = 1 it links to 1.
  const LandmarkSet s{Vec2(0.5, 0.5), Vec2(0.4, 0.5), Vec2(0.6, 0.5), Vec2(0.9, 0.9)};
  const auto e = as_set(knn_graph(s, 1));
  EXPECT_TRUE(e.count({0, 1}));
  EXPECT_FALSE(e.count({0, 2}) && !e.count({0, 1}));
}

TEST(KnnGraph, MatchesBruteForce) {
  std::mt19937_64 rng(21);
  for (int n = 2; n <= 12; ++n)
    for (int k = 1; k <= 4; ++k)
      for (int rep = 0; rep < 5; ++rep) {
        const auto s = oracle::random_set(rng, n);
        EXPECT_EQ(as_set(knn_graph(s, k)), oracle::brute_force_knn(s, k));
        for (const auto& [a, b] : knn_graph(s, k).edges) {
          EXPECT_LT(a, b);
          EXPECT_LT(b, n);
        }
      }
}

TEST(DistPointSegment, Examples) {
  EXPECT_EQ(dist_point_segment(Vec2(0.5, 0), Vec2(0, 0), Vec2(1, 0)), 0.0);
  EXPECT_NEAR(dist_point_segment(Vec2(0, 1), Vec2(-1, 0), Vec2(1, 0)), 1.0, 1e-15);
  EXPECT_NEAR(dist_point_segment(Vec2(3, 4), Vec2(0, 0), Vec2(0, 0)), 5.0, 1e-15);
  EXPECT_NEAR(dist_point_segment(Vec2(2, 1), Vec2(0, 0), Vec2(1, 0)), std::sqrt(2.0), 1e-15);
}

TEST(DistPointSegment, MatchesDenseSampling) {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(-1, 2);
  for (int rep = 0; rep < 200; ++rep) {
    const Vec2 p(u(rng), u(rng)), a(u(rng), u(rng)), b(u(rng), u(rng));
    EXPECT_NEAR(dist_point_segment(p, a, b), oracle::sampled_segment_distance(p, a, b), 1e-4);
  }
}

TEST(RenderHeatmap, GaussianProfileAcrossASingleEdge) {
  HeatmapParams params{100, 100, 0.05, 2};
  const LandmarkSet s{Vec2(0.305, 0.505), Vec2(0.705, 0.505)};
  const auto h = render_heatmap(s, params, false);
  const double on = h.at(50, 50);
  EXPECT_NEAR(on, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(h.max(), on);
  EXPECT_NEAR(h.at(55, 50), std::exp(-0.5) * on, 1e-6);
  EXPECT_NEAR(h.at(45, 50), std::exp(-0.5) * on, 1e-6);
  for (int j = 30; j <= 70; ++j) EXPECT_NEAR(h.at(50, j), on, 1e-12);
}

TEST(RenderHeatmap, NormalizedSumsToOne) {
  std::mt19937_64 rng(23);
  for (int rep = 0; rep < 10; ++rep) {
    const auto s = oracle::random_set(rng, 20);
    EXPECT_NEAR(render_heatmap(s, HeatmapParams{}, true).sum(), 1.0, 1e-9);
  }
}

TEST(RenderHeatmap, MatchesNaiveDoubleLoop) {
  std::mt19937_64 rng(24);
  const HeatmapParams params{64, 64, 0.02, 2};
  for (int rep = 0; rep < 3; ++rep) {
    const auto s = oracle::random_set(rng, 68);
    const auto naive = oracle::naive_skeleton(s, oracle::brute_force_knn(s, 2), 64, 64, 0.02);
    const auto h = render_heatmap(s, params, false);
    for (std::size_t k = 0; k < naive.size(); ++k) ASSERT_NEAR(h[k], naive[k], 1e-12);
  }
}

TEST(RenderHeatmap, WiderBlurNeverLowersTheMinimum) {
  std::mt19937_64 rng(25);
  const auto s = oracle::random_set(rng, 10);
  double prev = -1.0;
  for (double sigma : {0.01, 0.02, 0.05, 0.1, 0.2, 0.5}) {
    const double m = render_heatmap(s, HeatmapParams{32, 32, sigma, 2}, false).min();
    EXPECT_GE(m, prev);
    prev = m;
  }
  EXPECT_EQ(render_heatmap(s, HeatmapParams{}, true).data(), render_heatmap(s, HeatmapParams{}, true).data());
}

TEST(RenderHeatmap, RejectsBadInput) {
  EXPECT_THROW(render_heatmap(LandmarkSet{Vec2(0, 0)}, HeatmapParams{}), InvalidArgument);
  EXPECT_THROW(render_heatmap(LandmarkSet{Vec2(0, 0), Vec2(1, 1)}, HeatmapParams{64, 64, 0.0, 2}), InvalidArgument);
  EXPECT_THROW(render_heatmap(LandmarkSet{Vec2(0, 0), Vec2(1, 1)}, HeatmapParams{1, 64, 0.1, 2}), InvalidArgument);
}

TEST(CrossEntropy, ClosedForms) {
  const auto u4 = uniform_heatmap(2, 2);
  EXPECT_NEAR(heatmap_cross_entropy(u4, u4), std::log(4.0), 1e-9);
  EXPECT_NEAR(heatmap_cross_entropy(u4, u4), 1.386294, 1e-6);

  for (int k : {2, 5, 16}) {
    Heatmap pred(4, 4), target(4, 4);
    for (int q = 0; q < k; ++q) pred[static_cast<std::size_t>(q)] = 1.0 / k;
    target[0] = 1.0;
    EXPECT_NEAR(heatmap_cross_entropy(pred, target), std::log(static_cast<double>(k)), 1e-9);
  }
}

TEST(CrossEntropy, GibbsInequality) {
  std::mt19937_64 rng(26);
  for (int rep = 0; rep < 100; ++rep) {
    const auto p = random_normalized(rng, 8, 8), q = random_normalized(rng, 8, 8);
    EXPECT_LE(heatmap_cross_entropy(p, p), heatmap_cross_entropy(q, p) + 1e-9);
  }
}

TEST(CrossEntropy, Errors) {
  EXPECT_THROW(heatmap_cross_entropy(uniform_heatmap(2, 2), uniform_heatmap(2, 3)), InvalidArgument);
  Heatmap bad(2, 2, 0.3);
  EXPECT_THROW(heatmap_cross_entropy(bad, uniform_heatmap(2, 2)), InvalidArgument);
  EXPECT_THROW(heatmap_cross_entropy(uniform_heatmap(2, 2), bad), InvalidArgument);
}

TEST(GradHeatmap, StationaryAtSelfMatch) {
  std::mt19937_64 rng(27);
  for (int rep = 0; rep < 5; ++rep) {
    const auto s = oracle::random_set(rng, 12, 0.2, 0.8);
    const HeatmapParams params{64, 64, 0.02, 2};
    const auto g = grad_heatmap_points(s, params, render_heatmap(s, params, true));
    for (const auto& v : g) EXPECT_LT(v.norm(), 1e-8);
  }
}

TEST(GradHeatmap, PullsTowardShiftedTarget) {
  const HeatmapParams params{64, 64, 0.02, 2};
  const LandmarkSet s{Vec2(0.3, 0.5), Vec2(0.6, 0.55)};
  const auto target = render_heatmap(s.translated(Vec2(0.01, 0)), params, true);
  const auto graph = knn_graph(s, 2);
  const auto g = grad_heatmap_points(s, graph, params, target);
  auto f = [&](const LandmarkSet& x) { return heatmap_cross_entropy(render_heatmap(x, graph, params, true), target); };
  const auto fd = oracle::central_difference(f, s);
  for (int i = 0; i < 2; ++i) {
    // Descent direction (-grad) points toward +x.
    EXPECT_LT(g[i].x(), 0.0);
    EXPECT_LT(fd[i].x(), 0.0);
  }
}

TEST(GradHeatmap, MatchesFiniteDifferencesWithFrozenGraph) {
  std::mt19937_64 rng(28);
  const HeatmapParams params{32, 32, 0.05, 2};
  for (int rep = 0; rep < 10; ++rep) {
    const auto s = oracle::random_set(rng, 6, 0.15, 0.85);
    const auto t = oracle::random_set(rng, 6, 0.15, 0.85);
    const auto graph = knn_graph(s, params.k);
    const auto target = render_heatmap(t, params, true);
    auto f = [&](const LandmarkSet& x) { return heatmap_cross_entropy(render_heatmap(x, graph, params, true), target); };
    const auto g = grad_heatmap_points(s, graph, params, target);
    EXPECT_LT(oracle::relative_error(g, oracle::central_difference(f, s)), 1e-4);
  }
}
