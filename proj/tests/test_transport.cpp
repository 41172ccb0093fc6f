#include "brule/transport.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace brule;

TEST(CostMatrix, Examples) {
  const LandmarkSet p{Vec2(0.2, 0.3)};
  EXPECT_EQ(cost_matrix(p, p)(0, 0), 0.0);
  const LandmarkSet a{Vec2(0, 0)}, b{Vec2(0.6, 0.8)};
  EXPECT_NEAR(cost_matrix(a, b, 2)(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(cost_matrix(a, b, 1)(0, 0), 1.0, 1e-15);
  EXPECT_THROW(cost_matrix(a, b, 3), InvalidArgument);
}

TEST(CostMatrix, MatchesScalarRecomputation) {
  std::mt19937_64 rng(1);
  const auto s = oracle::random_set(rng, 5), t = oracle::random_set(rng, 7);
  const Matrix c2 = cost_matrix(s, t, 2), c1 = cost_matrix(s, t, 1);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 7; ++j) {
      const double dx = s[i].x() - t[j].x(), dy = s[i].y() - t[j].y();
      EXPECT_NEAR(c2(i, j), dx * dx + dy * dy, 1e-15);
      EXPECT_NEAR(c1(i, j), std::hypot(dx, dy), 1e-15);
    }
}

TEST(SolveExact, IdenticalSetsGiveIdentityPlan) {
  std::mt19937_64 rng(2);
  const auto s = oracle::random_set(rng, 9);
  const auto r = solve_exact(s, s);
  EXPECT_EQ(r.cost, 0.0);
  EXPECT_EQ(r.plan.weights, Matrix(Matrix::Identity(9, 9) / 9.0));
}

TEST(SolveExact, RelabelingGivesAntiDiagonal) {
  const LandmarkSet a{Vec2(0, 0), Vec2(1, 1)}, b{Vec2(1, 1), Vec2(0, 0)};
  const auto r = solve_exact(a, b);
  EXPECT_EQ(r.cost, 0.0);
  EXPECT_EQ(r.plan.weights(0, 1), 0.5);
  EXPECT_EQ(r.plan.weights(1, 0), 0.5);
}

TEST(SolveExact, TiesBrokenByLowestIndex) {
  // All four points coincide: every permutation is optimal.
  const LandmarkSet s{Vec2(0.5, 0.5), Vec2(0.5, 0.5), Vec2(0.5, 0.5), Vec2(0.5, 0.5)};
  const LandmarkSet t{Vec2(0.1, 0.1), Vec2(0.1, 0.1), Vec2(0.1, 0.1), Vec2(0.1, 0.1)};
  const auto r = solve_exact(s, t);
  EXPECT_EQ(r.plan.weights, Matrix(Matrix::Identity(4, 4) / 4.0));

  // Two coincident pairs on a symmetric square: ties inside each pair.
  const LandmarkSet u{Vec2(0, 0), Vec2(1, 0), Vec2(0, 0), Vec2(1, 0)};
  const LandmarkSet v{Vec2(1, 0), Vec2(0, 0), Vec2(1, 0), Vec2(0, 0)};
  const auto q = solve_exact(u, v);
  EXPECT_EQ(q.cost, 0.0);
  EXPECT_EQ(q.plan.weights(0, 1), 0.25);
  EXPECT_EQ(q.plan.weights(1, 0), 0.25);
  EXPECT_EQ(q.plan.weights(2, 3), 0.25);
  EXPECT_EQ(q.plan.weights(3, 2), 0.25);
}

TEST(SolveExact, MatchesBruteForcePermutations) {
  std::mt19937_64 rng(42);
  for (int n = 2; n <= 7; ++n)
    for (int rep = 0; rep < 20; ++rep) {
      const auto s = oracle::random_set(rng, n), t = oracle::random_set(rng, n);
      const auto r = solve_exact(s, t);
      EXPECT_NEAR(r.cost, oracle::brute_force_matching(s, t, 2), 1e-12);
      // Plan entries are exactly 0 or 1/N and marginals are exact.
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const double w = r.plan.weights(i, j);
          EXPECT_TRUE(w == 0.0 || w == 1.0 / n);
        }
      EXPECT_LT(r.plan.marginal_violation(), 1e-12);
    }
}

TEST(SolveExact, UnequalSizesSolveTheTransportationLp) {
  // 1 source vs 3 targets: the only coupling spreads mass uniformly.
  const LandmarkSet one{Vec2(0, 0)};
  const LandmarkSet three{Vec2(1, 0), Vec2(0, 1), Vec2(1, 1)};
  const auto r = solve_exact(one, three);
  EXPECT_NEAR(r.cost, (1.0 + 1.0 + 2.0) / 3.0, 1e-15);

  // N = 2 vs M = 4, duplicated targets: splitting each target in half is optimal.
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    const auto s = oracle::random_set(rng, 3);
    std::vector<Vec2> dup;
    for (const auto& p : s) dup.insert(dup.end(), {p, p});
    const auto r2 = solve_exact(s, LandmarkSet(dup));
    EXPECT_NEAR(r2.cost, 0.0, 1e-15);
    EXPECT_LT(r2.plan.marginal_violation(), 1e-12);
  }

  // Against the LP optimum obtained by replicating points to a common size:
  // N=4, M=6 -> replicate sources x3 and targets x2 into a 12x12 assignment.
  for (int rep = 0; rep < 20; ++rep) {
    const auto s = oracle::random_set(rng, 4), t = oracle::random_set(rng, 6);
    std::vector<Vec2> sr, tr;
    for (const auto& p : s) sr.insert(sr.end(), {p, p, p});
    for (const auto& p : t) tr.insert(tr.end(), {p, p});
    const double lifted = solve_exact(LandmarkSet(sr), LandmarkSet(tr)).cost;
    const auto r3 = solve_exact(s, t);
    EXPECT_NEAR(r3.cost, lifted, 1e-12);
    EXPECT_LT(r3.plan.marginal_violation(), 1e-12);
    EXPECT_TRUE((r3.plan.weights.array() >= 0).all());
  }
}

TEST(SolveExact, SizeLimitPointsToSinkhorn) {
  std::mt19937_64 rng(5);
  const auto s = oracle::random_set(rng, 101), t = oracle::random_set(rng, 100);
  try {
    solve_exact(s, t);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("sinkhorn"), std::string::npos);
  }
}

TEST(Sinkhorn, IdenticalSetsHaveSmallCost) {
  std::mt19937_64 rng(6);
  const auto s = oracle::random_set(rng, 8);
  const auto r = solve_sinkhorn(s, s, {1e-3, 2000, 1e-6});
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.cost, 1e-3);
}

TEST(Sinkhorn, CloseToExactAtSmallEpsilon) {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 10; ++rep) {
    const auto s = oracle::random_set(rng, 6), t = oracle::random_set(rng, 6);
    const auto r = solve_sinkhorn(s, t, {1e-4, 2000, 1e-6});
    const double exact = solve_exact(s, t).cost;
    EXPECT_LT(std::abs(r.cost - exact) / exact, 0.01);
    EXPECT_LT(r.plan.marginal_violation(), 1e-6);
  }
}

TEST(Sinkhorn, HugeEpsilonGivesProductPlan) {
  std::mt19937_64 rng(8);
  const auto s = oracle::random_set(rng, 5), t = oracle::random_set(rng, 7);
  const auto r = solve_sinkhorn(s, t, {10.0, 2000, 1e-9});
  const Matrix outer = TransportPlan::uniform(5) * TransportPlan::uniform(7).transpose();
  EXPECT_LT((r.plan.weights - outer).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Sinkhorn, NonConvergenceIsFlaggedNotThrown) {
  std::mt19937_64 rng(9);
  const auto s = oracle::random_set(rng, 6), t = oracle::random_set(rng, 6);
  const auto r = solve_sinkhorn(s, t, {1e-4, 3, 1e-12});
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 3);
  EXPECT_THROW(solve_sinkhorn(s, t, {0.0, 10, 1e-6}), InvalidArgument);
}

TEST(Sinkhorn, CostDecreasesTowardExactAsEpsilonShrinks) {
  std::mt19937_64 rng(10);
  for (int rep = 0; rep < 10; ++rep) {
    const auto s = oracle::random_set(rng, 7), t = oracle::random_set(rng, 7);
    double prev = std::numeric_limits<double>::infinity();
    for (double eps : {1e-1, 1e-2, 1e-3}) {
      const auto r = solve_sinkhorn(s, t, {eps, 5000, 1e-10});
      EXPECT_LE(r.cost, prev + 1e-9) << "eps " << eps;
      prev = r.cost;
    }
    EXPECT_GE(prev, solve_exact(s, t).cost - 1e-9);
  }
}

TEST(W2, Examples) {
  std::mt19937_64 rng(11);
  const auto s = oracle::random_set(rng, 8);
  EXPECT_EQ(w2_squared(s, s), 0.0);
  const LandmarkSet a{Vec2(0.1, 0.2)}, b{Vec2(0.4, 0.6)};
  EXPECT_NEAR(w2_squared(a, b), 0.25, 1e-15);
  for (int rep = 0; rep < 10; ++rep) {
    const auto x = oracle::random_set(rng, 8), y = oracle::random_set(rng, 8);
    EXPECT_LT(std::abs(w2_squared(x, y) - w2_squared(y, x)), 1e-9);
  }
}

TEST(W1, ExamplesAndTriangleInequality) {
  std::mt19937_64 rng(12);
  const auto s = oracle::random_set(rng, 6);
  EXPECT_EQ(w1(s, s), 0.0);
  const LandmarkSet a{Vec2(0.1, 0.2)}, b{Vec2(0.4, 0.6)};
  EXPECT_NEAR(w1(a, b), 0.5, 1e-15);
  for (int rep = 0; rep < 30; ++rep) {
    const auto x = oracle::random_set(rng, 6), y = oracle::random_set(rng, 6), z = oracle::random_set(rng, 6);
    EXPECT_LE(w1(x, z), w1(x, y) + w1(y, z) + 1e-12);
    EXPECT_NEAR(w1(x, y), oracle::brute_force_matching(x, y, 1), 1e-12);
  }
}

TEST(BarycentricProjection, PermutationAndRankOnePlans) {
  const LandmarkSet t{Vec2(0, 0), Vec2(1, 0), Vec2(0, 1)};
  TransportPlan perm{Matrix::Zero(3, 3), TransportPlan::uniform(3), TransportPlan::uniform(3)};
  perm.weights(0, 2) = perm.weights(1, 0) = perm.weights(2, 1) = 1.0 / 3;
  const auto p = barycentric_projection(perm, t);
  EXPECT_EQ(p[0], t[2]);
  EXPECT_EQ(p[1], t[0]);
  EXPECT_EQ(p[2], t[1]);

  TransportPlan outer{TransportPlan::uniform(2) * TransportPlan::uniform(3).transpose(), TransportPlan::uniform(2),
                      TransportPlan::uniform(3)};
  const auto q = barycentric_projection(outer, t);
  for (const auto& x : q) EXPECT_LT((x - Vec2(1.0 / 3, 1.0 / 3)).norm(), 1e-15);

  outer.weights.row(1).setZero();
  EXPECT_THROW(barycentric_projection(outer, t), DegenerateError);
}

TEST(BarycentricProjection, SinkhornCloseToExactMatching) {
  std::mt19937_64 rng(13);
  for (int rep = 0; rep < 10; ++rep) {
    const auto s = oracle::random_set(rng, 6), t = oracle::random_set(rng, 6);
    const auto exact = barycentric_projection(solve_exact(s, t).plan, t);
    const auto soft = barycentric_projection(solve_sinkhorn(s, t, {1e-4, 2000, 1e-6}).plan, t);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_LT((exact[i] - soft[i]).norm(), 1e-2);
  }
}

TEST(GradW2, Examples) {
  std::mt19937_64 rng(14);
  const auto s = oracle::random_set(rng, 5);
  const auto id = solve_exact(s, s).plan;
  for (const auto& g : grad_w2_source(s, s, id)) EXPECT_EQ(g, Vec2::Zero());

  const LandmarkSet a{Vec2(0, 0)}, b{Vec2(1, 0)};
  TransportPlan one{Matrix::Ones(1, 1), Vector::Ones(1), Vector::Ones(1)};
  EXPECT_EQ(grad_w2_source(a, b, one)[0], Vec2(-2, 0));
  EXPECT_THROW(grad_w2_source(s, b, one), InvalidArgument);
}

TEST(GradW2, MatchesFiniteDifferencesWithFrozenPlan) {
  std::mt19937_64 rng(15);
  for (int rep = 0; rep < 10; ++rep) {
    const auto s = oracle::random_set(rng, 8), t = oracle::random_set(rng, 8);
    for (const auto& plan : {solve_exact(s, t).plan, solve_sinkhorn(s, t, {1e-2, 2000, 1e-9}).plan}) {
      auto frozen = [&](const LandmarkSet& x) {
        double acc = 0.0;
        for (int i = 0; i < 8; ++i)
          for (int j = 0; j < 8; ++j) acc += plan.weights(i, j) * (x[i] - t[j]).squaredNorm();
        return acc;
      };
      EXPECT_LT(oracle::relative_error(grad_w2_source(s, t, plan), oracle::central_difference(frozen, s)), 1e-6);
    }
  }
}
