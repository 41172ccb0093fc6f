#ifndef BRULE_TRANSPORT_HPP
#define BRULE_TRANSPORT_HPP

#include "brule/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace brule {

/// Entropic solver parameters. `epsilon` is in squared normalized units.
struct SinkhornParams {
  double epsilon = 1e-3;
  int max_iters = 2000;
  double tolerance = 1e-6;

  void validate() const {
    if (!(epsilon > 0.0)) throw InvalidArgument("sinkhorn epsilon must be positive");
    if (max_iters < 1) throw InvalidArgument("sinkhorn max_iters must be positive");
    if (!(tolerance > 0.0)) throw InvalidArgument("sinkhorn tolerance must be positive");
  }
};

/// Which OT solver to use: exact (assignment / transportation LP) or entropic.
struct Solver {
  enum class Kind { exact, sinkhorn };
  Kind kind = Kind::exact;
  SinkhornParams params{};

  static Solver exact() { return {}; }
  static Solver sinkhorn(SinkhornParams p = {}) { return {Kind::sinkhorn, p}; }
};

struct TransportResult {
  TransportPlan plan;
  double cost = 0.0;
  bool converged = true;
  int iterations = 0;
};

/// Upper bound on N*M for the exact solver with unequal set sizes.
inline constexpr long kExactSizeLimit = 10'000;

/// Entry (i,j) = ||source_i - target_j||^power, power in {1, 2}.
inline Matrix cost_matrix(const LandmarkSet& source, const LandmarkSet& target, int power = 2) {
  if (power != 1 && power != 2) throw InvalidArgument("cost power must be 1 or 2");
  const auto n = static_cast<Eigen::Index>(source.size());
  const auto m = static_cast<Eigen::Index>(target.size());
  Matrix c(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      const double d2 = (source[i] - target[j]).squaredNorm();
      c(i, j) = power == 2 ? d2 : std::sqrt(d2);
    }
  return c;
}

/// Sum_ij P_ij C_ij.
inline double transport_cost(const TransportPlan& plan, const Matrix& cost) {
  return plan.weights.cwiseProduct(cost).sum();
}

namespace detail {

/// Square assignment with the Hungarian method (shortest augmenting paths with
/// potentials). Among all optimal assignments returns the lexicographically
/// smallest column sequence. Result: row -> column.
inline std::vector<int> solve_assignment(const Matrix& c) {
  const int n = static_cast<int>(c.rows());
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays; index 0 is the virtual root.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = c(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> row_to_col(n), col_to_row(n);
  for (int j = 1; j <= n; ++j) {
    row_to_col[p[j] - 1] = j - 1;
    col_to_row[j - 1] = p[j] - 1;
  }

  // Every optimal assignment uses only edges that are tight for the optimal
  // duals, so the lexicographic minimum is a greedy walk over tight edges
  // with an alternating-path feasibility check.
  const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
  const double tight_tol = 1e-12 * scale;
  auto tight = [&](int i, int j) { return std::abs(c(i, j) - u[i + 1] - v[j + 1]) <= tight_tol; };

  std::vector<char> row_fixed(n, 0), col_fixed(n, 0);
  std::vector<int> parent_col(n), queue;
  queue.reserve(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (col_fixed[j] || !tight(i, j)) continue;
      if (row_to_col[i] == j) break;
      // Re-route: give column j to row i. Row r (j's owner) must reach column
      // c_free (i's old column) through an alternating path over free tight edges.
      const int r = col_to_row[j];
      const int c_free = row_to_col[i];
      std::fill(parent_col.begin(), parent_col.end(), -2);
      queue.clear();
      queue.push_back(r);
      int found_col = -1;
      std::vector<int> came_from_row(n, -1);
      for (std::size_t q = 0; q < queue.size() && found_col < 0; ++q) {
        const int row = queue[q];
        for (int k = 0; k < n; ++k) {
          if (k == j || col_fixed[k] || parent_col[k] != -2 || !tight(row, k)) continue;
          parent_col[k] = row;
          if (k == c_free) {
            found_col = k;
            break;
          }
          const int next = col_to_row[k];
          if (next != i && !row_fixed[next] && came_from_row[next] < 0 && next != r) {
            came_from_row[next] = k;
            queue.push_back(next);
          }
        }
      }
      if (found_col < 0) continue;
      // Flip the path: each row on it takes the column it reached.
      int k = found_col;
      while (true) {
        const int row = parent_col[k];
        const int prev_col = row == r ? -1 : came_from_row[row];
        row_to_col[row] = k;
        col_to_row[k] = row;
        if (prev_col < 0) break;
        k = prev_col;
      }
      row_to_col[i] = j;
      col_to_row[j] = i;
      break;
    }
    row_fixed[i] = 1;
    col_fixed[row_to_col[i]] = 1;
  }
  return row_to_col;
}

/// Exact transportation LP with uniform marginals 1/N, 1/M, solved as an
/// integer min-cost flow (supplies L/N, demands L/M, L = lcm(N, M)) with
/// successive shortest paths. Returns integer flows; divide by L for the plan.
inline std::vector<long> solve_transportation(const Matrix& c, long& total) {
  const int n = static_cast<int>(c.rows());
  const int m = static_cast<int>(c.cols());
  total = std::lcm(static_cast<long>(n), static_cast<long>(m));
  std::vector<long> supply(n, total / n), demand(m, total / m);
  std::vector<long> flow(static_cast<std::size_t>(n) * m, 0);
  auto f = [&](int i, int j) -> long& { return flow[static_cast<std::size_t>(i) * m + j]; };

  // Nodes: rows [0, n), cols [n, n+m), source S = n+m, sink T = n+m+1.
  // Dijkstra on reduced costs with Johnson potentials.
  const int src = n + m, snk = n + m + 1, nodes = n + m + 2;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> pot(nodes, 0.0), dist(nodes);
  std::vector<int> prev(nodes);
  std::vector<char> done(nodes);
  auto relax = [&](int from, int to, double cost) {
    const double nd = dist[from] + std::max(0.0, cost + pot[from] - pot[to]);
    if (nd < dist[to]) {
      dist[to] = nd;
      prev[to] = from;
    }
  };
  long sent = 0;
  while (sent < total) {
    std::fill(dist.begin(), dist.end(), inf);
    std::fill(prev.begin(), prev.end(), -1);
    std::fill(done.begin(), done.end(), 0);
    dist[src] = 0.0;
    for (int iter = 0; iter < nodes; ++iter) {
      int u = -1;
      for (int k = 0; k < nodes; ++k)
        if (!done[k] && dist[k] < inf && (u < 0 || dist[k] < dist[u])) u = k;
      if (u < 0) break;
      done[u] = 1;
      if (u == src) {
        for (int i = 0; i < n; ++i)
          if (supply[i] > 0) relax(src, i, 0.0);
      } else if (u < n) {
        for (int j = 0; j < m; ++j) relax(u, n + j, c(u, j));
      } else {
        const int j = u - n;
        if (demand[j] > 0) relax(u, snk, 0.0);
        for (int i = 0; i < n; ++i)
          if (f(i, j) > 0) relax(u, i, -c(i, j));
      }
    }
    if (!(dist[snk] < inf)) throw DegenerateError("transportation solver found no augmenting path");
    for (int k = 0; k < nodes; ++k)
      if (dist[k] < inf) pot[k] += dist[k];

    long push = std::numeric_limits<long>::max();
    for (int v = snk; v != src; v = prev[v]) {
      const int u = prev[v];
      if (u == src) push = std::min(push, supply[v]);
      else if (v == snk) push = std::min(push, demand[u - n]);
      else if (u >= n && v < n) push = std::min(push, f(v, u - n));
    }
    for (int v = snk; v != src; v = prev[v]) {
      const int u = prev[v];
      if (u == src) supply[v] -= push;
      else if (v == snk) demand[u - n] -= push;
      else if (u < n) f(u, v - n) += push;
      else f(v, u - n) -= push;
    }
    sent += push;
  }
  return flow;
}

inline double log_sum_exp(const double* x, Eigen::Index n, Eigen::Index stride) {
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < n; ++k) mx = std::max(mx, x[k * stride]);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) s += std::exp(x[k * stride] - mx);
  return mx + std::log(s);
}

}  // namespace detail

/// Exact OT with uniform marginals under the squared Euclidean cost.
/// Equal sizes use linear assignment (plan entries exactly 0 or 1/N);
/// unequal sizes use the transportation LP, limited to N*M <= 10'000.
inline TransportResult solve_exact(const LandmarkSet& source, const LandmarkSet& target,
                                   const Matrix* cost_override = nullptr) {
  const auto n = static_cast<Eigen::Index>(source.size());
  const auto m = static_cast<Eigen::Index>(target.size());
  const Matrix c = cost_override ? *cost_override : cost_matrix(source, target, 2);
  TransportResult r;
  r.plan.source_marginal = TransportPlan::uniform(n);
  r.plan.target_marginal = TransportPlan::uniform(m);
  r.plan.weights = Matrix::Zero(n, m);
  if (n == m) {
    const auto assign = detail::solve_assignment(c);
    const double w = 1.0 / static_cast<double>(n);
    for (Eigen::Index i = 0; i < n; ++i) r.plan.weights(i, assign[static_cast<std::size_t>(i)]) = w;
  } else {
    if (n * m > kExactSizeLimit)
      throw InvalidArgument("exact solver limited to N*M <= 10000 for unequal sizes; use sinkhorn");
    long total = 0;
    const auto flow = detail::solve_transportation(c, total);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < m; ++j)
        r.plan.weights(i, j) = static_cast<double>(flow[static_cast<std::size_t>(i * m + j)]) / static_cast<double>(total);
  }
  r.cost = transport_cost(r.plan, c);
  return r;
}

/// Log-domain Sinkhorn with uniform marginals and epsilon scaling (the
/// regularization is annealed geometrically from the cost scale down to
/// `params.epsilon`, warm-starting the dual potentials). The reported cost
/// is the transport cost of the regularized plan, entropy excluded.
/// Non-convergence is reported through `converged`, not thrown.
inline TransportResult solve_sinkhorn(const LandmarkSet& source, const LandmarkSet& target,
                                      const SinkhornParams& params, int power = 2) {
  params.validate();
  const auto n = static_cast<Eigen::Index>(source.size());
  const auto m = static_cast<Eigen::Index>(target.size());
  const Matrix c = cost_matrix(source, target, power);
  const double log_a = -std::log(static_cast<double>(n));
  const double log_b = -std::log(static_cast<double>(m));

  Vector f = Vector::Zero(n), g = Vector::Zero(m);
  Matrix work(n, m);  // column-major scratch

  auto update = [&](double eps) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < m; ++j) work(i, j) = (g(j) - c(i, j)) / eps + log_b;
    for (Eigen::Index i = 0; i < n; ++i) f(i) = -eps * detail::log_sum_exp(&work(i, 0), m, n);
    for (Eigen::Index j = 0; j < m; ++j)
      for (Eigen::Index i = 0; i < n; ++i) work(i, j) = (f(i) - c(i, j)) / eps + log_a;
    for (Eigen::Index j = 0; j < m; ++j) g(j) = -eps * detail::log_sum_exp(&work(0, j), n, 1);
  };
  auto plan_at = [&](double eps) {
    Matrix p(n, m);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < m; ++j) p(i, j) = std::exp((f(i) + g(j) - c(i, j)) / eps + log_a + log_b);
    return p;
  };

  TransportResult r;
  r.plan.source_marginal = TransportPlan::uniform(n);
  r.plan.target_marginal = TransportPlan::uniform(m);

  const double target_eps = params.epsilon;
  double eps = std::max(target_eps, c.maxCoeff());
  int iters = 0;
  constexpr int kStageIters = 10;
  while (eps > target_eps && iters < params.max_iters) {
    for (int k = 0; k < kStageIters && iters < params.max_iters; ++k, ++iters) update(eps);
    eps = std::max(target_eps, eps * 0.5);
  }
  eps = target_eps;
  r.converged = false;
  while (iters < params.max_iters) {
    update(eps);
    ++iters;
    // Column marginals are exact after the g-update; check the rows.
    const Matrix p = plan_at(eps);
    if ((p.rowwise().sum() - r.plan.source_marginal).cwiseAbs().maxCoeff() <= params.tolerance) {
      r.converged = true;
      break;
    }
  }
  r.iterations = iters;
  r.plan.weights = plan_at(eps);
  r.cost = transport_cost(r.plan, c);
  return r;
}

inline TransportResult solve(const LandmarkSet& source, const LandmarkSet& target, const Solver& solver) {
  return solver.kind == Solver::Kind::exact ? solve_exact(source, target)
                                            : solve_sinkhorn(source, target, solver.params);
}

/// Squared 2-Wasserstein distance between uniform measures on the two sets.
inline double w2_squared(const LandmarkSet& source, const LandmarkSet& target, const Solver& solver = {}) {
  return solve(source, target, solver).cost;
}

/// 1-Wasserstein distance (Euclidean ground cost).
inline double w1(const LandmarkSet& source, const LandmarkSet& target, const Solver& solver = {}) {
  if (solver.kind == Solver::Kind::sinkhorn) return solve_sinkhorn(source, target, solver.params, 1).cost;
  const Matrix c = cost_matrix(source, target, 1);
  return solve_exact(source, target, &c).cost;
}

/// Maps each source point to the plan-weighted mean of the target points.
inline LandmarkSet barycentric_projection(const TransportPlan& plan, const LandmarkSet& target) {
  if (plan.cols() != static_cast<Eigen::Index>(target.size()))
    throw InvalidArgument("plan column count does not match target size");
  std::vector<Vec2> out(static_cast<std::size_t>(plan.rows()));
  for (Eigen::Index i = 0; i < plan.rows(); ++i) {
    Vec2 acc = Vec2::Zero();
    double mass = 0.0;
    for (Eigen::Index j = 0; j < plan.cols(); ++j) {
      acc += plan.weights(i, j) * target[static_cast<std::size_t>(j)];
      mass += plan.weights(i, j);
    }
    if (!(mass > 0.0)) throw DegenerateError("plan row " + std::to_string(i) + " carries zero mass");
    out[static_cast<std::size_t>(i)] = acc / mass;
  }
  return LandmarkSet(std::move(out));
}

/// Gradient of sum_ij P_ij ||s_i - t_j||^2 with respect to each s_i, plan fixed.
inline std::vector<Vec2> grad_w2_source(const LandmarkSet& source, const LandmarkSet& target,
                                        const TransportPlan& plan) {
  if (plan.rows() != static_cast<Eigen::Index>(source.size()) ||
      plan.cols() != static_cast<Eigen::Index>(target.size()))
    throw InvalidArgument("plan dimensions do not match the point sets");
  std::vector<Vec2> grad(source.size(), Vec2::Zero());
  for (std::size_t i = 0; i < source.size(); ++i)
    for (std::size_t j = 0; j < target.size(); ++j)
      grad[i] += 2.0 * plan.weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * (source[i] - target[j]);
  return grad;
}

}  // namespace brule

#endif  // BRULE_TRANSPORT_HPP
