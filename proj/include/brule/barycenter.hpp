#ifndef BRULE_BARYCENTER_HPP
#define BRULE_BARYCENTER_HPP

#include "brule/parallel.hpp"
#include "brule/transport.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace brule {

struct BarycenterConfig {
  enum class Init { first_sample, mean_of_samples };

  int max_outer_iters = 100;
  double convergence_tol = 1e-6;  // mean point displacement per iteration
  Init init = Init::first_sample;
  Solver solver = Solver::exact();
  unsigned threads = 1;

  void validate() const {
    if (max_outer_iters < 1) throw InvalidArgument("max_outer_iters must be positive");
    if (!(convergence_tol > 0.0)) throw InvalidArgument("convergence_tol must be positive");
  }
};

struct BarycenterResult {
  LandmarkSet barycenter;
  std::vector<double> history;  // mean W2^2 to the samples, one entry per iteration
  int iterations = 0;
  bool converged = false;
};

/// Free-support Wasserstein barycenter with N support points.
///
/// Fixed-point iteration: transport the current estimate to every sample,
/// project each sample back through its plan, and average the projections.
/// With the exact solver the mean W2^2 is non-increasing across iterations.
/// The estimate is not clamped to the unit square.
inline BarycenterResult compute_barycenter(const std::vector<LandmarkSet>& samples,
                                           const BarycenterConfig& config = {}) {
  config.validate();
  if (samples.empty()) throw InvalidArgument("barycenter needs at least one sample");
  const std::size_t n = samples.front().size();
  for (const auto& s : samples)
    if (s.size() != n) throw InvalidArgument("all barycenter samples must have the same number of points");

  const auto k = samples.size();
  std::vector<Vec2> estimate;
  if (config.init == BarycenterConfig::Init::first_sample) {
    estimate = samples.front().points();
  } else {
    estimate.assign(n, Vec2::Zero());
    for (const auto& s : samples)
      for (std::size_t i = 0; i < n; ++i) estimate[i] += s[i];
    for (auto& p : estimate) p /= static_cast<double>(k);
  }

  BarycenterResult result;
  std::vector<std::vector<Vec2>> projections(k);
  std::vector<double> costs(k);
  for (int it = 0; it < config.max_outer_iters; ++it) {
    const LandmarkSet current(estimate);
    parallel_for(k, config.threads, [&](std::size_t s) {
      const auto r = solve(current, samples[s], config.solver);
      costs[s] = r.cost;
      projections[s] = barycentric_projection(r.plan, samples[s]).points();
    });
    double mean_cost = 0.0;
    for (double c : costs) mean_cost += c;
    result.history.push_back(mean_cost / static_cast<double>(k));

    std::vector<Vec2> next(n, Vec2::Zero());
    for (const auto& proj : projections)
      for (std::size_t i = 0; i < n; ++i) next[i] += proj[i];
    double displacement = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      next[i] /= static_cast<double>(k);
      displacement += (next[i] - estimate[i]).norm();
    }
    displacement /= static_cast<double>(n);
    estimate = std::move(next);
    result.iterations = it + 1;
    if (displacement < config.convergence_tol) {
      result.converged = true;
      break;
    }
  }
  result.barycenter = LandmarkSet(std::move(estimate));
  return result;
}

struct SampleCurveRow {
  std::size_t subset_size = 0;
  double mean_w2 = 0.0;  // mean W2 (not squared) from subset barycenter to the reference
  double std_w2 = 0.0;   // sample standard deviation over repeats
};

/// Stability of the barycenter with respect to how many samples are used.
/// The reference is the barycenter of all samples; for each subset size,
/// `repeats` random subsets (without replacement) are drawn from a
/// mt19937_64 stream seeded with `seed`. Deterministic for a given seed.
inline std::vector<SampleCurveRow> barycenter_sample_curve(const std::vector<LandmarkSet>& samples,
                                                           const std::vector<std::size_t>& subset_sizes,
                                                           int repeats, std::uint64_t seed,
                                                           const BarycenterConfig& config = {}) {
  if (repeats < 1) throw InvalidArgument("repeats must be positive");
  for (auto sz : subset_sizes)
    if (sz < 1 || sz > samples.size())
      throw InvalidArgument("subset size " + std::to_string(sz) + " exceeds sample count " +
                            std::to_string(samples.size()));
  const auto reference = compute_barycenter(samples, config).barycenter;

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(samples.size());
  std::vector<SampleCurveRow> table;
  for (auto sz : subset_sizes) {
    std::vector<double> dist;
    for (int r = 0; r < repeats; ++r) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      // Partial Fisher-Yates: the first `sz` entries are the subset.
      for (std::size_t i = 0; i < sz; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
        std::swap(order[i], order[pick(rng)]);
      }
      std::vector<LandmarkSet> subset;
      subset.reserve(sz);
      for (std::size_t i = 0; i < sz; ++i) subset.push_back(samples[order[i]]);
      const auto bary = compute_barycenter(subset, config).barycenter;
      dist.push_back(std::sqrt(std::max(0.0, w2_squared(bary, reference))));
    }
    SampleCurveRow row;
    row.subset_size = sz;
    for (double d : dist) row.mean_w2 += d;
    row.mean_w2 /= static_cast<double>(dist.size());
    if (dist.size() > 1) {
      double var = 0.0;
      for (double d : dist) var += (d - row.mean_w2) * (d - row.mean_w2);
      row.std_w2 = std::sqrt(var / static_cast<double>(dist.size() - 1));
    }
    table.push_back(row);
  }
  return table;
}

}  // namespace brule

#endif  // BRULE_BARYCENTER_HPP
