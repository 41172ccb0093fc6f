#ifndef BRULE_HEATMAP_HPP
#define BRULE_HEATMAP_HPP

#include "brule/core.hpp"

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

namespace brule {

struct HeatmapParams {
  int height = 64;
  int width = 64;
  double sigma = 0.02;  // normalized units
  int k = 2;            // neighbors per point

  void validate() const {
    if (height < 2 || width < 2) throw InvalidArgument("heatmap resolution must be at least 2x2");
    if (!(sigma > 0.0)) throw InvalidArgument("heatmap sigma must be positive");
    if (k < 1) throw InvalidArgument("heatmap k must be at least 1");
  }
};

/// Undirected edges (a, b) with a < b, sorted, no duplicates.
struct EdgeGraph {
  std::vector<std::pair<int, int>> edges;
};

/// Union of every point's k nearest neighbors (k clamped to N-1). Distance
/// ties go to the smaller index.
inline EdgeGraph knn_graph(const LandmarkSet& s, int k) {
  const int n = static_cast<int>(s.size());
  if (n < 2) throw InvalidArgument("k-NN graph needs at least two points");
  if (k < 1) throw InvalidArgument("k must be at least 1");
  k = std::min(k, n - 1);
  EdgeGraph g;
  std::vector<std::pair<double, int>> dist;
  dist.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    dist.clear();
    for (int j = 0; j < n; ++j)
      if (j != i) dist.emplace_back((s[i] - s[j]).squaredNorm(), j);
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    for (int q = 0; q < k; ++q) g.edges.emplace_back(std::min(i, dist[q].second), std::max(i, dist[q].second));
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  return g;
}

namespace detail {

/// Closest point on [a, b] to p, as the segment parameter in [0, 1].
inline double segment_param(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return 0.0;
  return std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
}

// Contributions with d^2 / (2 sigma^2) above this are below 2e-22 and skipped.
inline constexpr double kCutoffExponent = 50.0;

/// Visits every pixel (i, j) within the cutoff radius of segment [a, b]:
/// fn(pixel_index, pixel_center, segment_param, d2).
template <typename Fn>
void for_each_pixel_near_segment(const Vec2& a, const Vec2& b, int height, int width, double sigma, Fn&& fn) {
  const double r2 = 2.0 * kCutoffExponent * sigma * sigma;
  const double r = std::sqrt(r2);
  const int j0 = std::max(0, static_cast<int>(std::ceil((std::min(a.x(), b.x()) - r) * width - 0.5)));
  const int j1 = std::min(width - 1, static_cast<int>(std::floor((std::max(a.x(), b.x()) + r) * width - 0.5)));
  const int i0 = std::max(0, static_cast<int>(std::ceil((std::min(a.y(), b.y()) - r) * height - 0.5)));
  const int i1 = std::min(height - 1, static_cast<int>(std::floor((std::max(a.y(), b.y()) + r) * height - 0.5)));
  for (int i = i0; i <= i1; ++i)
    for (int j = j0; j <= j1; ++j) {
      const Vec2 p((j + 0.5) / width, (i + 0.5) / height);
      const double t = segment_param(p, a, b);
      const double d2 = (p - (a + t * (b - a))).squaredNorm();
      if (d2 > r2) continue;
      fn(static_cast<std::size_t>(i) * static_cast<std::size_t>(width) + static_cast<std::size_t>(j), p, t, d2);
    }
}

}  // namespace detail

/// Euclidean distance from p to the closed segment [a, b].
inline double dist_point_segment(const Vec2& p, const Vec2& a, const Vec2& b) {
  const double t = detail::segment_param(p, a, b);
  return (p - (a + t * (b - a))).norm();
}

/// Blurred-skeleton heatmap over a fixed edge graph: each pixel center
/// ((j+0.5)/W, (i+0.5)/H) gets sum_e exp(-d^2(e, pixel) / (2 sigma^2)).
inline Heatmap render_heatmap(const LandmarkSet& s, const EdgeGraph& graph, const HeatmapParams& params,
                              bool normalize) {
  params.validate();
  Heatmap h(params.height, params.width);
  const double inv = 1.0 / (2.0 * params.sigma * params.sigma);
  for (const auto& [a, b] : graph.edges) {
    if (a < 0 || b < 0 || static_cast<std::size_t>(std::max(a, b)) >= s.size())
      throw InvalidArgument("edge index out of range");
    detail::for_each_pixel_near_segment(s[a], s[b], params.height, params.width, params.sigma,
                                        [&](std::size_t k, const Vec2&, double, double d2) { h[k] += std::exp(-d2 * inv); });
  }
  if (normalize) {
    if (!(h.sum() > 0.0)) throw DegenerateError("rendered heatmap has zero mass");
    h.normalize();
  }
  return h;
}

inline Heatmap render_heatmap(const LandmarkSet& s, const HeatmapParams& params, bool normalize = true) {
  if (s.size() < 2) throw InvalidArgument("heatmap rendering needs at least two points");
  return render_heatmap(s, knn_graph(s, params.k), params, normalize);
}

/// H = -sum target * log(max(pred, floor)). Both maps must be normalized.
/// The floor only guards log(0); it is clamped rather than added so that
/// H(p | .) stays exactly stationary at the rendered p.
inline double heatmap_cross_entropy(const Heatmap& pred, const Heatmap& target, double floor = 1e-12) {
  if (pred.height() != target.height() || pred.width() != target.width())
    throw InvalidArgument("heatmap resolutions differ");
  if (!pred.is_normalized(1e-6) || !target.is_normalized(1e-6))
    throw InvalidArgument("cross-entropy inputs must be normalized to sum 1");
  if (!(floor > 0.0)) throw InvalidArgument("cross-entropy floor must be positive");
  double h = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k)
    if (target[k] != 0.0) h -= target[k] * std::log(std::max(pred[k], floor));
  return h;
}

/// Gradient of heatmap_cross_entropy(render(s, graph, normalized), target)
/// with respect to every point. The edge graph is held fixed.
inline std::vector<Vec2> grad_heatmap_points(const LandmarkSet& s, const EdgeGraph& graph,
                                             const HeatmapParams& params, const Heatmap& target,
                                             double floor = 1e-12) {
  const Heatmap raw = render_heatmap(s, graph, params, false);
  if (raw.height() != target.height() || raw.width() != target.width())
    throw InvalidArgument("heatmap resolutions differ");
  if (!target.is_normalized(1e-6)) throw InvalidArgument("target heatmap must be normalized");
  const double total = raw.sum();
  if (!(total > 0.0)) throw DegenerateError("rendered heatmap has zero mass");

  // p = L / S; only pixels above the floor depend on p:
  // dH/dL_k = (1/S) (-[p_k > floor] t_k / p_k + sum_m [p_m > floor] t_m).
  double shared = 0.0;
  std::vector<double> dh_dl(raw.size(), 0.0);
  for (std::size_t k = 0; k < raw.size(); ++k) {
    const double p = raw[k] / total;
    if (p > floor) {
      dh_dl[k] = -target[k] / p;
      shared += target[k];
    }
  }
  for (auto& v : dh_dl) v = (v + shared) / total;

  std::vector<Vec2> grad(s.size(), Vec2::Zero());
  const double inv_s2 = 1.0 / (params.sigma * params.sigma);
  const double inv = 0.5 * inv_s2;
  for (const auto& [a, b] : graph.edges) {
    Vec2 ga = Vec2::Zero(), gb = Vec2::Zero();
    detail::for_each_pixel_near_segment(
        s[a], s[b], params.height, params.width, params.sigma,
        [&](std::size_t k, const Vec2& p, double t, double d2) {
          // d(d^2)/da = -2 (1 - t)(p - q), d(d^2)/db = -2 t (p - q); the
          // clamped parameter's own derivative drops out.
          const Vec2 diff = p - (s[a] + t * (s[b] - s[a]));
          const double w = dh_dl[k] * std::exp(-d2 * inv) * inv_s2;
          ga += w * (1.0 - t) * diff;
          gb += w * t * diff;
        });
    grad[static_cast<std::size_t>(a)] += ga;
    grad[static_cast<std::size_t>(b)] += gb;
  }
  return grad;
}

inline std::vector<Vec2> grad_heatmap_points(const LandmarkSet& s, const HeatmapParams& params, const Heatmap& target,
                                             double floor = 1e-12) {
  return grad_heatmap_points(s, knn_graph(s, params.k), params, target, floor);
}

}  // namespace brule

#endif  // BRULE_HEATMAP_HPP
