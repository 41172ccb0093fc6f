#ifndef BRULE_DEFORM_HPP
#define BRULE_DEFORM_HPP

#include "brule/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace brule {

/// A geometric deformation g(x) = affine(x) + alpha * D(affine(x)), where D
/// bilinearly interpolates a G x G grid of control displacements spanning
/// [0,1]^2 (node (r, c) sits at (c/(G-1), r/(G-1)); positions outside the
/// square use the clamped value).
///
/// Construction checks a small-deformation bound that makes
/// y -> y + alpha D(y) a contraction perturbation of the identity, so g is
/// injective whenever the affine part is invertible.
class WarpSpec {
 public:
  WarpSpec() : WarpSpec(AffineMap::identity(), 2, std::vector<Vec2>(4, Vec2::Zero()), 0.0, 0) {}

  WarpSpec(AffineMap affine, int grid_size, std::vector<Vec2> elastic_grid, double elastic_alpha, std::uint64_t seed)
      : affine_(affine), grid_size_(grid_size), grid_(std::move(elastic_grid)), alpha_(elastic_alpha), seed_(seed) {
    if (!affine_.is_finite()) throw InvalidArgument("warp affine part must be finite");
    if (grid_size_ < 2) throw InvalidArgument("elastic grid size must be at least 2");
    if (grid_.size() != static_cast<std::size_t>(grid_size_) * static_cast<std::size_t>(grid_size_))
      throw InvalidArgument("elastic grid must hold G*G displacements");
    if (!(alpha_ >= 0.0) || !std::isfinite(alpha_)) throw InvalidArgument("elastic alpha must be non-negative");
    for (const auto& d : grid_)
      if (!d.allFinite()) throw InvalidArgument("elastic displacements must be finite");
    if (!satisfies_injectivity_bound(grid_size_, max_displacement(grid_), alpha_))
      throw InvalidArgument("elastic deformation too strong: injectivity bound violated");
  }

  static WarpSpec identity() { return {}; }
  static WarpSpec from_affine(const AffineMap& a) { return {a, 2, std::vector<Vec2>(4, Vec2::Zero()), 0.0, 0}; }

  /// alpha * max|d| * G < 0.5, and the Lipschitz constant of alpha * D
  /// (at most 2 sqrt(2) alpha max|d| (G - 1)) below 1.
  static bool satisfies_injectivity_bound(int grid_size, double max_disp, double alpha) {
    const double strength = alpha * max_disp;
    return strength * grid_size < 0.5 && 2.0 * std::numbers::sqrt2 * strength * (grid_size - 1) < 1.0;
  }

  static double max_displacement(const std::vector<Vec2>& grid) {
    double m = 0.0;
    for (const auto& d : grid) m = std::max(m, d.norm());
    return m;
  }

  const AffineMap& affine() const noexcept { return affine_; }
  int grid_size() const noexcept { return grid_size_; }
  const std::vector<Vec2>& elastic_grid() const noexcept { return grid_; }
  double elastic_alpha() const noexcept { return alpha_; }
  std::uint64_t seed() const noexcept { return seed_; }
  bool has_elastic() const noexcept { return alpha_ != 0.0 && max_displacement(grid_) != 0.0; }

  /// Interpolated control displacement D(y) (without alpha).
  Vec2 displacement(const Vec2& y) const {
    Cell c = locate(y);
    return (1 - c.fx) * (1 - c.fy) * node(c.r, c.c) + c.fx * (1 - c.fy) * node(c.r, c.c + 1) +
           (1 - c.fx) * c.fy * node(c.r + 1, c.c) + c.fx * c.fy * node(c.r + 1, c.c + 1);
  }

  /// dD/dy; zero along a direction in which y was clamped.
  Mat2 displacement_jacobian(const Vec2& y) const {
    Cell c = locate(y);
    const double scale = grid_size_ - 1;
    Mat2 j;
    j.col(0) = c.inside_x ? Vec2(scale * ((1 - c.fy) * (node(c.r, c.c + 1) - node(c.r, c.c)) +
                                           c.fy * (node(c.r + 1, c.c + 1) - node(c.r + 1, c.c))))
                          : Vec2::Zero();
    j.col(1) = c.inside_y ? Vec2(scale * ((1 - c.fx) * (node(c.r + 1, c.c) - node(c.r, c.c)) +
                                           c.fx * (node(c.r + 1, c.c + 1) - node(c.r, c.c + 1))))
                          : Vec2::Zero();
    return j;
  }

  Vec2 forward(const Vec2& x) const {
    const Vec2 y = affine_(x);
    if (alpha_ == 0.0) return y;
    return y + alpha_ * displacement(y);
  }

  Mat2 jacobian(const Vec2& x) const {
    if (alpha_ == 0.0) return affine_.linear;
    return (Mat2::Identity() + alpha_ * displacement_jacobian(affine_(x))) * affine_.linear;
  }

  /// g^{-1}(y): fixed-point iteration z <- y - alpha D(z) for the elastic
  /// part, then the exact affine inverse.
  Vec2 inverse(const Vec2& y, int iterations = 5) const {
    Vec2 z = y;
    if (alpha_ != 0.0)
      for (int k = 0; k < iterations; ++k) z = y - alpha_ * displacement(z);
    return affine_inverse().operator()(z);
  }

  AffineMap affine_inverse() const {
    if (std::abs(affine_.linear.determinant()) < 1e-8) throw DegenerateError("warp affine part is not invertible");
    return affine_.inverse();
  }

 private:
  struct Cell {
    int r, c;
    double fx, fy;
    bool inside_x, inside_y;
  };

  Cell locate(const Vec2& y) const {
    const double scale = grid_size_ - 1;
    auto axis = [&](double v, int& idx, double& frac, bool& inside) {
      inside = v > 0.0 && v < 1.0;
      const double u = std::clamp(v, 0.0, 1.0) * scale;
      idx = std::min(static_cast<int>(std::floor(u)), grid_size_ - 2);
      frac = u - idx;
    };
    Cell c{};
    axis(y.x(), c.c, c.fx, c.inside_x);
    axis(y.y(), c.r, c.fy, c.inside_y);
    return c;
  }

  const Vec2& node(int r, int c) const { return grid_[static_cast<std::size_t>(r) * grid_size_ + c]; }

  AffineMap affine_;
  int grid_size_;
  std::vector<Vec2> grid_;
  double alpha_;
  std::uint64_t seed_;
};

/// Sampling ranges for random warps. Rotation and scale act about the image
/// center (0.5, 0.5). Defaults: rotation +-15 degrees, scale [0.9, 1.1],
/// translation +-0.05, alpha in [0, 0.03], 4x4 control grid.
struct DeformSampler {
  double rotation_range = 15.0 * std::numbers::pi / 180.0;  // radians, symmetric
  double scale_min = 0.9;
  double scale_max = 1.1;
  double translation_range = 0.05;  // symmetric, normalized units
  int elastic_grid_size = 4;
  double alpha_min = 0.0;
  double alpha_max = 0.03;
  std::uint64_t seed = 0;

  /// A sampler that always produces the identity.
  static DeformSampler none(std::uint64_t seed = 0) { return {0.0, 1.0, 1.0, 0.0, 4, 0.0, 0.0, seed}; }

  void validate() const {
    if (!(rotation_range >= 0.0) || !(translation_range >= 0.0)) throw InvalidArgument("sampler ranges must be >= 0");
    if (!(scale_min > 0.0) || scale_max < scale_min) throw InvalidArgument("sampler scale range invalid");
    if (elastic_grid_size < 2) throw InvalidArgument("elastic grid size must be at least 2");
    if (!(alpha_min >= 0.0) || alpha_max < alpha_min) throw InvalidArgument("sampler alpha range invalid");
  }
};

/// Draws one warp from `rng`. The returned spec records `sampler.seed`.
inline WarpSpec sample_warp(const DeformSampler& sampler, std::mt19937_64& rng) {
  sampler.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const double theta = uniform(-sampler.rotation_range, sampler.rotation_range);
  const double scale = uniform(sampler.scale_min, sampler.scale_max);
  const double tx = uniform(-sampler.translation_range, sampler.translation_range);
  const double ty = uniform(-sampler.translation_range, sampler.translation_range);
  const double alpha = uniform(sampler.alpha_min, sampler.alpha_max);

  Mat2 linear;
  linear << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  linear *= scale;
  const Vec2 center(0.5, 0.5);
  const AffineMap affine{linear, center - linear * center + Vec2(tx, ty)};

  const int g = sampler.elastic_grid_size;
  std::vector<Vec2> grid(static_cast<std::size_t>(g) * g, Vec2::Zero());
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& d : grid) {
    const double dx = gauss(rng);
    d = Vec2(dx, gauss(rng));
  }
  if (alpha == 0.0) {
    std::fill(grid.begin(), grid.end(), Vec2::Zero());
  } else {
    // Shrink the grid until the bound holds with 10% margin.
    const double maxd = WarpSpec::max_displacement(grid);
    const double limit = std::min(0.5 / g, 1.0 / (2.0 * std::numbers::sqrt2 * (g - 1)));
    if (alpha * maxd >= 0.9 * limit) {
      const double shrink = 0.9 * limit / (alpha * maxd);
      for (auto& d : grid) d *= shrink;
    }
  }
  return WarpSpec(affine, g, std::move(grid), alpha, sampler.seed);
}

/// Deterministic under `sampler.seed`.
inline WarpSpec sample_warp(const DeformSampler& sampler) {
  std::mt19937_64 rng(sampler.seed);
  return sample_warp(sampler, rng);
}

/// Forward map applied to every point; results may leave the unit square.
inline LandmarkSet warp_points(const WarpSpec& g, const LandmarkSet& s) {
  std::vector<Vec2> out;
  out.reserve(s.size());
  for (const auto& p : s) out.push_back(g.forward(p));
  return LandmarkSet(std::move(out));
}

namespace detail {

// Continuous pixel coordinate of a normalized position (pixel centers at
// integers). Values within 1e-9 of an integer are snapped so that identity
// and whole-pixel shifts resample exactly.
inline double to_pixel(double v, int extent) {
  const double u = v * extent - 0.5;
  const double r = std::round(u);
  return std::abs(u - r) < 1e-9 ? r : u;
}

/// Bilinear sample of channel `c` with zero padding outside the raster.
template <typename At>
double sample_bilinear(At&& at, int height, int width, double u, double v) {
  const double fu = std::floor(u), fv = std::floor(v);
  const int j0 = static_cast<int>(fu), i0 = static_cast<int>(fv);
  const double ax = u - fu, ay = v - fv;
  auto tap = [&](int i, int j) { return (i < 0 || j < 0 || i >= height || j >= width) ? 0.0 : at(i, j); };
  double acc = 0.0;
  if ((1 - ax) * (1 - ay) != 0.0) acc += (1 - ax) * (1 - ay) * tap(i0, j0);
  if (ax * (1 - ay) != 0.0) acc += ax * (1 - ay) * tap(i0, j0 + 1);
  if ((1 - ax) * ay != 0.0) acc += (1 - ax) * ay * tap(i0 + 1, j0);
  if (ax * ay != 0.0) acc += ax * ay * tap(i0 + 1, j0 + 1);
  return acc;
}

template <typename Map, typename At, typename Put>
void resample(int height, int width, Map&& source_of, At&& at, Put&& put) {
  for (int i = 0; i < height; ++i)
    for (int j = 0; j < width; ++j) {
      const Vec2 x = source_of(Vec2((j + 0.5) / width, (i + 0.5) / height));
      put(i, j, sample_bilinear(at, height, width, to_pixel(x.x(), width), to_pixel(x.y(), height)));
    }
}

}  // namespace detail

/// Output pixel y takes the bilinear sample of the input at g^{-1}(y);
/// samples outside the input are black.
inline Image warp_image(const WarpSpec& g, const Image& img) {
  g.affine_inverse();  // throws on a singular affine part
  Image out(img.height(), img.width(), img.channels());
  for (int c = 0; c < img.channels(); ++c)
    detail::resample(
        img.height(), img.width(), [&](const Vec2& y) { return g.inverse(y); },
        [&](int i, int j) { return img.at(i, j, c); }, [&](int i, int j, double v) { out.at(i, j, c) = v; });
  return out;
}

/// Inverse of warp_image: output pixel y samples the input at g(y).
inline Image unwarp_image(const WarpSpec& g, const Image& img) {
  Image out(img.height(), img.width(), img.channels());
  for (int c = 0; c < img.channels(); ++c)
    detail::resample(
        img.height(), img.width(), [&](const Vec2& y) { return g.forward(y); },
        [&](int i, int j) { return img.at(i, j, c); }, [&](int i, int j, double v) { out.at(i, j, c) = v; });
  return out;
}

/// warp_image on a single channel; a normalized input is renormalized.
inline Heatmap warp_heatmap(const WarpSpec& g, const Heatmap& hm) {
  g.affine_inverse();
  Heatmap out(hm.height(), hm.width());
  detail::resample(
      hm.height(), hm.width(), [&](const Vec2& y) { return g.inverse(y); }, [&](int i, int j) { return hm.at(i, j); },
      [&](int i, int j, double v) { out.at(i, j) = v; });
  // Unchanged mass (e.g. the identity) is left alone so the output is bit-exact.
  if (hm.is_normalized(1e-6) && out.sum() != hm.sum()) {
    if (!(out.sum() > 0.0)) throw DegenerateError("warped heatmap left the raster entirely");
    out.normalize();
  }
  return out;
}

}  // namespace brule

#endif  // BRULE_DEFORM_HPP
