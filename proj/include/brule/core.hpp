#ifndef BRULE_CORE_HPP
#define BRULE_CORE_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <iostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace brule {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text (pts, JSON). Carries the offending line when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  explicit ParseError(const std::string& what) : Error(what), line_(0) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Inputs that violate an operation's preconditions (sizes, ranges).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Numerically degenerate configurations (singular Gram matrix, zero mass rows).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Ordered set of 2D landmarks in normalized image coordinates.
///
/// Points outside [0,1]^2 are allowed (deformations can push them out);
/// `in_unit_square()` reports it.
class LandmarkSet {
 public:
  LandmarkSet() = default;
  explicit LandmarkSet(std::vector<Vec2> points) : points_(std::move(points)) {
    validate();
  }
  LandmarkSet(std::initializer_list<Vec2> points) : points_(points) { validate(); }

  std::size_t size() const noexcept { return points_.size(); }
  bool empty() const noexcept { return points_.empty(); }
  const Vec2& operator[](std::size_t i) const { return points_[i]; }
  const std::vector<Vec2>& points() const noexcept { return points_; }
  auto begin() const noexcept { return points_.begin(); }
  auto end() const noexcept { return points_.end(); }

  bool in_unit_square() const {
    for (const auto& p : points_)
      if (p.x() < 0.0 || p.x() > 1.0 || p.y() < 0.0 || p.y() > 1.0) return false;
    return true;
  }

  LandmarkSet translated(const Vec2& t) const {
    std::vector<Vec2> out(points_);
    for (auto& p : out) p += t;
    return LandmarkSet(std::move(out));
  }

  /// Points as an N x 2 matrix, one point per row.
  Matrix as_matrix() const {
    Matrix m(static_cast<Eigen::Index>(size()), 2);
    for (std::size_t i = 0; i < size(); ++i) m.row(static_cast<Eigen::Index>(i)) = points_[i].transpose();
    return m;
  }

  friend bool operator==(const LandmarkSet& a, const LandmarkSet& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i] != b[i]) return false;
    return true;
  }

 private:
  void validate() const {
    if (points_.empty()) throw InvalidArgument("landmark set must contain at least one point");
    for (const auto& p : points_)
      if (!std::isfinite(p.x()) || !std::isfinite(p.y()))
        throw InvalidArgument("landmark coordinates must be finite");
  }

  std::vector<Vec2> points_;
};

/// Arithmetic mean of the points.
inline Vec2 center_of_mass(const LandmarkSet& s) {
  Vec2 acc = Vec2::Zero();
  for (const auto& p : s) acc += p;
  return acc / static_cast<double>(s.size());
}

/// Coupling between an N-point source and an M-point target.
struct TransportPlan {
  Matrix weights;
  Vector source_marginal;
  Vector target_marginal;

  Eigen::Index rows() const { return weights.rows(); }
  Eigen::Index cols() const { return weights.cols(); }

  /// Largest absolute deviation of row/column sums from the stated marginals.
  double marginal_violation() const {
    double v = (weights.rowwise().sum() - source_marginal).cwiseAbs().maxCoeff();
    return std::max(v, (weights.colwise().sum().transpose() - target_marginal).cwiseAbs().maxCoeff());
  }

  void validate(double tol = 1e-6) const {
    if (weights.rows() != source_marginal.size() || weights.cols() != target_marginal.size())
      throw InvalidArgument("plan marginals do not match weight dimensions");
    if (!weights.allFinite() || (weights.array() < 0.0).any())
      throw InvalidArgument("plan weights must be finite and non-negative");
    if (std::abs(source_marginal.sum() - 1.0) > tol || std::abs(target_marginal.sum() - 1.0) > tol)
      throw InvalidArgument("plan marginals must each sum to 1");
    if (marginal_violation() > tol) throw InvalidArgument("plan row/column sums violate marginals");
  }

  static Vector uniform(Eigen::Index n) { return Vector::Constant(n, 1.0 / static_cast<double>(n)); }
};

/// x -> linear * x + translation.
struct AffineMap {
  Mat2 linear = Mat2::Identity();
  Vec2 translation = Vec2::Zero();

  static AffineMap identity() { return {}; }
  static AffineMap translation_only(const Vec2& t) { return {Mat2::Identity(), t}; }

  Vec2 operator()(const Vec2& x) const { return linear * x + translation; }

  LandmarkSet operator()(const LandmarkSet& s) const {
    std::vector<Vec2> out;
    out.reserve(s.size());
    for (const auto& p : s) out.push_back((*this)(p));
    return LandmarkSet(std::move(out));
  }

  /// (this ∘ inner)(x) = this(inner(x)).
  AffineMap compose(const AffineMap& inner) const {
    return {linear * inner.linear, linear * inner.translation + translation};
  }

  AffineMap inverse() const {
    const double det = linear.determinant();
    if (std::abs(det) < 1e-12) throw DegenerateError("affine map is not invertible");
    const Mat2 inv = linear.inverse();
    return {inv, -(inv * translation)};
  }

  bool is_finite() const { return linear.allFinite() && translation.allFinite(); }
};

/// Single-channel H x W raster, row-major.
class Heatmap {
 public:
  Heatmap() = default;
  Heatmap(int height, int width, double fill = 0.0)
      : height_(height), width_(width),
        data_(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill) {
    if (height < 1 || width < 1) throw InvalidArgument("heatmap resolution must be positive");
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& at(int i, int j) { return data_[index(i, j)]; }
  double at(int i, int j) const { return data_[index(i, j)]; }
  double& operator[](std::size_t k) { return data_[k]; }
  double operator[](std::size_t k) const { return data_[k]; }
  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  double sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
  }
  double max() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, v);
    return m;
  }
  double min() const {
    double m = data_.empty() ? 0.0 : data_.front();
    for (double v : data_) m = std::min(m, v);
    return m;
  }

  bool is_normalized(double tol = 1e-6) const { return std::abs(sum() - 1.0) <= tol; }

  void normalize() {
    const double s = sum();
    if (!(s > 0.0)) throw DegenerateError("heatmap has zero total mass");
    for (double& v : data_) v /= s;
  }

 private:
  std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(j);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

/// H x W x C raster with values in [0,1], interleaved channels.
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, double fill = 0.0)
      : height_(height), width_(width), channels_(channels),
        data_(static_cast<std::size_t>(height) * width * channels, fill) {
    if (height < 1 || width < 1) throw InvalidArgument("image resolution must be positive");
    if (channels != 1 && channels != 3) throw InvalidArgument("image must have 1 or 3 channels");
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }

  double& at(int i, int j, int c) { return data_[index(i, j, c)]; }
  double at(int i, int j, int c) const { return data_[index(i, j, c)]; }
  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  friend bool operator==(const Image& a, const Image& b) {
    return a.height_ == b.height_ && a.width_ == b.width_ && a.channels_ == b.channels_ && a.data_ == b.data_;
  }

 private:
  std::size_t index(int i, int j, int c) const {
    return (static_cast<std::size_t>(i) * width_ + j) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 1;
  std::vector<double> data_;
};

/// Weights of the two regularizers. Defaults: barycenter terms (1, 2, 4),
/// geometric l1 weight 0.001.
struct RegCoeffs {
  double translation = 1.0;
  double affine = 2.0;
  double residual = 4.0;
  double geometric_l1 = 0.001;

  /// Rejects negative weights; warns (stderr) when the barycenter weights
  /// are not ordered translation <= affine <= residual.
  void validate(std::ostream* warn = &std::cerr) const {
    if (translation < 0 || affine < 0 || residual < 0 || geometric_l1 < 0)
      throw InvalidArgument("regularizer coefficients must be non-negative");
    if (warn && !(translation <= affine && affine <= residual))
      *warn << "warning: barycenter coefficients are not ordered c1 <= c2 <= c3\n";
  }
};

}  // namespace brule

#endif  // BRULE_CORE_HPP
