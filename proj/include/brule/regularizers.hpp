#ifndef BRULE_REGULARIZERS_HPP
#define BRULE_REGULARIZERS_HPP

#include "brule/deform.hpp"
#include "brule/heatmap.hpp"
#include "brule/transport.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <ostream>
#include <string>
#include <vector>

namespace brule {

/// Where the affine operator of R_flat acts. `com` fits A on coordinates
/// re-centered at each set's center of mass and restores the target's
/// center afterwards; `raw` fits on coordinates as given.
enum class AffineCentering { raw, com };

inline std::string to_string(AffineCentering c) { return c == AffineCentering::raw ? "raw" : "com"; }

inline AffineCentering parse_centering(const std::string& s) {
  if (s == "raw") return AffineCentering::raw;
  if (s == "com") return AffineCentering::com;
  throw InvalidArgument("affine centering must be 'raw' or 'com', got '" + s + "'");
}

/// Translation aligning the centers of mass: com(bary) - com(x).
inline AffineMap fit_translation(const LandmarkSet& x, const LandmarkSet& bary) {
  return AffineMap::translation_only(center_of_mass(bary) - center_of_mass(x));
}

namespace detail {

inline Vec2 weighted_center(const LandmarkSet& s, const Vector& w) {
  Vec2 c = Vec2::Zero();
  for (std::size_t i = 0; i < s.size(); ++i) c += w(static_cast<Eigen::Index>(i)) * s[i];
  return c / w.sum();
}

}  // namespace detail

/// Closed-form minimizer of sum_ij P_ij |A y_i - z_j|^2 over 2x2 matrices,
/// A = (sum_ij P_ij z_j y_i^T) (sum_i r_i y_i y_i^T)^{-1} with r = P 1.
/// With `com` centering y and z are the inputs minus their plan-weighted
/// centers and the returned map restores the target center; with `raw`
/// the translation is zero.
inline AffineMap fit_affine_map(const LandmarkSet& tx, const LandmarkSet& bary, const TransportPlan& plan,
                                AffineCentering centering = AffineCentering::com) {
  if (plan.rows() != static_cast<Eigen::Index>(tx.size()) || plan.cols() != static_cast<Eigen::Index>(bary.size()))
    throw InvalidArgument("plan shape does not match the point sets");
  const Vector r = plan.weights.rowwise().sum();
  const Vector c = plan.weights.colwise().sum().transpose();
  Vec2 cy = Vec2::Zero(), cz = Vec2::Zero();
  if (centering == AffineCentering::com) {
    cy = detail::weighted_center(tx, r);
    cz = detail::weighted_center(bary, c);
  }
  Mat2 gram = Mat2::Zero(), cross = Mat2::Zero();
  for (std::size_t i = 0; i < tx.size(); ++i) {
    const Vec2 y = tx[i] - cy;
    const auto ii = static_cast<Eigen::Index>(i);
    gram += r(ii) * y * y.transpose();
    Vec2 pz = Vec2::Zero();
    for (std::size_t j = 0; j < bary.size(); ++j) pz += plan.weights(ii, static_cast<Eigen::Index>(j)) * (bary[j] - cz);
    cross += pz * y.transpose();
  }
  const Eigen::SelfAdjointEigenSolver<Mat2> eig(gram);
  const double lo = eig.eigenvalues()(0), hi = eig.eigenvalues()(1);
  if (!(lo > 0.0) || hi / lo >= 1e12)
    throw DegenerateError("affine fit is degenerate: Gram matrix is singular (collinear or coincident points)");
  // Written as I + (cross - G) G^{-1} so a perfect self-match gives exactly I.
  const Mat2 a = Mat2::Identity() + (cross - gram) * gram.inverse();
  return {a, cz - a * cy};
}

/// Linear part of fit_affine_map.
inline Mat2 fit_affine(const LandmarkSet& tx, const LandmarkSet& bary, const TransportPlan& plan,
                       AffineCentering centering = AffineCentering::com) {
  return fit_affine_map(tx, bary, plan, centering).linear;
}

struct BarycenterRegReport {
  double term_translation = 0.0;  // W2^2(x, Tx) = |t|^2
  double term_affine = 0.0;       // W2^2(Tx, A Tx), identity coupling
  double term_residual = 0.0;     // W2^2(A Tx, bary)
  double total = 0.0;
  Vec2 fitted_translation = Vec2::Zero();
  Mat2 fitted_affine = Mat2::Identity();
  AffineMap affine_map;         // full map applied to Tx (linear part = fitted_affine)
  TransportPlan plan_affine;    // Tx -> bary, used to fit A
  TransportPlan plan_residual;  // A Tx -> bary
};

/// R_flat(x) = c1 W2^2(x, Tx) + c2 W2^2(Tx, A Tx) + c3 W2^2(A Tx, bary).
/// Point counts may differ (all plans are general couplings); a note is
/// written to `warn` when they do.
inline BarycenterRegReport barycenter_reg(const LandmarkSet& x, const LandmarkSet& bary, const RegCoeffs& coeffs = {},
                                          const Solver& solver = {},
                                          AffineCentering centering = AffineCentering::com,
                                          std::ostream* warn = nullptr) {
  coeffs.validate(warn);
  if (warn && x.size() != bary.size())
    *warn << "warning: barycenter_reg on sets of different sizes (" << x.size() << " vs " << bary.size()
          << "); the affine term pairs points through the transport plan\n";
  BarycenterRegReport rep;
  rep.fitted_translation = fit_translation(x, bary).translation;
  const LandmarkSet tx = x.translated(rep.fitted_translation);
  rep.term_translation = rep.fitted_translation.squaredNorm();

  rep.plan_affine = solve(tx, bary, solver).plan;
  rep.affine_map = fit_affine_map(tx, bary, rep.plan_affine, centering);
  rep.fitted_affine = rep.affine_map.linear;
  const LandmarkSet atx = rep.affine_map(tx);
  for (std::size_t i = 0; i < tx.size(); ++i) rep.term_affine += (atx[i] - tx[i]).squaredNorm();
  rep.term_affine /= static_cast<double>(tx.size());

  auto residual = solve(atx, bary, solver);
  rep.plan_residual = std::move(residual.plan);
  rep.term_residual = std::max(0.0, residual.cost);
  rep.total = coeffs.translation * rep.term_translation + coeffs.affine * rep.term_affine +
              coeffs.residual * rep.term_residual;
  return rep;
}

/// Gradient of R_flat with the affine map and the residual plan frozen at
/// the values in `rep`; the translation t = com(bary) - com(x) stays live.
inline std::vector<Vec2> grad_barycenter_reg(const LandmarkSet& x, const LandmarkSet& bary,
                                             const BarycenterRegReport& rep, const RegCoeffs& coeffs = {}) {
  const std::size_t n = x.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  const Mat2& a = rep.affine_map.linear;
  const Mat2 a_minus_i = a - Mat2::Identity();
  const Vec2 t = center_of_mass(bary) - center_of_mass(x);

  // Gradient with respect to Tx_k, then through Tx_k = x_k - com(x) + com(bary).
  std::vector<Vec2> g_tx(n);
  Vec2 mean = Vec2::Zero();
  for (std::size_t k = 0; k < n; ++k) {
    const Vec2 tx = x[k] + t;
    const Vec2 atx = rep.affine_map(tx);
    Vec2 pull = Vec2::Zero();
    const auto kk = static_cast<Eigen::Index>(k);
    for (std::size_t j = 0; j < bary.size(); ++j) {
      const double w = rep.plan_residual.weights(kk, static_cast<Eigen::Index>(j));
      if (w != 0.0) pull += w * (atx - bary[j]);
    }
    g_tx[k] = coeffs.affine * 2.0 * inv_n * a_minus_i.transpose() * (atx - tx) +
              coeffs.residual * 2.0 * a.transpose() * pull;
    mean += g_tx[k];
  }
  mean *= inv_n;
  const Vec2 g_t = -coeffs.translation * 2.0 * inv_n * t;
  std::vector<Vec2> grad(n);
  for (std::size_t k = 0; k < n; ++k) grad[k] = g_t + g_tx[k] - mean;
  return grad;
}

inline std::vector<Vec2> grad_barycenter_reg(const LandmarkSet& x, const LandmarkSet& bary, const RegCoeffs& coeffs = {},
                                             const Solver& solver = {},
                                             AffineCentering centering = AffineCentering::com) {
  return grad_barycenter_reg(x, bary, barycenter_reg(x, bary, coeffs, solver, centering), coeffs);
}

struct GeometricRegReport {
  double cross_entropy = 0.0;  // H[render(pred_on_warped) | warp_heatmap(g, render(pred_original))]
  double l1 = 0.0;             // c1^g * sum_i |pred_on_warped_i - g(pred_original_i)|_1
  double total = 0.0;
};

namespace detail {

inline void check_geometric_inputs(const LandmarkSet& w, const LandmarkSet& o) {
  if (w.size() != o.size()) throw InvalidArgument("geometric_reg needs equally sized predictions");
}

inline Heatmap geometric_target(const LandmarkSet& o, const WarpSpec& g, const HeatmapParams& params) {
  return warp_heatmap(g, render_heatmap(o, params, true));
}

}  // namespace detail

/// R_g(w, o) = H[render(w) | g render(o)] + c1^g |w - g(o)|_1.
inline GeometricRegReport geometric_reg_report(const LandmarkSet& pred_on_warped, const LandmarkSet& pred_original,
                                               const WarpSpec& g, const HeatmapParams& params,
                                               const RegCoeffs& coeffs = {}) {
  detail::check_geometric_inputs(pred_on_warped, pred_original);
  GeometricRegReport rep;
  rep.cross_entropy = heatmap_cross_entropy(render_heatmap(pred_on_warped, params, true),
                                            detail::geometric_target(pred_original, g, params));
  const LandmarkSet go = warp_points(g, pred_original);
  double l1 = 0.0;
  for (std::size_t i = 0; i < go.size(); ++i) l1 += (pred_on_warped[i] - go[i]).cwiseAbs().sum();
  rep.l1 = coeffs.geometric_l1 * l1;
  rep.total = rep.cross_entropy + rep.l1;
  return rep;
}

inline double geometric_reg(const LandmarkSet& pred_on_warped, const LandmarkSet& pred_original, const WarpSpec& g,
                            const HeatmapParams& params, const RegCoeffs& coeffs = {}) {
  return geometric_reg_report(pred_on_warped, pred_original, g, params, coeffs).total;
}

inline constexpr double kL1DeadZone = 1e-8;

struct GeometricRegGrad {
  std::vector<Vec2> pred_on_warped;
  std::vector<Vec2> pred_original;  // l1 term only; the heatmap target is a stop-gradient
};

/// Gradient of R_g with the edge graph of pred_on_warped frozen (its own
/// k-NN graph unless `graph` is given). The warped heatmap of pred_original
/// is treated as a fixed target, as a supervision signal would be, so only
/// the l1 term reaches pred_original. Coordinate differences within 1e-8
/// count as matched (sign 0): the clamped cross-entropy keeps a ~1e-9
/// gradient at a perfect match (pixels under the floor), and without the
/// dead zone that drift would start l1 chatter of size lr * c1^g.
inline GeometricRegGrad grad_geometric_reg(const LandmarkSet& pred_on_warped, const LandmarkSet& pred_original,
                                           const WarpSpec& g, const HeatmapParams& params, const RegCoeffs& coeffs = {},
                                           const EdgeGraph* graph = nullptr, const Heatmap* target = nullptr) {
  detail::check_geometric_inputs(pred_on_warped, pred_original);
  GeometricRegGrad out;
  const Heatmap own = target ? Heatmap{} : detail::geometric_target(pred_original, g, params);
  const EdgeGraph own_graph = graph ? EdgeGraph{} : knn_graph(pred_on_warped, params.k);
  out.pred_on_warped = grad_heatmap_points(pred_on_warped, graph ? *graph : own_graph, params, target ? *target : own);
  out.pred_original.assign(pred_original.size(), Vec2::Zero());
  auto sign = [](double v) { return static_cast<double>((v > kL1DeadZone) - (v < -kL1DeadZone)); };
  for (std::size_t i = 0; i < pred_original.size(); ++i) {
    const Vec2 d = pred_on_warped[i] - g.forward(pred_original[i]);
    const Vec2 s(sign(d.x()), sign(d.y()));
    out.pred_on_warped[i] += coeffs.geometric_l1 * s;
    out.pred_original[i] = -coeffs.geometric_l1 * g.jacobian(pred_original[i]).transpose() * s;
  }
  return out;
}

}  // namespace brule

#endif  // BRULE_REGULARIZERS_HPP
