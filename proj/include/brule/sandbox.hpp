#ifndef BRULE_SANDBOX_HPP
#define BRULE_SANDBOX_HPP

#include "brule/barycenter.hpp"
#include "brule/deform.hpp"
#include "brule/io.hpp"
#include "brule/parallel.hpp"
#include "brule/regularizers.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace brule {

// Outer eye corners in the 68-point scheme (0-based).
inline constexpr int kOuterLeftEye = 36;
inline constexpr int kOuterRightEye = 45;

namespace detail {

inline double eye_distance(const LandmarkSet& truth, int left, int right) {
  const auto n = static_cast<int>(truth.size());
  if (left < 0 || right < 0 || left >= n || right >= n) throw InvalidArgument("eye index out of range");
  const double d = (truth[static_cast<std::size_t>(left)] - truth[static_cast<std::size_t>(right)]).norm();
  if (!(d > 1e-6)) throw DegenerateError("inter-ocular distance is degenerate");
  return d;
}

}  // namespace detail

/// Mean point error divided by the distance between truth[left] and
/// truth[right], in percent. Points correspond by index.
inline double iod_error(const LandmarkSet& pred, const LandmarkSet& truth, int left_eye_idx, int right_eye_idx) {
  if (pred.size() != truth.size()) throw InvalidArgument("iod_error needs equally sized sets");
  const double iod = detail::eye_distance(truth, left_eye_idx, right_eye_idx);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += (pred[i] - truth[i]).norm();
  return 100.0 * acc / static_cast<double>(pred.size()) / iod;
}

/// W1(pred, truth) over the outer-eye-corner distance; needs no
/// correspondence between the sets.
inline double normalized_w1(const LandmarkSet& pred, const LandmarkSet& truth, int outer_left_idx = kOuterLeftEye,
                            int outer_right_idx = kOuterRightEye, const Solver& solver = {}) {
  const double d = detail::eye_distance(truth, outer_left_idx, outer_right_idx);
  return std::max(0.0, w1(pred, truth, solver)) / d;
}

/// A synthetic frontal face in the 68-point layout: jaw 0-16, brows
/// 17-26, nose 27-35, eyes 36-47, mouth 48-67. Spans roughly
/// [0.2, 0.8] x [0.25, 0.8].
inline LandmarkSet face_template() {
  std::vector<Vec2> p;
  p.reserve(68);
  const double pi = std::numbers::pi;
  for (int k = 0; k <= 16; ++k) p.emplace_back(0.5 - 0.3 * std::cos(pi * k / 16.0), 0.38 + 0.42 * std::sin(pi * k / 16.0));
  for (double x0 : {0.27, 0.55})
    for (int k = 0; k < 5; ++k) {
      const double u = k / 4.0;
      p.emplace_back(x0 + 0.18 * u, 0.30 - 0.04 * std::sin(pi * u));
    }
  for (int k = 0; k < 4; ++k) p.emplace_back(0.5, 0.38 + 0.055 * k);
  for (int k = 0; k < 5; ++k) p.emplace_back(0.44 + 0.03 * k, 0.60 + 0.012 * std::sin(pi * k / 4.0));
  // Eyes start at their image-left corner and run clockwise, so 36 and 45
  // are the outer corners.
  for (double cx : {0.36, 0.64})
    for (int k = 0; k < 6; ++k) {
      const double a = pi + k * pi / 3.0;
      p.emplace_back(cx + 0.06 * std::cos(a), 0.42 + 0.025 * std::sin(a));
    }
  for (int k = 0; k < 12; ++k) {
    const double a = pi + k * pi / 6.0;
    p.emplace_back(0.5 + 0.12 * std::cos(a), 0.70 + 0.05 * std::sin(a));
  }
  for (int k = 0; k < 8; ++k) {
    const double a = pi + k * pi / 4.0;
    p.emplace_back(0.5 + 0.08 * std::cos(a), 0.70 + 0.02 * std::sin(a));
  }
  return LandmarkSet(std::move(p));
}

struct SyntheticFaceConfig {
  LandmarkSet face = face_template();
  int n_samples = 50;
  DeformSampler sampler{};
  double noise_std = 0.005;  // per-coordinate Gaussian jitter
  std::uint64_t seed = 0;

  void validate() const {
    if (n_samples < 1) throw InvalidArgument("n_samples must be at least 1");
    if (!(noise_std >= 0.0)) throw InvalidArgument("noise_std must be non-negative");
    sampler.validate();
  }
};

struct SyntheticSample {
  LandmarkSet truth;
  WarpSpec warp;
};

/// Each sample is warp_points(g, template) plus jitter, g drawn from the
/// sampler. One mt19937_64 stream seeded with `seed` drives everything.
inline std::vector<SyntheticSample> generate_synthetic(const SyntheticFaceConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<std::size_t>(config.n_samples));
  for (int k = 0; k < config.n_samples; ++k) {
    WarpSpec g = sample_warp(config.sampler, rng);
    std::vector<Vec2> pts = warp_points(g, config.face).points();
    if (config.noise_std > 0.0)
      for (auto& p : pts) {
        const double dx = noise(rng);
        p += config.noise_std * Vec2(dx, noise(rng));
      }
    out.push_back({LandmarkSet(std::move(pts)), std::move(g)});
  }
  return out;
}

inline std::vector<LandmarkSet> truths(const std::vector<SyntheticSample>& data) {
  std::vector<LandmarkSet> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(s.truth);
  return out;
}

struct AblationConfig {
  bool enable_flat = true;
  bool enable_geo = true;
  int steps = 500;
  double learning_rate = 0.01;  // stable below ~0.05 at 64x64, sigma 0.02
  RegCoeffs coeffs{};
  HeatmapParams heatmap{};
  int eval_every = 10;
  AffineCentering centering = AffineCentering::com;
  int outer_left_idx = kOuterLeftEye;
  int outer_right_idx = kOuterRightEye;
  unsigned threads = 1;

  void validate() const {
    if (steps < 1) throw InvalidArgument("steps must be at least 1");
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
    if (eval_every < 1) throw InvalidArgument("eval_every must be at least 1");
    coeffs.validate(nullptr);
    heatmap.validate();
  }
};

struct TrajectoryRow {
  int step = 0;
  double w1 = 0.0;      // mean normalized W1 of the warped-frame predictions to the truths
  double r_flat = 0.0;  // mean R_flat over the warped-frame predictions
  double r_geo = 0.0;   // mean R_g over samples
};

struct AblationResult {
  std::vector<TrajectoryRow> trajectory;
  std::vector<LandmarkSet> predictions;  // per-sample warped-frame parameters
  LandmarkSet canonical;                 // shared original-frame parameters
  double barycenter_w1 = 0.0;            // mean normalized W1 of the constant barycenter predictor
};

/// Desk-scale analog of the encoder update. Every sample k owns a
/// prediction w_k for its warped image; one shared prediction o stands for
/// the encoder's output on the un-warped template image. Both start at the
/// barycenter. Per step, with plain gradient descent:
///   w_k -= lr * (grad R_flat(w_k) + grad_w R_g(w_k, o; g_k))
///   o   -= lr * (grad R_flat(o) + mean_k grad_o R_g(w_k, o; g_k))
/// with each disabled loss dropped. R_g's heatmap target g_k render(o) is a
/// stop-gradient, and the edge graph of w_k is rebuilt every step.
inline AblationResult run_ablation(const std::vector<SyntheticSample>& data, const LandmarkSet& bary,
                                   const AblationConfig& config) {
  config.validate();
  if (data.empty()) throw InvalidArgument("ablation needs at least one sample");
  const std::size_t k_count = data.size();
  const std::size_t n = bary.size();
  for (const auto& s : data)
    if (s.truth.size() != n) throw InvalidArgument("sample and barycenter sizes differ");

  AblationResult res;
  std::vector<std::vector<Vec2>> w(k_count, bary.points());
  std::vector<Vec2> o = bary.points();
  std::vector<double> r_flat(k_count), r_geo(k_count), metric(k_count);

  for (std::size_t k = 0; k < k_count; ++k)
    res.barycenter_w1 += normalized_w1(bary, data[k].truth, config.outer_left_idx, config.outer_right_idx);
  res.barycenter_w1 /= static_cast<double>(k_count);

  auto evaluate = [&](int step) {
    const LandmarkSet canon(o);
    parallel_for(k_count, config.threads, [&](std::size_t k) {
      const LandmarkSet wk(w[k]);
      metric[k] = normalized_w1(wk, data[k].truth, config.outer_left_idx, config.outer_right_idx);
      r_flat[k] = barycenter_reg(wk, bary, config.coeffs, {}, config.centering).total;
      r_geo[k] = geometric_reg(wk, canon, data[k].warp, config.heatmap, config.coeffs);
    });
    TrajectoryRow row{step, 0.0, 0.0, 0.0};
    for (std::size_t k = 0; k < k_count; ++k) {
      row.w1 += metric[k];
      row.r_flat += r_flat[k];
      row.r_geo += r_geo[k];
    }
    row.w1 /= static_cast<double>(k_count);
    row.r_flat /= static_cast<double>(k_count);
    row.r_geo /= static_cast<double>(k_count);
    res.trajectory.push_back(row);
  };

  auto check_finite = [&](int step) {
    auto bad = [](const std::vector<Vec2>& v) {
      for (const auto& p : v)
        if (!p.allFinite()) return true;
      return false;
    };
    bool diverged = bad(o);
    for (const auto& wk : w) diverged = diverged || bad(wk);
    if (diverged) throw Error("ablation diverged at step " + std::to_string(step) + " (non-finite coordinates)");
  };

  evaluate(0);
  std::vector<std::vector<Vec2>> grad_o_parts(k_count);
  for (int step = 1; step <= config.steps; ++step) {
    if (config.enable_flat || config.enable_geo) {
      const LandmarkSet canon(o);
      std::vector<Vec2> grad_o(n, Vec2::Zero());
      if (config.enable_flat) grad_o = grad_barycenter_reg(canon, bary, config.coeffs, {}, config.centering);
      parallel_for(k_count, config.threads, [&](std::size_t k) {
        const LandmarkSet wk(w[k]);
        std::vector<Vec2> g(n, Vec2::Zero());
        if (config.enable_flat) g = grad_barycenter_reg(wk, bary, config.coeffs, {}, config.centering);
        grad_o_parts[k].assign(n, Vec2::Zero());
        if (config.enable_geo) {
          const auto rg = grad_geometric_reg(wk, canon, data[k].warp, config.heatmap, config.coeffs);
          for (std::size_t i = 0; i < n; ++i) g[i] += rg.pred_on_warped[i];
          grad_o_parts[k] = rg.pred_original;
        }
        for (std::size_t i = 0; i < n; ++i) w[k][i] -= config.learning_rate * g[i];
      });
      if (config.enable_geo) {
        const double inv_k = 1.0 / static_cast<double>(k_count);
        for (std::size_t k = 0; k < k_count; ++k)
          for (std::size_t i = 0; i < n; ++i) grad_o[i] += inv_k * grad_o_parts[k][i];
      }
      for (std::size_t i = 0; i < n; ++i) o[i] -= config.learning_rate * grad_o[i];
      check_finite(step);
    }
    if (step % config.eval_every == 0 || step == config.steps) evaluate(step);
  }
  for (auto& wk : w) res.predictions.emplace_back(std::move(wk));
  res.canonical = LandmarkSet(std::move(o));
  return res;
}

/// CSV with header `step,w1,r_flat,r_geo`, values at 17 significant digits.
inline std::string trajectory_csv(const std::vector<TrajectoryRow>& rows) {
  std::string out = "step,w1,r_flat,r_geo\n";
  for (const auto& r : rows)
    out += std::to_string(r.step) + "," + detail::format_double(r.w1) + "," + detail::format_double(r.r_flat) + "," +
           detail::format_double(r.r_geo) + "\n";
  return out;
}

/// barycenter_sample_curve over the synthetic truths.
inline std::vector<SampleCurveRow> run_sample_size_study(const std::vector<SyntheticSample>& data,
                                                         const std::vector<std::size_t>& subset_sizes, int repeats,
                                                         std::uint64_t seed, const BarycenterConfig& config = {}) {
  return barycenter_sample_curve(truths(data), subset_sizes, repeats, seed, config);
}

inline std::string sample_curve_csv(const std::vector<SampleCurveRow>& rows) {
  std::string out = "subset_size,mean_w2,std_w2\n";
  for (const auto& r : rows)
    out += std::to_string(r.subset_size) + "," + detail::format_double(r.mean_w2) + "," +
           detail::format_double(r.std_w2) + "\n";
  return out;
}

}  // namespace brule

#endif  // BRULE_SANDBOX_HPP
