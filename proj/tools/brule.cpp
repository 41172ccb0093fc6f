// brule: command-line front end for the brule library.
//
// Exit codes: 0 success, 1 usage error (bad flags or parameter values),
// 2 data error (unreadable or invalid inputs, numerical failure).
// Every file output is written atomically and gets a sibling
// `<output>.manifest.json` recording the resolved configuration, the
// seed, and SHA-256 digests of all inputs. `brule replay --manifest M`
// re-runs the recorded invocation after checking the digests.

#include "brule/brule.hpp"

#include "CLI11.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace brule;

namespace {

constexpr const char* kToolVersion = "0.1.0";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Runs a validation step, reclassifying InvalidArgument as a usage error.
template <typename Fn>
void check_usage(Fn&& fn) {
  try {
    fn();
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

/// Output paths may name directories that do not exist yet.
void write_output(const fs::path& path, const std::string& data) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, data);
}

std::string file_digest(const std::string& path) { return "sha256:" + sha256_hex(read_text_file(path)); }

struct Run {
  std::string subcommand;
  std::vector<std::string> argv;  // everything after the program name
  unsigned threads = 1;
  json config = json::object();
  json seed = nullptr;
  json inputs = json::object();

  void input(const std::string& path) { inputs[path] = file_digest(path); }

  json manifest() const {
    return json{{"subcommand", subcommand}, {"config", config},       {"seed", seed},
                {"tool_version", kToolVersion}, {"input_digests", inputs}, {"argv", argv}};
  }

  void write(const std::string& path, const std::string& data) const {
    write_output(path, data);
    write_output(path + ".manifest.json", manifest().dump(2) + "\n");
  }
  void write_json(const std::string& path, const json& j) const { write(path, j.dump(2) + "\n"); }
};

std::string dump(const json& j) { return j.dump(2) + "\n"; }

LandmarkSet read_landmarks(Run& run, const std::string& path, double pts_side) {
  run.input(path);
  return load_landmarks(path, pts_side);
}

Solver make_solver(const std::string& method, const SinkhornParams& p) {
  if (method == "exact") return Solver::exact();
  check_usage([&] { p.validate(); });
  return Solver::sinkhorn(p);
}

json solver_json(const std::string& method, const SinkhornParams& p) {
  json j{{"method", method}};
  if (method == "sinkhorn") j.update({{"eps", p.epsilon}, {"max_iters", p.max_iters}, {"tol", p.tolerance}});
  return j;
}

// Shared option groups.

struct SolverOpts {
  std::string method = "exact";
  SinkhornParams sinkhorn{};

  void add(CLI::App* sub) {
    sub->add_option("--method", method, "OT solver")->check(CLI::IsMember({"exact", "sinkhorn"}));
    sub->add_option("--eps", sinkhorn.epsilon, "Sinkhorn entropic regularization (squared normalized units)");
    sub->add_option("--sinkhorn-iters", sinkhorn.max_iters, "Sinkhorn iteration cap");
    sub->add_option("--sinkhorn-tol", sinkhorn.tolerance, "Sinkhorn marginal tolerance");
  }
  Solver solver() const { return make_solver(method, sinkhorn); }
  json to_json() const { return solver_json(method, sinkhorn); }
};

struct SamplerOpts {
  DeformSampler s{};
  double rotation_deg = 15.0;

  void add(CLI::App* sub) {
    sub->add_option("--rotation-deg", rotation_deg, "max |rotation| in degrees");
    sub->add_option("--scale-min", s.scale_min, "min isotropic scale");
    sub->add_option("--scale-max", s.scale_max, "max isotropic scale");
    sub->add_option("--translation", s.translation_range, "max |translation| per axis, normalized units");
    sub->add_option("--elastic-grid", s.elastic_grid_size, "elastic control grid size G");
    sub->add_option("--alpha-min", s.alpha_min, "min elastic strength");
    sub->add_option("--alpha-max", s.alpha_max, "max elastic strength");
  }
  DeformSampler sampler(std::uint64_t seed) const {
    DeformSampler out = s;
    out.rotation_range = rotation_deg * std::numbers::pi / 180.0;
    out.seed = seed;
    check_usage([&] { out.validate(); });
    return out;
  }
};

struct HeatmapOpts {
  int res = HeatmapParams{}.height;
  double sigma = HeatmapParams{}.sigma;
  int k = HeatmapParams{}.k;

  void add(CLI::App* sub) {
    sub->add_option("--res", res, "heatmap side in pixels");
    sub->add_option("--sigma", sigma, "Gaussian width, normalized units");
    sub->add_option("--k", k, "nearest neighbors per landmark in the skeleton graph");
  }
  HeatmapParams params() const {
    HeatmapParams p{res, res, sigma, k};
    check_usage([&] { p.validate(); });
    return p;
  }
};

struct CoeffOpts {
  RegCoeffs c{};

  void add(CLI::App* sub) {
    sub->add_option("--c1", c.translation, "R_flat translation weight");
    sub->add_option("--c2", c.affine, "R_flat affine weight");
    sub->add_option("--c3", c.residual, "R_flat residual weight");
    sub->add_option("--cg", c.geometric_l1, "R_g l1 weight");
  }
};

// transport

struct TransportOpts {
  std::string source, target, out;
  double pts_side = 256.0;
  SolverOpts solver;
};

int run_transport(Run& run, const TransportOpts& o) {
  const Solver solver = o.solver.solver();
  run.config = {{"source", o.source}, {"target", o.target}, {"pts_side", o.pts_side}, {"solver", o.solver.to_json()}};
  const auto src = read_landmarks(run, o.source, o.pts_side);
  const auto tgt = read_landmarks(run, o.target, o.pts_side);
  const auto res = solve(src, tgt, solver);
  json j{{"cost", res.cost},
         {"converged", res.converged},
         {"iterations", res.iterations},
         {"plan", to_json(res.plan)}};
  if (o.out.empty()) {
    j["manifest"] = run.manifest();
    std::cout << dump(j);
  } else {
    run.write_json(o.out, j);
  }
  return 0;
}

// barycenter

struct BarycenterOpts {
  std::string dir, out, curve_out, init = "first";
  double pts_side = 256.0;
  BarycenterConfig config{};
  SolverOpts solver;
  std::vector<std::size_t> subset_sizes;
  int repeats = 10;
  std::uint64_t seed = 0;
};

std::vector<std::string> landmark_files(const std::string& dir) {
  if (!fs::is_directory(dir)) throw Error("landmark directory not found: " + dir);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto name = e.path().filename().string();
    if (name.ends_with(".manifest.json")) continue;
    const auto ext = e.path().extension();
    if (ext == ".json" || ext == ".pts") files.push_back(e.path().string());
  }
  if (files.empty()) throw Error("no landmark files found in " + dir);
  std::sort(files.begin(), files.end());
  return files;
}

int run_barycenter(Run& run, BarycenterOpts o) {
  o.config.solver = o.solver.solver();
  o.config.init = o.init == "mean" ? BarycenterConfig::Init::mean_of_samples : BarycenterConfig::Init::first_sample;
  o.config.threads = run.threads;
  check_usage([&] { o.config.validate(); });
  const bool curve = !o.subset_sizes.empty();
  if (curve && o.repeats < 1) throw UsageError("--repeats must be positive");
  std::string curve_out = o.curve_out;
  if (curve && curve_out.empty()) curve_out = fs::path(o.out).replace_extension(".curve.csv").string();

  run.config = {{"landmarks_dir", o.dir},
                {"pts_side", o.pts_side},
                {"max_iters", o.config.max_outer_iters},
                {"tol", o.config.convergence_tol},
                {"init", o.init},
                {"solver", o.solver.to_json()}};
  if (curve) {
    run.config["subset_curve"] = o.subset_sizes;
    run.config["repeats"] = o.repeats;
    run.seed = o.seed;
  }

  std::vector<LandmarkSet> samples;
  for (const auto& f : landmark_files(o.dir)) samples.push_back(read_landmarks(run, f, o.pts_side));
  const auto res = compute_barycenter(samples, o.config);
  json j = to_json(res.barycenter, /*clamp=*/true);
  j["history"] = res.history;
  j["iterations"] = res.iterations;
  j["converged"] = res.converged;
  j["n_samples"] = samples.size();
  run.write_json(o.out, j);

  if (curve) {
    const auto rows = barycenter_sample_curve(samples, o.subset_sizes, o.repeats, o.seed, o.config);
    run.write(curve_out, sample_curve_csv(rows));
  }
  return 0;
}

// heatmap

struct HeatmapCmdOpts {
  std::string landmarks, out, json_out;
  double pts_side = 256.0;
  HeatmapOpts heatmap;
};

int run_heatmap(Run& run, const HeatmapCmdOpts& o) {
  const auto params = o.heatmap.params();
  run.config = {{"landmarks", o.landmarks}, {"pts_side", o.pts_side}, {"heatmap", to_json(params)}};
  const auto s = read_landmarks(run, o.landmarks, o.pts_side);
  const auto hm = render_heatmap(s, params);
  const auto img = heatmap_to_image(hm);
  run.write(o.out, has_extension(o.out, ".pgm") ? encode_pgm(img, 16) : encode_png(img, 16));
  if (!o.json_out.empty()) run.write_json(o.json_out, to_json(hm));
  return 0;
}

// deform

struct DeformOpts {
  std::string image, landmarks, prefix;
  double pts_side = 256.0;
  std::uint64_t seed = 0;
  int bit_depth = 8;
  SamplerOpts sampler;
};

int run_deform(Run& run, const DeformOpts& o) {
  if (o.image.empty() && o.landmarks.empty()) throw UsageError("deform needs --image, --landmarks, or both");
  const auto sampler = o.sampler.sampler(o.seed);
  run.config = {{"image", o.image},
                {"landmarks", o.landmarks},
                {"pts_side", o.pts_side},
                {"bit_depth", o.bit_depth},
                {"sampler", to_json(sampler)}};
  run.seed = o.seed;

  std::optional<LandmarkSet> pts;
  std::optional<Image> img;
  if (!o.landmarks.empty()) pts = read_landmarks(run, o.landmarks, o.pts_side);
  if (!o.image.empty()) {
    run.input(o.image);
    img = load_image(o.image);
  }

  const WarpSpec g = sample_warp(sampler);
  if (pts) {
    const auto warped = warp_points(g, *pts);
    json j = to_json(warped);
    j["in_unit_square"] = warped.in_unit_square();
    write_output(o.prefix + ".json", dump(j));
  }
  if (img) {
    const std::string ext = has_extension(o.image, ".pgm") ? ".pgm" : ".png";
    const auto out = warp_image(g, *img);
    write_output(o.prefix + ext,
                      ext == ".pgm" ? encode_pgm(out, o.bit_depth) : encode_png(out, o.bit_depth));
  }
  write_output(o.prefix + ".warp.json", dump(to_json(g)));
  write_output(o.prefix + ".manifest.json", dump(run.manifest()));
  return 0;
}

// reg-eval

struct RegEvalOpts {
  std::string landmarks, barycenter, warped_landmarks, image, warped_image, out, centering = "com";
  double pts_side = 256.0;
  std::optional<std::uint64_t> warp_seed;
  SolverOpts solver;
  CoeffOpts coeffs;
  HeatmapOpts heatmap;
  SamplerOpts sampler;
};

json report_json(const BarycenterRegReport& r) {
  return json{{"term_translation", r.term_translation},
              {"term_affine", r.term_affine},
              {"term_residual", r.term_residual},
              {"total", r.total},
              {"translation", {r.fitted_translation.x(), r.fitted_translation.y()}},
              {"affine", to_json(r.affine_map)}};
}

int run_reg_eval(Run& run, const RegEvalOpts& o) {
  const Solver solver = o.solver.solver();
  check_usage([&] { o.coeffs.c.validate(&std::cerr); });
  const auto centering = parse_centering(o.centering);
  const bool geo = o.warp_seed.has_value();
  if (!geo && (!o.image.empty() || !o.warped_landmarks.empty() || !o.warped_image.empty()))
    throw UsageError("--image, --warped-landmarks and --warped-image need --warp-seed");
  if (!o.warped_image.empty() && o.image.empty()) throw UsageError("--warped-image needs --image");
  std::optional<DeformSampler> sampler;
  if (geo) sampler = o.sampler.sampler(*o.warp_seed);
  HeatmapParams params = o.heatmap.params();

  run.config = {{"landmarks", o.landmarks},
                {"barycenter", o.barycenter},
                {"pts_side", o.pts_side},
                {"affine_centering", o.centering},
                {"coeffs", to_json(o.coeffs.c)},
                {"solver", o.solver.to_json()}};
  const auto x = read_landmarks(run, o.landmarks, o.pts_side);
  const auto bary = read_landmarks(run, o.barycenter, o.pts_side);
  const auto flat = barycenter_reg(x, bary, o.coeffs.c, solver, centering, &std::cerr);
  json j{{"barycenter_reg", report_json(flat)}, {"total", flat.total}};

  if (geo) {
    std::optional<Image> img;
    if (!o.image.empty()) {
      run.input(o.image);
      img = load_image(o.image);
      // Heatmaps are rendered on the image's own grid.
      params.height = img->height();
      params.width = img->width();
    }
    run.seed = *o.warp_seed;
    run.config["sampler"] = to_json(*sampler);
    run.config["heatmap"] = to_json(params);
    run.config["image"] = o.image;
    run.config["warped_landmarks"] = o.warped_landmarks;
    run.config["warped_image"] = o.warped_image;

    const WarpSpec g = sample_warp(*sampler);
    const auto on_warped =
        o.warped_landmarks.empty() ? warp_points(g, x) : read_landmarks(run, o.warped_landmarks, o.pts_side);
    const auto r = geometric_reg_report(on_warped, x, g, params, o.coeffs.c);
    j["geometric_reg"] = {{"cross_entropy", r.cross_entropy}, {"l1", r.l1}, {"total", r.total}};
    j["warp"] = to_json(g);
    j["total"] = flat.total + r.total;
    if (img && !o.warped_image.empty()) run.write(o.warped_image, has_extension(o.warped_image, ".pgm")
                                                                      ? encode_pgm(warp_image(g, *img))
                                                                      : encode_png(warp_image(g, *img)));
  }

  if (o.out.empty()) {
    j["manifest"] = run.manifest();
    std::cout << dump(j);
  } else {
    run.write_json(o.out, j);
  }
  return 0;
}

// ablate

struct AblateOpts {
  std::string config_path, data, barycenter, out, predictions_out, centering = "com";
  AblationConfig ac{};
  CoeffOpts coeffs;
  HeatmapOpts heatmap;

  // Options whose explicit values override the config file.
  CLI::Option *enable_flat{}, *enable_geo{}, *steps{}, *lr{}, *eval_every{}, *centering_opt{}, *left{}, *right{};
  CLI::Option *c1{}, *c2{}, *c3{}, *cg{}, *res{}, *sigma{}, *k{};
};

int run_ablate(Run& run, const AblateOpts& o) {
  AblationConfig ac{};
  if (!o.config_path.empty()) {
    run.input(o.config_path);
    merge_json(read_json_file(o.config_path), ac);
  }
  auto set = [](const CLI::Option* opt, auto& dst, const auto& src) {
    if (opt->count() > 0) dst = src;
  };
  set(o.enable_flat, ac.enable_flat, o.ac.enable_flat);
  set(o.enable_geo, ac.enable_geo, o.ac.enable_geo);
  set(o.steps, ac.steps, o.ac.steps);
  set(o.lr, ac.learning_rate, o.ac.learning_rate);
  set(o.eval_every, ac.eval_every, o.ac.eval_every);
  set(o.left, ac.outer_left_idx, o.ac.outer_left_idx);
  set(o.right, ac.outer_right_idx, o.ac.outer_right_idx);
  set(o.c1, ac.coeffs.translation, o.coeffs.c.translation);
  set(o.c2, ac.coeffs.affine, o.coeffs.c.affine);
  set(o.c3, ac.coeffs.residual, o.coeffs.c.residual);
  set(o.cg, ac.coeffs.geometric_l1, o.coeffs.c.geometric_l1);
  if (o.res->count() > 0) ac.heatmap.height = ac.heatmap.width = o.heatmap.res;
  set(o.sigma, ac.heatmap.sigma, o.heatmap.sigma);
  set(o.k, ac.heatmap.k, o.heatmap.k);
  if (o.centering_opt->count() > 0) ac.centering = parse_centering(o.centering);
  ac.threads = run.threads;
  check_usage([&] { ac.validate(); });

  run.config = to_json(ac);
  run.config["data"] = o.data;
  run.config["barycenter"] = o.barycenter;
  run.config["config"] = o.config_path;
  run.input(o.data);
  const auto data = dataset_from_json(read_json_file(o.data));
  const auto bary = read_landmarks(run, o.barycenter, 256.0);

  const auto res = run_ablation(data, bary, ac);
  run.write(o.out, trajectory_csv(res.trajectory));
  if (!o.predictions_out.empty()) {
    json preds = json::array();
    for (const auto& p : res.predictions) preds.push_back(to_json(p));
    run.write_json(o.predictions_out, {{"predictions", std::move(preds)},
                                       {"canonical", to_json(res.canonical)},
                                       {"barycenter_w1", res.barycenter_w1}});
  }
  std::cerr << "final w1 " << detail::format_double(res.trajectory.back().w1) << " (barycenter "
            << detail::format_double(res.barycenter_w1) << ")\n";
  return 0;
}

// metrics

struct MetricsOpts {
  std::string pred, truth, predictions, data, barycenter, out;
  double pts_side = 256.0;
  int left = kOuterLeftEye, right = kOuterRightEye;
  SolverOpts solver;
};

int run_metrics(Run& run, const MetricsOpts& o) {
  const bool single = !o.pred.empty() || !o.truth.empty();
  const bool batch = !o.predictions.empty() || !o.data.empty();
  if (single == batch) throw UsageError("give either --pred and --truth, or --predictions and --data");
  if (single && (o.pred.empty() || o.truth.empty())) throw UsageError("--pred and --truth go together");
  if (batch && (o.predictions.empty() || o.data.empty())) throw UsageError("--predictions and --data go together");
  if (batch && o.out.empty()) throw UsageError("--predictions mode writes CSV and needs --out");
  const Solver solver = o.solver.solver();
  run.config = {{"left_eye", o.left}, {"right_eye", o.right}, {"solver", o.solver.to_json()}};

  if (single) {
    run.config.update({{"pred", o.pred}, {"truth", o.truth}, {"pts_side", o.pts_side}});
    const auto p = read_landmarks(run, o.pred, o.pts_side);
    const auto t = read_landmarks(run, o.truth, o.pts_side);
    json j{{"iod_error", iod_error(p, t, o.left, o.right)}, {"normalized_w1", normalized_w1(p, t, o.left, o.right, solver)}};
    if (o.out.empty()) {
      j["manifest"] = run.manifest();
      std::cout << dump(j);
    } else {
      run.write_json(o.out, j);
    }
    return 0;
  }

  run.config.update({{"predictions", o.predictions}, {"data", o.data}, {"barycenter", o.barycenter}});
  run.input(o.predictions);
  run.input(o.data);
  const auto pj = read_json_file(o.predictions);
  if (!pj.is_object() || !pj.contains("predictions") || !pj["predictions"].is_array())
    throw ParseError(o.predictions + ": expected an object with a 'predictions' array");
  std::vector<LandmarkSet> preds;
  for (const auto& p : pj["predictions"]) preds.push_back(landmarks_from_json(p));
  const auto data = dataset_from_json(read_json_file(o.data));
  if (preds.size() != data.size())
    throw Error("prediction count " + std::to_string(preds.size()) + " does not match dataset size " +
                std::to_string(data.size()));
  std::optional<LandmarkSet> bary;
  if (!o.barycenter.empty()) bary = read_landmarks(run, o.barycenter, o.pts_side);

  std::string csv = bary ? "sample,iod_error,normalized_w1,barycenter_iod_error,barycenter_normalized_w1\n"
                         : "sample,iod_error,normalized_w1\n";
  std::vector<double> sums(4, 0.0);
  auto row = [&](const std::string& label, const std::vector<double>& v) {
    csv += label;
    for (std::size_t c = 0; c < (bary ? 4u : 2u); ++c) csv += "," + detail::format_double(v[c]);
    csv += "\n";
  };
  for (std::size_t k = 0; k < data.size(); ++k) {
    const auto& t = data[k].truth;
    std::vector<double> v{iod_error(preds[k], t, o.left, o.right), normalized_w1(preds[k], t, o.left, o.right, solver),
                          0.0, 0.0};
    if (bary) {
      v[2] = iod_error(*bary, t, o.left, o.right);
      v[3] = normalized_w1(*bary, t, o.left, o.right, solver);
    }
    for (std::size_t c = 0; c < 4; ++c) sums[c] += v[c];
    row(std::to_string(k), v);
  }
  for (auto& s : sums) s /= static_cast<double>(data.size());
  row("mean", sums);
  run.write(o.out, csv);
  return 0;
}

// synth

struct SynthOpts {
  std::string out, landmarks_dir;
  int n = SyntheticFaceConfig{}.n_samples;
  double noise = SyntheticFaceConfig{}.noise_std;
  std::uint64_t seed = 0;
  SamplerOpts sampler;
};

int run_synth(Run& run, const SynthOpts& o) {
  SyntheticFaceConfig sc;
  sc.n_samples = o.n;
  sc.noise_std = o.noise;
  sc.seed = o.seed;
  sc.sampler = o.sampler.sampler(o.seed);
  check_usage([&] { sc.validate(); });
  run.config = {{"n", o.n}, {"noise", o.noise}, {"sampler", to_json(sc.sampler)}, {"landmarks_dir", o.landmarks_dir}};
  run.seed = o.seed;

  const auto data = generate_synthetic(sc);
  run.write_json(o.out, dataset_to_json(data));
  if (!o.landmarks_dir.empty()) {
    for (std::size_t k = 0; k < data.size(); ++k) {
      char name[32];
      std::snprintf(name, sizeof(name), "sample_%03zu.json", k);
      write_output(fs::path(o.landmarks_dir) / name, dump(to_json(data[k].truth)));
    }
  }
  return 0;
}

// dispatch

int dispatch(const std::vector<std::string>& args);

int run_replay(const std::string& manifest_path) {
  const json m = read_json_file(manifest_path);
  if (!m.is_object() || !m.contains("argv") || !m.contains("input_digests"))
    throw ParseError(manifest_path + ": not a run manifest");
  if (m.value("tool_version", "") != kToolVersion)
    std::cerr << "warning: manifest written by brule " << m.value("tool_version", "?") << ", this is " << kToolVersion
              << "\n";
  for (const auto& [path, digest] : m["input_digests"].items()) {
    if (!fs::exists(path)) throw Error("input missing: " + path);
    if (file_digest(path) != digest.get<std::string>()) throw Error("input changed since the run: " + path);
  }
  return dispatch(m["argv"].get<std::vector<std::string>>());
}

void add_pts_side(CLI::App* sub, double& side) {
  sub->add_option("--pts-side", side, "crop side in pixels used to normalize .pts inputs");
}

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Barycenter regularization toolkit: optimal transport over 2D landmark sets", "brule"};
  app.option_defaults()->always_capture_default();
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  app.fallthrough();
  unsigned threads = default_thread_count();
  app.add_option("--threads", threads, "worker threads (default: $BRULE_THREADS or available cores)")
      ->check(CLI::PositiveNumber);

  TransportOpts topt;
  auto* transport = app.add_subcommand("transport", "optimal transport between two landmark sets");
  transport->add_option("--source", topt.source, "source landmarks (.json or .pts)")->required();
  transport->add_option("--target", topt.target, "target landmarks (.json or .pts)")->required();
  transport->add_option("--out", topt.out, "write JSON here instead of stdout");
  add_pts_side(transport, topt.pts_side);
  topt.solver.add(transport);

  BarycenterOpts bopt;
  auto* barycenter = app.add_subcommand("barycenter", "free-support Wasserstein barycenter of a landmark directory");
  barycenter->add_option("--landmarks-dir", bopt.dir, "directory of .json/.pts landmark files")->required();
  barycenter->add_option("--out", bopt.out, "barycenter JSON")->required();
  barycenter->add_option("--max-iters", bopt.config.max_outer_iters, "outer fixed-point iterations");
  barycenter->add_option("--tol", bopt.config.convergence_tol, "stop when mean point displacement falls below this");
  barycenter->add_option("--init", bopt.init, "initial estimate")->check(CLI::IsMember({"first", "mean"}));
  barycenter->add_option("--subset-curve", bopt.subset_sizes, "comma-separated subset sizes for the stability curve")
      ->delimiter(',');
  barycenter->add_option("--repeats", bopt.repeats, "random subsets per size");
  barycenter->add_option("--seed", bopt.seed, "subset sampling seed");
  barycenter->add_option("--curve-out", bopt.curve_out, "curve CSV (default: <out>.curve.csv)");
  add_pts_side(barycenter, bopt.pts_side);
  bopt.solver.add(barycenter);

  HeatmapCmdOpts hopt;
  auto* heatmap = app.add_subcommand("heatmap", "render the skeleton heatmap of a landmark set");
  heatmap->add_option("--landmarks", hopt.landmarks, "landmarks (.json or .pts)")->required();
  heatmap->add_option("--out", hopt.out, "16-bit grayscale image (.png or .pgm), scaled to full range")->required();
  heatmap->add_option("--json", hopt.json_out, "also write the normalized float grid as JSON");
  add_pts_side(heatmap, hopt.pts_side);
  hopt.heatmap.add(heatmap);

  DeformOpts dopt;
  auto* deform = app.add_subcommand("deform", "apply one sampled geometric deformation to an image and landmarks");
  deform->add_option("--image", dopt.image, "input image (.png or .pgm)");
  deform->add_option("--landmarks", dopt.landmarks, "input landmarks (.json or .pts)");
  deform->add_option("--seed", dopt.seed, "warp sampling seed");
  deform->add_option("--out-prefix", dopt.prefix, "writes <P>.png|.pgm, <P>.json, <P>.warp.json")->required();
  deform->add_option("--bit-depth", dopt.bit_depth, "output image bit depth")->check(CLI::IsMember({8, 16}));
  add_pts_side(deform, dopt.pts_side);
  dopt.sampler.add(deform);

  RegEvalOpts ropt;
  auto* reg = app.add_subcommand("reg-eval", "evaluate R_flat (and R_g with --warp-seed) for one landmark set");
  reg->add_option("--landmarks", ropt.landmarks, "predicted landmarks x")->required();
  reg->add_option("--barycenter", ropt.barycenter, "barycenter JSON")->required();
  reg->add_option("--affine-centering", ropt.centering, "frame in which A is fitted")
      ->check(CLI::IsMember({"raw", "com"}));
  reg->add_option("--warp-seed", ropt.warp_seed, "sample a warp g and also evaluate R_g");
  reg->add_option("--warped-landmarks", ropt.warped_landmarks, "prediction on the warped image (default: g(x))");
  reg->add_option("--image", ropt.image, "image whose grid sets the heatmap resolution");
  reg->add_option("--warped-image", ropt.warped_image, "write g applied to --image here");
  reg->add_option("--out", ropt.out, "write JSON here instead of stdout");
  add_pts_side(reg, ropt.pts_side);
  ropt.solver.add(reg);
  ropt.coeffs.add(reg);
  ropt.heatmap.add(reg);
  ropt.sampler.add(reg);

  AblateOpts aopt;
  auto* ablate = app.add_subcommand("ablate", "run the synthetic regularizer ablation; flags override --config");
  ablate->add_option("--config", aopt.config_path, "experiment config JSON");
  ablate->add_option("--data", aopt.data, "synthetic dataset JSON (from `brule synth`)")->required();
  ablate->add_option("--barycenter", aopt.barycenter, "barycenter JSON")->required();
  ablate->add_option("--out", aopt.out, "trajectory CSV")->required();
  ablate->add_option("--predictions-out", aopt.predictions_out, "final per-sample predictions JSON");
  aopt.enable_flat = ablate->add_option("--enable-flat", aopt.ac.enable_flat, "use R_flat");
  aopt.enable_geo = ablate->add_option("--enable-geo", aopt.ac.enable_geo, "use R_g");
  aopt.steps = ablate->add_option("--steps", aopt.ac.steps, "gradient steps");
  aopt.lr = ablate->add_option("--lr", aopt.ac.learning_rate, "learning rate");
  aopt.eval_every = ablate->add_option("--eval-every", aopt.ac.eval_every, "trajectory row interval");
  aopt.centering_opt = ablate->add_option("--affine-centering", aopt.centering, "frame in which A is fitted")
                           ->check(CLI::IsMember({"raw", "com"}));
  aopt.left = ablate->add_option("--left-eye", aopt.ac.outer_left_idx, "outer left eye corner index");
  aopt.right = ablate->add_option("--right-eye", aopt.ac.outer_right_idx, "outer right eye corner index");
  aopt.coeffs.add(ablate);
  aopt.c1 = ablate->get_option("--c1");
  aopt.c2 = ablate->get_option("--c2");
  aopt.c3 = ablate->get_option("--c3");
  aopt.cg = ablate->get_option("--cg");
  aopt.heatmap.add(ablate);
  aopt.res = ablate->get_option("--res");
  aopt.sigma = ablate->get_option("--sigma");
  aopt.k = ablate->get_option("--k");

  MetricsOpts mopt;
  auto* metrics = app.add_subcommand("metrics", "IOD error and normalized W1 of predictions against ground truth");
  metrics->add_option("--pred", mopt.pred, "one predicted landmark set");
  metrics->add_option("--truth", mopt.truth, "its ground truth");
  metrics->add_option("--predictions", mopt.predictions, "predictions JSON from `brule ablate`");
  metrics->add_option("--data", mopt.data, "dataset JSON holding the ground truths");
  metrics->add_option("--barycenter", mopt.barycenter, "add constant-barycenter baseline columns");
  metrics->add_option("--left-eye", mopt.left, "outer left eye corner index");
  metrics->add_option("--right-eye", mopt.right, "outer right eye corner index");
  metrics->add_option("--out", mopt.out, "output (JSON for one pair, CSV for a dataset)");
  add_pts_side(metrics, mopt.pts_side);
  mopt.solver.add(metrics);

  SynthOpts sopt;
  auto* synth = app.add_subcommand("synth", "generate a synthetic face dataset with known warps");
  synth->add_option("--n", sopt.n, "number of samples");
  synth->add_option("--noise", sopt.noise, "per-coordinate Gaussian jitter");
  synth->add_option("--seed", sopt.seed, "generator seed");
  synth->add_option("--out", sopt.out, "dataset JSON")->required();
  synth->add_option("--landmarks-dir", sopt.landmarks_dir, "also write each truth as sample_NNN.json here");
  sopt.sampler.add(synth);

  std::string replay_manifest;
  auto* replay = app.add_subcommand("replay", "re-run an invocation from its manifest after checking input digests");
  replay->add_option("--manifest", replay_manifest, "manifest JSON")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  Run run;
  run.argv = args;
  run.threads = threads;
  try {
    if (*transport) return run.subcommand = "transport", run_transport(run, topt);
    if (*barycenter) return run.subcommand = "barycenter", run_barycenter(run, bopt);
    if (*heatmap) return run.subcommand = "heatmap", run_heatmap(run, hopt);
    if (*deform) return run.subcommand = "deform", run_deform(run, dopt);
    if (*reg) return run.subcommand = "reg-eval", run_reg_eval(run, ropt);
    if (*ablate) return run.subcommand = "ablate", run_ablate(run, aopt);
    if (*metrics) return run.subcommand = "metrics", run_metrics(run, mopt);
    if (*synth) return run.subcommand = "synth", run_synth(run, sopt);
    if (*replay) return run_replay(replay_manifest);
  } catch (const UsageError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) { return dispatch(std::vector<std::string>(argv + 1, argv + argc)); }
