#ifndef BRULE_SERIALIZE_HPP
#define BRULE_SERIALIZE_HPP

// JSON forms of the composite types: warps, samplers, synthetic datasets,
// and the ablation experiment config.

#include "brule/io.hpp"
#include "brule/sandbox.hpp"

#include <numbers>
#include <set>

namespace brule {

inline json to_json(const WarpSpec& g) {
  json grid = json::array();
  for (const auto& d : g.elastic_grid()) grid.push_back({d.x(), d.y()});
  return json{{"affine", to_json(g.affine())},
              {"grid_size", g.grid_size()},
              {"elastic_grid", std::move(grid)},
              {"elastic_alpha", g.elastic_alpha()},
              {"seed", g.seed()}};
}

inline WarpSpec warp_from_json(const json& j) {
  try {
    std::vector<Vec2> grid;
    for (const auto& d : j.at("elastic_grid")) grid.emplace_back(d.at(0).get<double>(), d.at(1).get<double>());
    return WarpSpec(affine_from_json(j.at("affine")), j.at("grid_size").get<int>(), std::move(grid),
                    j.at("elastic_alpha").get<double>(), j.at("seed").get<std::uint64_t>());
  } catch (const json::exception& e) {
    throw ParseError(std::string("warp JSON: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ParseError(std::string("warp JSON: ") + e.what());
  }
}

namespace detail {

/// Rejects keys outside `allowed` so that typos in config files fail loudly.
inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ParseError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ParseError(where + ": unknown key '" + k + "'");
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

// The sampler's rotation range is stored in degrees, matching the CLI.
inline json to_json(const DeformSampler& s) {
  return json{{"rotation_deg", s.rotation_range * 180.0 / std::numbers::pi},
              {"scale_min", s.scale_min},
              {"scale_max", s.scale_max},
              {"translation_range", s.translation_range},
              {"elastic_grid_size", s.elastic_grid_size},
              {"alpha_min", s.alpha_min},
              {"alpha_max", s.alpha_max}};
}

inline void merge_json(const json& j, DeformSampler& s) {
  detail::check_keys(j,
                     {"rotation_deg", "scale_min", "scale_max", "translation_range", "elastic_grid_size", "alpha_min",
                      "alpha_max"},
                     "sampler");
  if (j.contains("rotation_deg")) s.rotation_range = j.at("rotation_deg").get<double>() * std::numbers::pi / 180.0;
  detail::read_if(j, "scale_min", s.scale_min);
  detail::read_if(j, "scale_max", s.scale_max);
  detail::read_if(j, "translation_range", s.translation_range);
  detail::read_if(j, "elastic_grid_size", s.elastic_grid_size);
  detail::read_if(j, "alpha_min", s.alpha_min);
  detail::read_if(j, "alpha_max", s.alpha_max);
}

inline json to_json(const RegCoeffs& c) {
  return json{{"translation", c.translation},
              {"affine", c.affine},
              {"residual", c.residual},
              {"geometric_l1", c.geometric_l1}};
}

inline void merge_json(const json& j, RegCoeffs& c) {
  detail::check_keys(j, {"translation", "affine", "residual", "geometric_l1"}, "coeffs");
  detail::read_if(j, "translation", c.translation);
  detail::read_if(j, "affine", c.affine);
  detail::read_if(j, "residual", c.residual);
  detail::read_if(j, "geometric_l1", c.geometric_l1);
}

inline json to_json(const HeatmapParams& p) {
  return json{{"height", p.height}, {"width", p.width}, {"sigma", p.sigma}, {"k", p.k}};
}

inline void merge_json(const json& j, HeatmapParams& p) {
  detail::check_keys(j, {"height", "width", "sigma", "k"}, "heatmap");
  detail::read_if(j, "height", p.height);
  detail::read_if(j, "width", p.width);
  detail::read_if(j, "sigma", p.sigma);
  detail::read_if(j, "k", p.k);
}

/// Thread count is deliberately absent: it never changes results.
inline json to_json(const AblationConfig& c) {
  return json{{"enable_flat", c.enable_flat},
              {"enable_geo", c.enable_geo},
              {"steps", c.steps},
              {"learning_rate", c.learning_rate},
              {"eval_every", c.eval_every},
              {"affine_centering", to_string(c.centering)},
              {"outer_left_idx", c.outer_left_idx},
              {"outer_right_idx", c.outer_right_idx},
              {"coeffs", to_json(c.coeffs)},
              {"heatmap", to_json(c.heatmap)}};
}

/// Overlays the keys present in `j` onto `c`. Missing keys keep their
/// current values; unknown keys are a ParseError.
inline void merge_json(const json& j, AblationConfig& c) {
  try {
    detail::check_keys(j,
                       {"enable_flat", "enable_geo", "steps", "learning_rate", "eval_every", "affine_centering",
                        "outer_left_idx", "outer_right_idx", "coeffs", "heatmap"},
                       "ablation config");
    detail::read_if(j, "enable_flat", c.enable_flat);
    detail::read_if(j, "enable_geo", c.enable_geo);
    detail::read_if(j, "steps", c.steps);
    detail::read_if(j, "learning_rate", c.learning_rate);
    detail::read_if(j, "eval_every", c.eval_every);
    if (j.contains("affine_centering")) c.centering = parse_centering(j.at("affine_centering").get<std::string>());
    detail::read_if(j, "outer_left_idx", c.outer_left_idx);
    detail::read_if(j, "outer_right_idx", c.outer_right_idx);
    if (j.contains("coeffs")) merge_json(j.at("coeffs"), c.coeffs);
    if (j.contains("heatmap")) merge_json(j.at("heatmap"), c.heatmap);
  } catch (const json::exception& e) {
    throw ParseError(std::string("ablation config: ") + e.what());
  }
}

// Synthetic dataset: {"samples": [{"truth": {"points": ...}, "warp": {...}}]}.

inline json dataset_to_json(const std::vector<SyntheticSample>& data) {
  json samples = json::array();
  for (const auto& s : data) samples.push_back({{"truth", to_json(s.truth)}, {"warp", to_json(s.warp)}});
  return json{{"samples", std::move(samples)}};
}

inline std::vector<SyntheticSample> dataset_from_json(const json& j) {
  if (!j.is_object() || !j.contains("samples") || !j["samples"].is_array())
    throw ParseError("dataset JSON must be an object with a 'samples' array");
  std::vector<SyntheticSample> out;
  for (const auto& s : j["samples"]) {
    if (!s.is_object() || !s.contains("truth") || !s.contains("warp"))
      throw ParseError("each dataset sample needs 'truth' and 'warp'");
    out.push_back({landmarks_from_json(s["truth"]), warp_from_json(s["warp"])});
  }
  return out;
}

}  // namespace brule

#endif  // BRULE_SERIALIZE_HPP
