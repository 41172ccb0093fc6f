#ifndef BRULE_IO_HPP
#define BRULE_IO_HPP

#include "brule/core.hpp"

#include "json.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>

namespace brule {

using json = nlohmann::json;

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(std::string_view tok, std::size_t line) {
  double v = 0.0;
  const auto* first = tok.data();
  const auto* last = tok.data() + tok.size();
  if (!tok.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v))
    throw ParseError("non-numeric token '" + std::string(tok) + "'", line);
  return v;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Parses the 300-W `.pts` format. Pixel coordinates are divided by `side`
/// (the square crop side) to produce normalized coordinates.
inline LandmarkSet parse_pts(std::string_view text, double side) {
  if (!(side > 0.0)) throw InvalidArgument("image side must be positive");
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }

  std::size_t li = 0;
  auto next_nonblank = [&]() -> std::string_view {
    while (li < lines.size() && detail::trim(lines[li]).empty()) ++li;
    if (li >= lines.size()) throw ParseError("unexpected end of input", lines.size());
    return detail::trim(lines[li++]);
  };
  auto header_value = [&](std::string_view key) {
    auto l = next_nonblank();
    auto colon = l.find(':');
    if (colon == std::string_view::npos || detail::trim(l.substr(0, colon)) != key)
      throw ParseError("malformed header, expected '" + std::string(key) + ":'", li);
    return detail::trim(l.substr(colon + 1));
  };

  header_value("version");
  auto count_tok = header_value("n_points");
  std::size_t n = 0;
  {
    auto [ptr, ec] = std::from_chars(count_tok.data(), count_tok.data() + count_tok.size(), n);
    if (ec != std::errc() || ptr != count_tok.data() + count_tok.size() || n == 0)
      throw ParseError("malformed header, bad n_points", li);
  }
  if (next_nonblank() != "{") throw ParseError("malformed header, expected '{'", li);

  std::vector<Vec2> pts;
  pts.reserve(n);
  while (true) {
    auto l = next_nonblank();
    if (l == "}") break;
    std::istringstream ss{std::string(l)};
    std::string xs, ys, extra;
    if (!(ss >> xs >> ys) || (ss >> extra)) throw ParseError("expected two coordinates", li);
    pts.emplace_back(detail::parse_double(xs, li) / side, detail::parse_double(ys, li) / side);
  }
  if (pts.size() != n)
    throw ParseError("point count mismatch: header says " + std::to_string(n) + ", found " +
                         std::to_string(pts.size()),
                     li);
  return LandmarkSet(std::move(pts));
}

inline std::string serialize_pts(const LandmarkSet& s, double side) {
  std::string out = "version: 1\nn_points: " + std::to_string(s.size()) + "\n{\n";
  for (const auto& p : s) out += detail::format_double(p.x() * side) + " " + detail::format_double(p.y() * side) + "\n";
  out += "}\n";
  return out;
}

// JSON conversions. nlohmann emits the shortest decimal that round-trips,
// so every double survives serialize/parse bit-exactly.

inline json to_json(const LandmarkSet& s, bool clamp = false) {
  json pts = json::array();
  for (const auto& p : s) {
    Vec2 q = clamp ? Vec2(p.cwiseMax(0.0).cwiseMin(1.0)) : p;
    pts.push_back({q.x(), q.y()});
  }
  return json{{"points", pts}};
}

inline LandmarkSet landmarks_from_json(const json& j) {
  if (!j.is_object() || !j.contains("points") || !j["points"].is_array())
    throw ParseError("landmark JSON must be an object with a 'points' array");
  std::vector<Vec2> pts;
  for (const auto& p : j["points"]) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
      throw ParseError("each landmark must be a [x, y] number pair");
    pts.emplace_back(p[0].get<double>(), p[1].get<double>());
  }
  return LandmarkSet(std::move(pts));
}

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline Matrix matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) throw ParseError("expected a non-empty 2D array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& r = j[static_cast<std::size_t>(i)];
    if (!r.is_array() || static_cast<Eigen::Index>(r.size()) != cols) throw ParseError("ragged 2D array");
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = r[static_cast<std::size_t>(k)].get<double>();
  }
  return m;
}

inline json vector_to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Vector vector_from_json(const json& j) {
  if (!j.is_array()) throw ParseError("expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

inline json to_json(const TransportPlan& p) {
  return json{{"weights", matrix_to_json(p.weights)},
              {"source_marginal", vector_to_json(p.source_marginal)},
              {"target_marginal", vector_to_json(p.target_marginal)}};
}

inline TransportPlan plan_from_json(const json& j) {
  try {
    TransportPlan p{matrix_from_json(j.at("weights")), vector_from_json(j.at("source_marginal")),
                    vector_from_json(j.at("target_marginal"))};
    p.validate();
    return p;
  } catch (const json::exception& e) {
    throw ParseError(std::string("plan JSON: ") + e.what());
  }
}

inline json to_json(const AffineMap& a) {
  return json{{"linear", {{a.linear(0, 0), a.linear(0, 1)}, {a.linear(1, 0), a.linear(1, 1)}}},
              {"translation", {a.translation.x(), a.translation.y()}}};
}

inline AffineMap affine_from_json(const json& j) {
  try {
    AffineMap a;
    const auto& l = j.at("linear");
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c) a.linear(r, c) = l.at(r).at(c).get<double>();
    a.translation = Vec2(j.at("translation").at(0).get<double>(), j.at("translation").at(1).get<double>());
    if (!a.is_finite()) throw ParseError("affine map entries must be finite");
    return a;
  } catch (const json::exception& e) {
    throw ParseError(std::string("affine JSON: ") + e.what());
  }
}

inline json to_json(const Heatmap& h) {
  json grid = json::array();
  for (int i = 0; i < h.height(); ++i) {
    json row = json::array();
    for (int j = 0; j < h.width(); ++j) row.push_back(h.at(i, j));
    grid.push_back(std::move(row));
  }
  return json{{"height", h.height()}, {"width", h.width()}, {"grid", std::move(grid)}};
}

// File helpers.

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes to a sibling temporary file and renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view data) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("cannot rename " + tmp.string() + ": " + ec.message());
}

inline json read_json_file(const std::filesystem::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

/// Loads a landmark set from `.json` or `.pts` (the latter needs the crop side).
inline LandmarkSet load_landmarks(const std::filesystem::path& path, double pts_side = 256.0) {
  if (path.extension() == ".pts") return parse_pts(read_text_file(path), pts_side);
  return landmarks_from_json(read_json_file(path));
}

}  // namespace brule

#endif  // BRULE_IO_HPP
