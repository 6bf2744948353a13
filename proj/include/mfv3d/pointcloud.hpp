#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "mfv3d/common.hpp"

namespace mfv3d {

/// Unordered set of 3D points in model units.
struct PointCloud {
  std::vector<Vec3> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

namespace detail {

// Strict decimal-point parse; rejects locale-dependent forms.
inline bool parse_double(std::string_view tok, double& out) {
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> toks;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) toks.push_back(line.substr(i, j - i));
    i = j;
  }
  return toks;
}

}  // namespace detail

/// Reads an ASCII XYZ file: one "x y z" per line, '#' comments allowed.
inline PointCloud load_xyz(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  PointCloud pc;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv(line);
    if (auto h = sv.find('#'); h != std::string_view::npos) sv = sv.substr(0, h);
    auto toks = detail::split_ws(sv);
    if (toks.empty()) continue;
    if (toks.size() != 3)
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected 3 coordinates, got " +
                       std::to_string(toks.size()));
    Vec3 p;
    for (int d = 0; d < 3; ++d) {
      if (!detail::parse_double(toks[d], p[d]))
        throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + std::string(toks[d]) + "'");
    }
    pc.points.push_back(p);
  }
  if (pc.empty()) throw EmptyInputError("'" + path.string() + "' holds no points");
  return pc;
}

/// Writes XYZ with round-trip precision.
inline void save_xyz(const PointCloud& pc, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  char buf[96];
  for (const Vec3& p : pc.points) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", p.x(), p.y(), p.z());
    out << buf;
  }
}

/// Centers the centroid at the origin and scales so the farthest point sits on
/// the unit sphere. Shape is preserved up to translation and uniform scale.
inline PointCloud normalize_unit_sphere(const PointCloud& pc) {
  if (pc.empty()) throw EmptyInputError("normalize_unit_sphere: empty cloud");
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : pc.points) centroid += p;
  centroid /= static_cast<double>(pc.size());
  double max_norm = 0.0;
  for (const Vec3& p : pc.points) max_norm = std::max(max_norm, (p - centroid).norm());
  if (max_norm <= 0.0) throw DegenerateInputError("normalize_unit_sphere: all points coincident");
  PointCloud out;
  out.points.reserve(pc.size());
  for (const Vec3& p : pc.points) out.points.push_back((p - centroid) / max_norm);
  return out;
}

/// Symmetric squared-nearest-neighbor distance:
/// (1/|A|) sum_a min_b |a-b|^2 + (1/|B|) sum_b min_a |a-b|^2.
inline double chamfer_distance(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty()) throw EmptyInputError("chamfer_distance: empty cloud");
  auto one_sided = [](const PointCloud& from, const PointCloud& to) {
    double acc = 0.0;
    for (const Vec3& p : from.points) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& q : to.points) best = std::min(best, (p - q).squaredNorm());
      acc += best;
    }
    return acc / static_cast<double>(from.size());
  };
  return one_sided(a, b) + one_sided(b, a);
}

}  // namespace mfv3d
