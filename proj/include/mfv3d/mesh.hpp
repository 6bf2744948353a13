#pragma once

#include <Eigen/Geometry>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "mfv3d/common.hpp"
#include "mfv3d/pointcloud.hpp"

namespace mfv3d {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> faces;

  double face_area(std::size_t f) const {
    const auto& t = faces[f];
    return 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
  }
};

/// Reads the ASCII OFF subset used by shape repositories: triangular faces only.
inline TriangleMesh load_off_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::size_t lineno = 0;
  auto fail = [&](const std::string& what) -> ParseError {
    return ParseError(path.string() + ":" + std::to_string(lineno) + ": " + what);
  };
  std::string line;
  auto next_content = [&](std::string& out) {
    while (std::getline(in, line)) {
      ++lineno;
      std::string_view sv(line);
      if (auto h = sv.find('#'); h != std::string_view::npos) sv = sv.substr(0, h);
      auto toks = detail::split_ws(sv);
      if (!toks.empty()) {
        out = std::string(sv);
        return true;
      }
    }
    return false;
  };

  std::string content;
  if (!next_content(content)) throw EmptyInputError("'" + path.string() + "' is empty");
  // Header may be "OFF" alone or "OFF nv nf ne" on one line.
  auto toks = detail::split_ws(content);
  std::size_t nv = 0, nf = 0;
  auto parse_counts = [&](const std::vector<std::string_view>& t) {
    double v, f;
    if (t.size() < 2 || !detail::parse_double(t[0], v) || !detail::parse_double(t[1], f) || v < 0 || f < 0 ||
        v != std::floor(v) || f != std::floor(f))
      throw fail("bad vertex/face counts");
    nv = static_cast<std::size_t>(v);
    nf = static_cast<std::size_t>(f);
  };
  if (toks[0] == "OFF") {
    if (toks.size() > 1) {
      parse_counts({toks.begin() + 1, toks.end()});
    } else {
      if (!next_content(content)) throw fail("missing counts line");
      parse_counts(detail::split_ws(content));
    }
  } else {
    throw fail("missing OFF header");
  }

  TriangleMesh mesh;
  mesh.vertices.reserve(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    if (!next_content(content)) throw fail("declared " + std::to_string(nv) + " vertices, file ends after " + std::to_string(i));
    auto vt = detail::split_ws(content);
    if (vt.size() < 3) {
      // A face row starting with "3" would be swallowed here; report as count mismatch.
      throw fail("expected vertex, got '" + content + "' (vertex count mismatch?)");
    }
    Vec3 p;
    for (int d = 0; d < 3; ++d)
      if (!detail::parse_double(vt[d], p[d])) throw fail("bad vertex coordinate '" + std::string(vt[d]) + "'");
    mesh.vertices.push_back(p);
  }
  mesh.faces.reserve(nf);
  for (std::size_t i = 0; i < nf; ++i) {
    if (!next_content(content)) throw fail("declared " + std::to_string(nf) + " faces, file ends after " + std::to_string(i));
    auto ft = detail::split_ws(content);
    double arity;
    if (ft.empty() || !detail::parse_double(ft[0], arity)) throw fail("bad face line");
    if (arity != 3.0) throw UnsupportedFormatError(path.string() + ":" + std::to_string(lineno) +
                                                   ": only triangular faces are supported");
    if (ft.size() != 4) throw fail("triangle face needs 3 indices");
    std::array<std::uint32_t, 3> tri{};
    for (int d = 0; d < 3; ++d) {
      double idx;
      if (!detail::parse_double(ft[1 + d], idx) || idx != std::floor(idx) || idx < 0 || idx >= static_cast<double>(nv))
        throw fail("face index out of range");
      tri[d] = static_cast<std::uint32_t>(idx);
    }
    mesh.faces.push_back(tri);
  }
  std::string extra;
  if (next_content(extra)) throw fail("trailing content after declared faces");
  return mesh;
}

/// Area-weighted uniform surface sampling: pick a triangle proportionally to
/// its area, then sample barycentric coordinates (u,v folded if u+v>1).
inline PointCloud sample_mesh(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed) {
  if (mesh.faces.empty()) throw DegenerateInputError("sample_mesh: mesh has no faces");
  std::vector<double> cum(mesh.faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    total += mesh.face_area(f);
    cum[f] = total;
  }
  if (total <= 0.0) throw DegenerateInputError("sample_mesh: zero total surface area");

  auto rng = rng_for(seed, "sample_mesh");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PointCloud pc;
  pc.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    double r = unit(rng) * total;
    auto it = std::lower_bound(cum.begin(), cum.end(), r);
    std::size_t f = std::min<std::size_t>(it - cum.begin(), mesh.faces.size() - 1);
    double u = unit(rng), v = unit(rng);
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const auto& t = mesh.faces[f];
    const Vec3& a = mesh.vertices[t[0]];
    pc.points.push_back(a + u * (mesh.vertices[t[1]] - a) + v * (mesh.vertices[t[2]] - a));
  }
  return pc;
}

}  // namespace mfv3d
