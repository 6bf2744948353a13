#pragma once

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "mfv3d/common.hpp"
#include "mfv3d/pointcloud.hpp"

namespace mfv3d {

/// Keeps round(T*(1-ratio)) points chosen uniformly without replacement;
/// survivors keep their coordinates and relative order.
inline PointCloud delete_uniform(const PointCloud& pc, double ratio, std::uint64_t seed) {
  if (ratio < 0.0 || ratio >= 1.0) throw MisuseError("delete_uniform: ratio must be in [0,1)");
  const std::size_t T = pc.size();
  const std::size_t keep = static_cast<std::size_t>(std::llround(static_cast<double>(T) * (1.0 - ratio)));
  if (keep == 0) throw EmptyResultError("delete_uniform: no points would survive");
  if (keep == T) return pc;
  std::vector<std::size_t> idx(T);
  std::iota(idx.begin(), idx.end(), 0);
  auto rng = rng_for(seed, "delete_uniform");
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  PointCloud out;
  out.points.reserve(keep);
  for (std::size_t i : idx) out.points.push_back(pc.points[i]);
  return out;
}

/// Picks one seed point uniformly and removes it together with its
/// round(T*ratio)-1 nearest neighbors, simulating an occlusion.
inline PointCloud delete_region(const PointCloud& pc, double ratio, std::uint64_t seed) {
  if (ratio < 0.0 || ratio >= 1.0) throw MisuseError("delete_region: ratio must be in [0,1)");
  const std::size_t T = pc.size();
  const std::size_t remove = static_cast<std::size_t>(std::llround(static_cast<double>(T) * ratio));
  if (remove == 0) return pc;
  if (remove >= T) throw EmptyResultError("delete_region: no points would survive");
  auto rng = rng_for(seed, "delete_region");
  const std::size_t center = std::uniform_int_distribution<std::size_t>(0, T - 1)(rng);
  std::vector<std::pair<double, std::size_t>> byd(T);
  for (std::size_t t = 0; t < T; ++t) byd[t] = {(pc.points[t] - pc.points[center]).squaredNorm(), t};
  std::sort(byd.begin(), byd.end());  // ties break on index, keeping the op deterministic
  std::vector<std::uint8_t> removed(T, 0);
  for (std::size_t i = 0; i < remove; ++i) removed[byd[i].second] = 1;
  PointCloud out;
  out.points.reserve(T - remove);
  for (std::size_t t = 0; t < T; ++t)
    if (!removed[t]) out.points.push_back(pc.points[t]);
  return out;
}

/// Appends `count` outliers drawn uniformly from the unit ball.
inline PointCloud insert_outliers(const PointCloud& pc, std::size_t count, std::uint64_t seed) {
  PointCloud out = pc;
  auto rng = rng_for(seed, "insert_outliers");
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  out.points.reserve(pc.size() + count);
  for (std::size_t i = 0; i < count; ++i) {
    Vec3 dir(gauss(rng), gauss(rng), gauss(rng));
    double n = dir.norm();
    while (n == 0.0) {
      dir = Vec3(gauss(rng), gauss(rng), gauss(rng));
      n = dir.norm();
    }
    out.points.push_back(dir / n * std::cbrt(unit(rng)));
  }
  return out;
}

/// Adds i.i.d. N(0, sigma^2 I) displacement to every point, rescaling any
/// displacement longer than `bound` back onto that radius.
inline PointCloud perturb_gaussian(const PointCloud& pc, double sigma, double bound, std::uint64_t seed) {
  if (sigma < 0.0) throw MisuseError("perturb_gaussian: sigma must be >= 0");
  if (bound <= 0.0) throw MisuseError("perturb_gaussian: bound must be > 0");
  if (sigma == 0.0) return pc;
  auto rng = rng_for(seed, "perturb_gaussian");
  std::normal_distribution<double> gauss(0.0, sigma);
  PointCloud out;
  out.points.reserve(pc.size());
  for (const Vec3& p : pc.points) {
    Vec3 d(gauss(rng), gauss(rng), gauss(rng));
    const double n = d.norm();
    if (n > bound) d *= bound / n;
    out.points.push_back(p + d);
  }
  return out;
}

/// Default clipping radius keeps all but the far tail of the Gaussian.
inline PointCloud perturb_gaussian(const PointCloud& pc, double sigma, std::uint64_t seed) {
  return perturb_gaussian(pc, sigma, 3.0 * std::max(sigma, 1e-300), seed);
}

inline PointCloud apply_rotation(const PointCloud& pc, const Eigen::Matrix3d& R) {
  PointCloud out;
  out.points.reserve(pc.size());
  for (const Vec3& p : pc.points) out.points.push_back(R * p);
  return out;
}

/// Rotation matrix from a quaternion drawn uniformly over SO(3).
inline Eigen::Matrix3d random_rotation_matrix(std::uint64_t seed) {
  auto rng = rng_for(seed, "rotate_random");
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::Vector4d q(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
  while (q.norm() == 0.0) q = Eigen::Vector4d(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
  q.normalize();
  return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
}

inline PointCloud rotate_random(const PointCloud& pc, std::uint64_t seed) {
  return apply_rotation(pc, random_rotation_matrix(seed));
}

/// p' = Rz(yaw) * Ry(pitch) * Rx(roll) * p, angles in radians.
inline PointCloud rotate_euler(const PointCloud& pc, double roll, double pitch, double yaw) {
  Eigen::Matrix3d R = (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
                       Eigen::AngleAxisd(roll, Vec3::UnitX()))
                          .toRotationMatrix();
  return apply_rotation(pc, R);
}

inline constexpr double kAugmentScaleMin = 0.66;
inline constexpr double kAugmentScaleMax = 1.5;
inline constexpr double kAugmentShiftMax = 0.2;

/// Training augmentation: per-axis anisotropic scale in [0.66, 1.5] and
/// per-axis translation in [-0.2, 0.2], identical for every point.
inline PointCloud augment_train(const PointCloud& pc, std::uint64_t seed) {
  auto rng = rng_for(seed, "augment_train");
  std::uniform_real_distribution<double> scale(kAugmentScaleMin, kAugmentScaleMax);
  std::uniform_real_distribution<double> shift(-kAugmentShiftMax, kAugmentShiftMax);
  const Vec3 s(scale(rng), scale(rng), scale(rng));
  const Vec3 t(shift(rng), shift(rng), shift(rng));
  PointCloud out;
  out.points.reserve(pc.size());
  for (const Vec3& p : pc.points) out.points.push_back(p.cwiseProduct(s) + t);
  return out;
}

/// Parsed form of the CLI's "kind=...,param=...,seed=..." corruption string.
struct CorruptionSpec {
  enum class Kind { DeleteUniform, DeleteRegion, Outliers, Perturb, Rotate, Augment, None };
  Kind kind = Kind::None;
  double ratio = 0.0;
  std::size_t count = 0;
  double sigma = 0.0;
  std::optional<double> bound;
  std::uint64_t seed = 0;

  std::string to_string() const {
    auto num = [](double v) {
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      return std::string(buf);
    };
    switch (kind) {
      case Kind::DeleteUniform: return "kind=delete_uniform,ratio=" + num(ratio) + ",seed=" + std::to_string(seed);
      case Kind::DeleteRegion: return "kind=delete_region,ratio=" + num(ratio) + ",seed=" + std::to_string(seed);
      case Kind::Outliers: return "kind=outliers,count=" + std::to_string(count) + ",seed=" + std::to_string(seed);
      case Kind::Perturb:
        return "kind=perturb,sigma=" + num(sigma) + (bound ? ",bound=" + num(*bound) : std::string()) +
               ",seed=" + std::to_string(seed);
      case Kind::Rotate: return "kind=rotate,seed=" + std::to_string(seed);
      case Kind::Augment: return "kind=augment,seed=" + std::to_string(seed);
      case Kind::None: return "kind=none";
    }
    return "kind=none";
  }
};

inline CorruptionSpec parse_corruption_spec(const std::string& text) {
  CorruptionSpec spec;
  std::string kind;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    std::string item = text.substr(pos, comma - pos);
    pos = comma + 1;
    if (item.empty()) continue;
    std::size_t eq = item.find('=');
    if (eq == std::string::npos) throw ParseError("corruption spec: expected key=value, got '" + item + "'");
    std::string key = item.substr(0, eq), val = item.substr(eq + 1);
    double num = 0.0;
    if (key == "kind") {
      kind = val;
    } else if (key == "ratio" || key == "sigma" || key == "bound" || key == "count" || key == "seed") {
      if (!detail::parse_double(val, num)) throw ParseError("corruption spec: bad number '" + val + "'");
      if (key == "ratio") spec.ratio = num;
      if (key == "sigma") spec.sigma = num;
      if (key == "bound") spec.bound = num;
      if (key == "count") spec.count = static_cast<std::size_t>(num);
      if (key == "seed") spec.seed = static_cast<std::uint64_t>(num);
    } else {
      throw ParseError("corruption spec: unknown key '" + key + "'");
    }
  }
  using K = CorruptionSpec::Kind;
  if (kind == "delete_uniform") spec.kind = K::DeleteUniform;
  else if (kind == "delete_region") spec.kind = K::DeleteRegion;
  else if (kind == "outliers") spec.kind = K::Outliers;
  else if (kind == "perturb") spec.kind = K::Perturb;
  else if (kind == "rotate") spec.kind = K::Rotate;
  else if (kind == "augment") spec.kind = K::Augment;
  else if (kind == "none" || kind.empty()) spec.kind = K::None;
  else throw ParseError("corruption spec: unknown kind '" + kind + "'");
  return spec;
}

/// Applies a parsed corruption. `salt` decorrelates repeated applications of
/// one spec across dataset items while staying fully seed-determined.
inline PointCloud apply_corruption(const PointCloud& pc, const CorruptionSpec& spec, std::uint64_t salt = 0) {
  const std::uint64_t seed = spec.seed ^ detail::splitmix64(salt);
  using K = CorruptionSpec::Kind;
  switch (spec.kind) {
    case K::DeleteUniform: return delete_uniform(pc, spec.ratio, seed);
    case K::DeleteRegion: return delete_region(pc, spec.ratio, seed);
    case K::Outliers: return insert_outliers(pc, spec.count, seed);
    case K::Perturb:
      return spec.bound ? perturb_gaussian(pc, spec.sigma, *spec.bound, seed) : perturb_gaussian(pc, spec.sigma, seed);
    case K::Rotate: return rotate_random(pc, seed);
    case K::Augment: return augment_train(pc, seed);
    case K::None: return pc;
  }
  return pc;
}

}  // namespace mfv3d
