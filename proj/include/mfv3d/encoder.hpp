#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mfv3d/common.hpp"
#include "mfv3d/gmm.hpp"
#include "mfv3d/pointcloud.hpp"

namespace mfv3d {

// Per-Gaussian feature block layout used throughout: [alpha, mu_x, mu_y, mu_z,
// sigma_x, sigma_y, sigma_z], i.e. component c of Gaussian k lives at 7k+c.
inline constexpr int kFeaturesPerGaussian = 7;

struct EncodeDiagnostics {
  std::size_t detached_points = 0;  // points that contribute to no Gaussian
};

/// Raw summands of the likelihood-gradient statistics, one row per point.
/// Detached points (every component likelihood underflows) carry all-zero rows.
struct PerPointGradients {
  std::size_t T = 0;
  std::size_t K = 0;
  std::vector<double> data;          // T x 7K, row-major
  std::vector<std::uint8_t> detached;

  double* row(std::size_t t) { return data.data() + t * kFeaturesPerGaussian * K; }
  const double* row(std::size_t t) const { return data.data() + t * kFeaturesPerGaussian * K; }
  double at(std::size_t t, std::size_t k, int c) const { return row(t)[kFeaturesPerGaussian * k + c]; }
};

/// Flat Fisher vector of length 7K in per-Gaussian blocks.
struct FisherVector {
  std::size_t K = 0;
  std::vector<double> values;
  bool t_normalized = false;
  bool finalized = false;

  double alpha(std::size_t k) const { return values[kFeaturesPerGaussian * k]; }
  double mu(std::size_t k, int d) const { return values[kFeaturesPerGaussian * k + 1 + d]; }
  double sigma(std::size_t k, int d) const { return values[kFeaturesPerGaussian * k + 4 + d]; }
  Vec3 mu_vec(std::size_t k) const { return Vec3(mu(k, 0), mu(k, 1), mu(k, 2)); }
};

enum class MfvVariant { Full, FvOnly, Ss, Min, Max };

inline int mfv_row_count(MfvVariant v) {
  switch (v) {
    case MfvVariant::Full: return 20;
    case MfvVariant::FvOnly: return 7;
    case MfvVariant::Ss: return 7;
    case MfvVariant::Min: return 6;
    case MfvVariant::Max: return 7;
  }
  return 0;
}

inline std::string to_string(MfvVariant v) {
  switch (v) {
    case MfvVariant::Full: return "full";
    case MfvVariant::FvOnly: return "fv";
    case MfvVariant::Ss: return "ss";
    case MfvVariant::Min: return "min";
    case MfvVariant::Max: return "max";
  }
  return "?";
}

inline MfvVariant mfv_variant_from_string(const std::string& s) {
  if (s == "full") return MfvVariant::Full;
  if (s == "fv" || s == "fv-only") return MfvVariant::FvOnly;
  if (s == "ss") return MfvVariant::Ss;
  if (s == "min") return MfvVariant::Min;
  if (s == "max") return MfvVariant::Max;
  throw MisuseError("unknown 3DmFV variant '" + s + "'");
}

/// Row labels in canonical order, e.g. "sum_alpha", "max_mu_x", "min_sigma_z".
inline std::vector<std::string> mfv_row_names(MfvVariant v) {
  static const std::array<const char*, 7> comp = {"alpha", "mu_x", "mu_y", "mu_z", "sigma_x", "sigma_y", "sigma_z"};
  std::vector<std::string> names;
  auto add = [&](const char* prefix, int from, int to) {
    for (int c = from; c < to; ++c) names.push_back(std::string(prefix) + "_" + comp[c]);
  };
  switch (v) {
    case MfvVariant::Full:
      add("sum", 0, 7);
      add("max", 0, 7);
      add("min", 1, 7);
      break;
    case MfvVariant::FvOnly: add("sum", 0, 7); break;
    case MfvVariant::Ss: add("ss", 0, 7); break;
    case MfvVariant::Min: add("min", 1, 7); break;
    case MfvVariant::Max: add("max", 0, 7); break;
  }
  return names;
}

/// Generalized Fisher representation: one row per (aggregate, component) pair,
/// one column per Gaussian. The Full variant stacks T-normalized sums (7),
/// maxima (7) and minima (6; the alpha minimum is a constant and omitted).
struct Mfv {
  Eigen::MatrixXd rows;  // mfv_row_count(variant) x K
  MfvVariant variant = MfvVariant::Full;
  bool finalized = false;

  std::size_t gaussians() const { return static_cast<std::size_t>(rows.cols()); }
};

namespace detail {

// Per-component constants for the gradient kernel.
struct EncoderEval {
  GmmEval ev;
  std::vector<double> w, inv_sqw, inv_sigma_sqw, inv_s2, inv_sqrt2w;

  explicit EncoderEval(const Gmm& g) : ev(g) {
    const std::size_t K = g.size();
    w.resize(K);
    inv_sqw.resize(K);
    inv_sigma_sqw.resize(K);
    inv_s2.resize(K);
    inv_sqrt2w.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
      w[k] = g.weights[k];
      inv_sqw[k] = 1.0 / std::sqrt(g.weights[k]);
      inv_sigma_sqw[k] = inv_sqw[k] / g.sigmas[k];
      inv_s2[k] = 1.0 / (g.sigmas[k] * g.sigmas[k]);
      inv_sqrt2w[k] = 1.0 / std::sqrt(2.0 * g.weights[k]);
    }
  }

  // Writes the 7K gradient summands for point p into `out`.
  // Returns false (and writes zeros) for a detached point.
  bool gradient_row(const Vec3& p, double* lu, double* gamma, double* out) const {
    bool detached = false;
    ev.responsibilities(p, lu, gamma, detached);
    const std::size_t K = ev.K;
    if (detached) {
      std::fill(out, out + kFeaturesPerGaussian * K, 0.0);
      return false;
    }
    const double px = p.x(), py = p.y(), pz = p.z();
    for (std::size_t k = 0; k < K; ++k) {
      const double gk = gamma[k];
      const double dx = px - ev.mx[k], dy = py - ev.my[k], dz = pz - ev.mz[k];
      double* o = out + kFeaturesPerGaussian * k;
      o[0] = (gk - w[k]) * inv_sqw[k];
      const double gm = gk * inv_sigma_sqw[k];
      o[1] = gm * dx;
      o[2] = gm * dy;
      o[3] = gm * dz;
      const double gs = gk * inv_sqrt2w[k];
      o[4] = gs * (dx * dx * inv_s2[k] - 1.0);
      o[5] = gs * (dy * dy * inv_s2[k] - 1.0);
      o[6] = gs * (dz * dz * inv_s2[k] - 1.0);
    }
    return true;
  }
};

// Fixed-order pairwise (binary counter) reduction over equal-length vectors.
// The grouping depends only on the number of pushed blocks, never on threads,
// so results are reproducible and permutation effects stay at rounding level.
class PairwiseAccumulator {
 public:
  explicit PairwiseAccumulator(std::size_t n) : n_(n) {}

  void push(const std::vector<double>& block) {
    levels_.push_back(block);
    counts_.push_back(1);
    while (counts_.size() >= 2 && counts_[counts_.size() - 1] == counts_[counts_.size() - 2]) {
      auto& dst = levels_[levels_.size() - 2];
      const auto& src = levels_.back();
      for (std::size_t i = 0; i < n_; ++i) dst[i] += src[i];
      counts_[counts_.size() - 2] *= 2;
      levels_.pop_back();
      counts_.pop_back();
    }
  }

  std::vector<double> total() const {
    std::vector<double> acc(n_, 0.0);
    for (auto it = levels_.rbegin(); it != levels_.rend(); ++it)
      for (std::size_t i = 0; i < n_; ++i) acc[i] += (*it)[i];
    return acc;
  }

 private:
  std::size_t n_;
  std::vector<std::vector<double>> levels_;
  std::vector<std::size_t> counts_;
};

inline constexpr std::size_t kReductionBlock = 256;  // points per partial sum

}  // namespace detail

/// Eq-level gradient summands for every (point, Gaussian) pair.
inline PerPointGradients per_point_gradients(const Gmm& g, const PointCloud& pc, EncodeDiagnostics* diag = nullptr) {
  if (pc.empty()) throw EmptyInputError("per_point_gradients: empty cloud");
  detail::EncoderEval ee(g);
  const std::size_t K = g.size(), T = pc.size();
  PerPointGradients out;
  out.T = T;
  out.K = K;
  out.data.resize(T * kFeaturesPerGaussian * K);
  out.detached.assign(T, 0);
  std::vector<double> lu(K), gamma(K);
  for (std::size_t t = 0; t < T; ++t) {
    if (!ee.gradient_row(pc.points[t], lu.data(), gamma.data(), out.row(t))) {
      out.detached[t] = 1;
      if (diag) diag->detached_points += 1;
    }
  }
  return out;
}

/// Column sums of the per-point gradients via the deterministic pairwise
/// reduction; divided by T when apply_t_norm is set.
inline FisherVector encode_fv(const Gmm& g, const PointCloud& pc, bool apply_t_norm = true,
                              EncodeDiagnostics* diag = nullptr) {
  if (pc.empty()) throw EmptyInputError("encode_fv: empty cloud");
  detail::EncoderEval ee(g);
  const std::size_t K = g.size(), T = pc.size();
  const std::size_t n = kFeaturesPerGaussian * K;
  detail::PairwiseAccumulator acc(n);
  std::vector<double> lu(K), gamma(K), row(n), block(n, 0.0);
  std::size_t in_block = 0;
  for (std::size_t t = 0; t < T; ++t) {
    if (!ee.gradient_row(pc.points[t], lu.data(), gamma.data(), row.data())) {
      if (diag) diag->detached_points += 1;
      continue;  // detached: contributes nothing
    }
    for (std::size_t i = 0; i < n; ++i) block[i] += row[i];
    if (++in_block == detail::kReductionBlock) {
      acc.push(block);
      std::fill(block.begin(), block.end(), 0.0);
      in_block = 0;
    }
  }
  if (in_block > 0) acc.push(block);
  FisherVector fv;
  fv.K = K;
  fv.values = acc.total();
  if (apply_t_norm) {
    const double inv_t = 1.0 / static_cast<double>(T);
    for (double& v : fv.values) v *= inv_t;
    fv.t_normalized = true;
  }
  return fv;
}

/// One-pass 3DmFV encoding. Sum rows carry the T-normalization; extrema rows
/// are elementwise max/min of the raw per-point summands and are left
/// unnormalized (they are sample-size invariant as they stand). The Ss variant
/// replaces sums with (1/T) sum of squared summands.
inline Mfv encode_3dmfv(const Gmm& g, const PointCloud& pc, MfvVariant variant = MfvVariant::Full,
                        EncodeDiagnostics* diag = nullptr) {
  if (pc.empty()) throw EmptyInputError("encode_3dmfv: empty cloud");
  detail::EncoderEval ee(g);
  const std::size_t K = g.size(), T = pc.size();
  const std::size_t n = kFeaturesPerGaussian * K;
  const bool want_sum = variant == MfvVariant::Full || variant == MfvVariant::FvOnly;
  const bool want_ss = variant == MfvVariant::Ss;
  const bool want_max = variant == MfvVariant::Full || variant == MfvVariant::Max;
  const bool want_min = variant == MfvVariant::Full || variant == MfvVariant::Min;

  detail::PairwiseAccumulator acc(n);
  std::vector<double> lu(K), gamma(K), row(n), block(n, 0.0);
  std::vector<double> vmax, vmin;
  if (want_max) vmax.assign(n, 0.0);
  if (want_min) vmin.assign(n, 0.0);
  bool extrema_seeded = false;
  std::size_t in_block = 0;
  for (std::size_t t = 0; t < T; ++t) {
    if (!ee.gradient_row(pc.points[t], lu.data(), gamma.data(), row.data())) {
      if (diag) diag->detached_points += 1;
      continue;
    }
    if (want_sum || want_ss) {
      if (want_ss)
        for (std::size_t i = 0; i < n; ++i) block[i] += row[i] * row[i];
      else
        for (std::size_t i = 0; i < n; ++i) block[i] += row[i];
      if (++in_block == detail::kReductionBlock) {
        acc.push(block);
        std::fill(block.begin(), block.end(), 0.0);
        in_block = 0;
      }
    }
    if (want_max || want_min) {
      if (!extrema_seeded) {
        if (want_max) std::copy(row.begin(), row.end(), vmax.begin());
        if (want_min) std::copy(row.begin(), row.end(), vmin.begin());
        extrema_seeded = true;
      } else {
        if (want_max)
          for (std::size_t i = 0; i < n; ++i) vmax[i] = std::max(vmax[i], row[i]);
        if (want_min)
          for (std::size_t i = 0; i < n; ++i) vmin[i] = std::min(vmin[i], row[i]);
      }
    }
  }

  Mfv out;
  out.variant = variant;
  out.rows.setZero(mfv_row_count(variant), static_cast<Eigen::Index>(K));
  const double inv_t = 1.0 / static_cast<double>(T);
  if (want_sum || want_ss) {
    if (in_block > 0) acc.push(block);
    std::vector<double> sums = acc.total();
    for (std::size_t k = 0; k < K; ++k)
      for (int c = 0; c < 7; ++c) out.rows(c, static_cast<Eigen::Index>(k)) = sums[kFeaturesPerGaussian * k + c] * inv_t;
  }
  if (want_max) {
    const int base = variant == MfvVariant::Full ? 7 : 0;
    for (std::size_t k = 0; k < K; ++k)
      for (int c = 0; c < 7; ++c) out.rows(base + c, static_cast<Eigen::Index>(k)) = vmax[kFeaturesPerGaussian * k + c];
  }
  if (want_min) {
    const int base = variant == MfvVariant::Full ? 14 : 0;
    for (std::size_t k = 0; k < K; ++k)
      for (int c = 1; c < 7; ++c)
        out.rows(base + c - 1, static_cast<Eigen::Index>(k)) = vmin[kFeaturesPerGaussian * k + c];
  }
  return out;
}

namespace detail {

inline void signed_sqrt_and_row_l2(Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double v = m(r, c);
      m(r, c) = v >= 0.0 ? std::sqrt(v) : -std::sqrt(-v);
    }
    const double norm = m.row(r).norm();
    if (norm > 0.0) m.row(r) /= norm;  // all-zero rows stay zero
  }
}

}  // namespace detail

/// Element-wise signed square root, then L2 normalization of each per-feature
/// row of length K. Not idempotent; calling twice is a misuse error.
inline Mfv finalize_normalization(const Mfv& in) {
  if (in.finalized) throw MisuseError("finalize_normalization: already finalized");
  Mfv out = in;
  detail::signed_sqrt_and_row_l2(out.rows);
  out.finalized = true;
  return out;
}

/// Same normalization for a flat Fisher vector, grouping by feature across
/// Gaussians (7 rows of length K).
inline FisherVector finalize_normalization(const FisherVector& in) {
  if (in.finalized) throw MisuseError("finalize_normalization: already finalized");
  FisherVector out = in;
  Eigen::MatrixXd m(kFeaturesPerGaussian, static_cast<Eigen::Index>(in.K));
  for (std::size_t k = 0; k < in.K; ++k)
    for (int c = 0; c < 7; ++c) m(c, static_cast<Eigen::Index>(k)) = in.values[kFeaturesPerGaussian * k + c];
  detail::signed_sqrt_and_row_l2(m);
  for (std::size_t k = 0; k < in.K; ++k)
    for (int c = 0; c < 7; ++c) out.values[kFeaturesPerGaussian * k + c] = m(c, static_cast<Eigen::Index>(k));
  out.finalized = true;
  return out;
}

/// Feature-major lattice tensor: data[f*K + k] with k = i + m*j + m^2*l.
struct GridTensor {
  int rows = 0;
  int m = 0;
  std::vector<double> data;

  double at(int f, int i, int j, int l) const {
    const int K = m * m * m;
    return data[static_cast<std::size_t>(f) * K + static_cast<std::size_t>(i + m * j + m * m * l)];
  }
};

/// Lays the Mfv columns onto the lattice of a grid-built mixture. Column k of
/// the matrix maps to cell (i,j,l) via the canonical x-fastest order.
inline GridTensor to_grid_tensor(const Mfv& mfv, const Gmm& g) {
  if (!g.is_grid()) throw MisuseError("to_grid_tensor: GMM is not grid-built");
  const int m = *g.grid_m;
  const std::size_t K = static_cast<std::size_t>(m) * m * m;
  if (mfv.gaussians() != K)
    throw ShapeError("to_grid_tensor: Mfv has " + std::to_string(mfv.gaussians()) + " columns, grid needs " +
                     std::to_string(K));
  GridTensor t;
  t.rows = static_cast<int>(mfv.rows.rows());
  t.m = m;
  t.data.resize(static_cast<std::size_t>(t.rows) * K);
  for (int f = 0; f < t.rows; ++f)
    for (std::size_t k = 0; k < K; ++k) t.data[static_cast<std::size_t>(f) * K + k] = mfv.rows(f, static_cast<Eigen::Index>(k));
  return t;
}

/// Inverse of to_grid_tensor's layout; bit-exact round trip.
inline Eigen::MatrixXd flatten_grid_tensor(const GridTensor& t) {
  const std::size_t K = static_cast<std::size_t>(t.m) * t.m * t.m;
  Eigen::MatrixXd m(t.rows, static_cast<Eigen::Index>(K));
  for (int f = 0; f < t.rows; ++f)
    for (std::size_t k = 0; k < K; ++k) m(f, static_cast<Eigen::Index>(k)) = t.data[static_cast<std::size_t>(f) * K + k];
  return m;
}

}  // namespace mfv3d
