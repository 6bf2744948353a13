#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "mfv3d/common.hpp"
#include "mfv3d/pointcloud.hpp"

namespace mfv3d {

inline constexpr double kLogTwoPi = 1.8378770664093454836;  // log(2*pi)
// A component likelihood below DBL_MIN reads as 0 in linear arithmetic; a
// point with all likelihoods under this line is "detached" from the mixture.
inline constexpr double kLogDblMin = -708.39641853226408;  // log(DBL_MIN)

/// Isotropic diagonal Gaussian mixture: Sigma_k = sigma_k^2 * I.
/// grid_m is set iff the mixture was built on a uniform lattice.
struct Gmm {
  std::vector<double> weights;
  std::vector<Vec3> means;
  std::vector<double> sigmas;
  std::optional<int> grid_m;

  std::size_t size() const { return weights.size(); }
  bool is_grid() const { return grid_m.has_value(); }
};

/// Cell-centered lattice coordinate for axis index i of m: -1 + (2i+1)/m.
inline double grid_axis_center(int i, int m) { return -1.0 + (2.0 * i + 1.0) / static_cast<double>(m); }

/// Uniform m x m x m grid mixture: w_k = 1/K, sigma_k = 1/m unless overridden.
/// Component order is x-fastest: k = i + m*j + m^2*l.
inline Gmm build_grid_gmm(int m, std::optional<double> sigma_override = std::nullopt) {
  if (m < 1) throw MisuseError("build_grid_gmm: m must be >= 1");
  if (sigma_override && *sigma_override <= 0.0) throw MisuseError("build_grid_gmm: sigma_override must be > 0");
  const std::size_t K = static_cast<std::size_t>(m) * m * m;
  const double sigma = sigma_override ? *sigma_override : 1.0 / m;
  Gmm g;
  g.weights.assign(K, 1.0 / static_cast<double>(K));
  g.sigmas.assign(K, sigma);
  g.means.reserve(K);
  for (int l = 0; l < m; ++l)
    for (int j = 0; j < m; ++j)
      for (int i = 0; i < m; ++i)
        g.means.emplace_back(grid_axis_center(i, m), grid_axis_center(j, m), grid_axis_center(l, m));
  g.grid_m = m;
  return g;
}

namespace detail {

// Flattened per-component constants for the evaluation hot path.
struct GmmEval {
  std::size_t K = 0;
  std::vector<double> mx, my, mz;
  std::vector<double> log_u_const;   // -1.5*log(2pi) - 3*log(sigma_k)
  std::vector<double> log_w;
  std::vector<double> inv_two_s2;    // 1 / (2 sigma_k^2)

  explicit GmmEval(const Gmm& g) : K(g.size()) {
    mx.resize(K);
    my.resize(K);
    mz.resize(K);
    log_u_const.resize(K);
    log_w.resize(K);
    inv_two_s2.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
      mx[k] = g.means[k].x();
      my[k] = g.means[k].y();
      mz[k] = g.means[k].z();
      log_u_const[k] = -1.5 * kLogTwoPi - 3.0 * std::log(g.sigmas[k]);
      log_w[k] = std::log(g.weights[k]);
      inv_two_s2[k] = 1.0 / (2.0 * g.sigmas[k] * g.sigmas[k]);
    }
  }

  // Fills log u_k(p); returns max over k.
  double log_likelihoods(const Vec3& p, double* lu) const {
    double best = -std::numeric_limits<double>::infinity();
    const double px = p.x(), py = p.y(), pz = p.z();
    for (std::size_t k = 0; k < K; ++k) {
      const double dx = px - mx[k], dy = py - my[k], dz = pz - mz[k];
      const double v = log_u_const[k] - (dx * dx + dy * dy + dz * dz) * inv_two_s2[k];
      lu[k] = v;
      if (v > best) best = v;
    }
    return best;
  }

  std::size_t nearest_component(const Vec3& p) const {
    std::size_t best_k = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) {
      const double dx = p.x() - mx[k], dy = p.y() - my[k], dz = p.z() - mz[k];
      const double d2 = dx * dx + dy * dy + dz * dz;
      if (d2 < best) {
        best = d2;
        best_k = k;
      }
    }
    return best_k;
  }

  // Softmax responsibilities in log space. `lu` is scratch of size K that on
  // return holds log u_k. Returns log u_lambda(p) (the mixture log-density),
  // or -inf with detached=true when every u_k underflows to zero.
  double responsibilities(const Vec3& p, double* lu, double* gamma, bool& detached) const {
    const double lu_max = log_likelihoods(p, lu);
    detached = lu_max < kLogDblMin;
    double amax = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) {
      const double a = lu[k] + log_w[k];
      gamma[k] = a;
      if (a > amax) amax = a;
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      gamma[k] = std::exp(gamma[k] - amax);
      sum += gamma[k];
    }
    const double inv = 1.0 / sum;
    for (std::size_t k = 0; k < K; ++k) gamma[k] *= inv;
    return amax + std::log(sum);
  }
};

}  // namespace detail

/// u_k(p) for every component (linear scale; underflows to 0 far away).
inline std::vector<double> component_likelihoods(const Gmm& g, const Vec3& p) {
  detail::GmmEval ev(g);
  std::vector<double> lu(g.size());
  ev.log_likelihoods(p, lu.data());
  for (double& v : lu) v = std::exp(v);
  return lu;
}

struct AssignDiagnostics {
  std::size_t detached_points = 0;  // points whose every u_k underflowed
};

/// Posterior gamma_k(p) = w_k u_k / sum_j w_j u_j, computed in log space.
/// When every u_k underflows the point is hard-assigned to the nearest mean.
inline std::vector<double> soft_assignment(const Gmm& g, const Vec3& p, AssignDiagnostics* diag = nullptr) {
  detail::GmmEval ev(g);
  std::vector<double> lu(g.size()), gamma(g.size());
  bool detached = false;
  ev.responsibilities(p, lu.data(), gamma.data(), detached);
  if (detached) {
    if (diag) diag->detached_points += 1;
    std::fill(gamma.begin(), gamma.end(), 0.0);
    gamma[ev.nearest_component(p)] = 1.0;
  }
  return gamma;
}

/// sum_t log u_lambda(p_t), in log space throughout.
inline double log_likelihood(const Gmm& g, const PointCloud& pc) {
  if (pc.empty()) throw EmptyInputError("log_likelihood: empty cloud");
  detail::GmmEval ev(g);
  std::vector<double> lu(g.size()), gamma(g.size());
  double ll = 0.0;
  bool detached = false;
  for (const Vec3& p : pc.points) ll += ev.responsibilities(p, lu.data(), gamma.data(), detached);
  return ll;
}

struct EmConfig {
  int max_iters = 100;
  double tol = 1e-6;      // relative log-likelihood improvement
  double sigma_floor = 1e-3;  // variance floor 1e-6
};

struct EmDiagnostics {
  std::vector<double> ll_trace;      // log-likelihood after each iteration
  std::vector<int> reseed_iters;     // iterations where a collapsed component was re-seeded
  int iterations = 0;
  bool converged = false;
};

/// Maximum-likelihood isotropic GMM via EM with k-means++-style seeding.
/// Collapsed components (sigma at the floor with negligible mass) are
/// re-seeded on a random data point and reported through diagnostics.
inline Gmm fit_gmm_em(const PointCloud& pc, std::size_t K, const EmConfig& cfg, std::uint64_t seed,
                      EmDiagnostics* diag = nullptr) {
  const std::size_t T = pc.size();
  if (T < K) throw MisuseError("fit_gmm_em: need at least K points");
  if (K == 0) throw MisuseError("fit_gmm_em: K must be positive");
  auto rng = rng_for(seed, "fit_gmm_em");
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // k-means++ seeding
  std::vector<Vec3> centers;
  centers.reserve(K);
  centers.push_back(pc.points[static_cast<std::size_t>(unit(rng) * T) % T]);
  std::vector<double> d2(T);
  while (centers.size() < K) {
    double total = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& c : centers) best = std::min(best, (pc.points[t] - c).squaredNorm());
      d2[t] = best;
      total += best;
    }
    if (total <= 0.0) {
      centers.push_back(pc.points[static_cast<std::size_t>(unit(rng) * T) % T]);
      continue;
    }
    double r = unit(rng) * total;
    std::size_t pick = T - 1;
    double acc = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      acc += d2[t];
      if (acc >= r) {
        pick = t;
        break;
      }
    }
    centers.push_back(pc.points[pick]);
  }

  Gmm g;
  g.weights.assign(K, 1.0 / static_cast<double>(K));
  g.means = std::move(centers);
  double rms = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& c : g.means) best = std::min(best, (pc.points[t] - c).squaredNorm());
    rms += best;
  }
  const double sigma0 = std::max(cfg.sigma_floor, std::sqrt(rms / (3.0 * static_cast<double>(T))) + 1e-3);
  g.sigmas.assign(K, sigma0);

  std::vector<double> lu(K), gamma(K);
  std::vector<double> nk(K);
  std::vector<Vec3> mu_acc(K);
  std::vector<double> s2_acc(K);
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    detail::GmmEval ev(g);
    std::fill(nk.begin(), nk.end(), 0.0);
    std::fill(mu_acc.begin(), mu_acc.end(), Vec3::Zero().eval());
    std::fill(s2_acc.begin(), s2_acc.end(), 0.0);
    double ll = 0.0;
    bool detached = false;
    for (std::size_t t = 0; t < T; ++t) {
      ll += ev.responsibilities(pc.points[t], lu.data(), gamma.data(), detached);
      const double p2 = pc.points[t].squaredNorm();
      for (std::size_t k = 0; k < K; ++k) {
        nk[k] += gamma[k];
        mu_acc[k] += gamma[k] * pc.points[t];
        s2_acc[k] += gamma[k] * p2;  // sum gamma |p|^2; recentered below
      }
    }
    bool reseeded = false;
    for (std::size_t k = 0; k < K; ++k) {
      if (nk[k] <= 1e-10) {  // dead component
        g.means[k] = pc.points[static_cast<std::size_t>(unit(rng) * T) % T];
        g.sigmas[k] = sigma0;
        g.weights[k] = 1.0 / static_cast<double>(T);
        reseeded = true;
        continue;
      }
      g.weights[k] = nk[k] / static_cast<double>(T);
      g.means[k] = mu_acc[k] / nk[k];
      double s2 = std::max(0.0, s2_acc[k] / nk[k] - g.means[k].squaredNorm()) / 3.0;
      if (s2 < cfg.sigma_floor * cfg.sigma_floor) {
        // component collapse: re-seed rather than let sigma -> 0
        g.sigmas[k] = sigma0;
        g.means[k] = pc.points[static_cast<std::size_t>(unit(rng) * T) % T];
        reseeded = true;
      } else {
        g.sigmas[k] = std::sqrt(s2);
      }
    }
    double wsum = 0.0;
    for (double w : g.weights) wsum += w;
    for (double& w : g.weights) w /= wsum;

    if (diag) {
      diag->ll_trace.push_back(ll);
      if (reseeded) diag->reseed_iters.push_back(iter);
      diag->iterations = iter + 1;
    }
    if (!reseeded && std::isfinite(prev_ll) && std::abs(ll - prev_ll) <= cfg.tol * std::abs(prev_ll)) {
      if (diag) diag->converged = true;
      break;
    }
    prev_ll = ll;
  }
  return g;
}

}  // namespace mfv3d
