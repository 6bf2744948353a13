#pragma once

#include <cmath>
#include <string>

#include "mfv3d/common.hpp"
#include "mfv3d/encoder.hpp"
#include "mfv3d/gmm.hpp"

namespace mfv3d {

/// Plane n.p = rho recovered from the Fisher components of one Gaussian.
/// rho0 is the signed distance in the Gaussian-local frame; rho the global one.
struct PlaneParams {
  Vec3 normal = Vec3::UnitX();
  double rho = 0.0;
  double rho0 = 0.0;
  std::size_t gaussian_index = 0;
  double t_k_estimate = 0.0;
};

/// Inverts the mu-gradient of Gaussian k for a cloud consisting of a single
/// point dominantly assigned to k: p = sigma_k * sqrt(w_k) * G_mu_k + mu_k.
/// (At K=1 the weight factor is 1 and this reduces to the textbook inversion.)
inline Vec3 recover_single_point(const FisherVector& fv, const Gmm& g, std::size_t k) {
  if (fv.finalized) throw MisuseError("recover_single_point: needs an un-finalized Fisher vector");
  if (k >= g.size()) throw ShapeError("recover_single_point: Gaussian index out of range");
  const double sqw = std::sqrt(g.weights[k]);
  const Vec3 gmu = fv.mu_vec(k);
  // No mass on k: the alpha component sits at its empty-Gaussian baseline
  // -sqrt(w) and the mu gradient vanishes.
  if (gmu.norm() < 1e-12 && std::abs(fv.alpha(k) + sqw) < 1e-9)
    throw NoPointPresentError("recover_single_point: Gaussian " + std::to_string(k) + " saw no point");
  return g.sigmas[k] * sqw * gmu + g.means[k];
}

/// T_k from the alpha component of a T-normalized Fisher vector:
/// T_k = T * sqrt(w_k) * (G_alpha_k + sqrt(w_k)). Algebraically this equals
/// sum_t gamma_t(k). Negative values (heavy underflow) clamp to zero.
inline double estimate_points_per_gaussian(const FisherVector& fv, const Gmm& g, std::size_t k, std::size_t total_t,
                                           bool* clamped = nullptr) {
  if (!fv.t_normalized) throw MisuseError("estimate_points_per_gaussian: Fisher vector must be T-normalized");
  if (k >= g.size()) throw ShapeError("estimate_points_per_gaussian: Gaussian index out of range");
  const double sqw = std::sqrt(g.weights[k]);
  const double est = static_cast<double>(total_t) * sqw * (fv.alpha(k) + sqw);
  if (clamped) *clamped = est < 0.0;
  return est < 0.0 ? 0.0 : est;
}

struct PlaneRecoveryConfig {
  double min_points = 30.0;     // qualifying-Gaussian mass threshold on T_k
  double degenerate_eps = 1e-6; // |G_mu| below this is direction-free
};

/// Plane parameters from the Fisher components of Gaussian k, assuming the
/// points assigned to k lie on a plane sampled symmetrically around the
/// center's foot point. The normal points from the Gaussian center toward the
/// plane, making rho0 >= 0.
inline PlaneParams recover_plane(const FisherVector& fv, const Gmm& g, std::size_t k, std::size_t total_t,
                                 const PlaneRecoveryConfig& cfg = {}) {
  if (!fv.t_normalized) throw MisuseError("recover_plane: Fisher vector must be T-normalized");
  if (fv.finalized) throw MisuseError("recover_plane: needs an un-finalized Fisher vector");
  if (k >= g.size()) throw ShapeError("recover_plane: Gaussian index out of range");
  const double tk = estimate_points_per_gaussian(fv, g, k, total_t);
  if (tk < cfg.min_points)
    throw MisuseError("recover_plane: Gaussian " + std::to_string(k) + " holds ~" + std::to_string(tk) +
                      " points, below the qualifying threshold");
  const Vec3 gmu = fv.mu_vec(k);
  const double norm = gmu.norm();
  if (norm < cfg.degenerate_eps)
    throw DegeneratePlaneError("recover_plane: mu gradient vanishes (plane passes through the Gaussian center "
                               "or mass is symmetric about it)",
                               0.0);
  PlaneParams out;
  out.gaussian_index = k;
  out.t_k_estimate = tk;
  out.normal = gmu / norm;
  const double sqw = std::sqrt(g.weights[k]);
  out.rho0 = g.sigmas[k] * norm / (fv.alpha(k) + sqw);
  out.rho = out.rho0 + g.means[k].dot(out.normal);
  return out;
}

}  // namespace mfv3d
