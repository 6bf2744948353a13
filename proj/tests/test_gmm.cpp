#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "mfv3d/gmm.hpp"

using namespace mfv3d;

namespace {

Gmm random_gmm(std::size_t K, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::uniform_real_distribution<double> pos(-1.0, 1.0);
  std::uniform_real_distribution<double> sig(0.3, 1.0);
  Gmm g;
  double wsum = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    g.weights.push_back(u(rng));
    wsum += g.weights.back();
    g.means.emplace_back(pos(rng), pos(rng), pos(rng));
    g.sigmas.push_back(sig(rng));
  }
  for (double& w : g.weights) w /= wsum;
  return g;
}

// Independent high-precision evaluation of the posterior.
std::vector<long double> soft_assignment_oracle(const Gmm& g, const Vec3& p) {
  const long double two_pi = 6.283185307179586476925286766559L;
  std::vector<long double> terms(g.size());
  long double total = 0.0L;
  for (std::size_t k = 0; k < g.size(); ++k) {
    const long double s = g.sigmas[k];
    long double d2 = 0.0L;
    for (int d = 0; d < 3; ++d) {
      const long double diff = static_cast<long double>(p[d]) - static_cast<long double>(g.means[k][d]);
      d2 += diff * diff;
    }
    const long double u = std::pow(two_pi, -1.5L) / (s * s * s) * std::exp(-d2 / (2.0L * s * s));
    terms[k] = static_cast<long double>(g.weights[k]) * u;
    total += terms[k];
  }
  for (auto& t : terms) t /= total;
  return terms;
}

}  // namespace

TEST_CASE("grid construction: m=1", "[gmm]") {
  Gmm g = build_grid_gmm(1);
  REQUIRE(g.size() == 1);
  CHECK(g.weights[0] == 1.0);
  CHECK(g.sigmas[0] == 1.0);
  CHECK(g.means[0] == Vec3(0, 0, 0));
  CHECK(g.is_grid());
}

TEST_CASE("grid construction: m=5 matches the 5x5x5 setup", "[gmm]") {
  Gmm g = build_grid_gmm(5, 0.1);  // sigma=1/10, w=1/125
  REQUIRE(g.size() == 125);
  for (double w : g.weights) CHECK(w == Catch::Approx(1.0 / 125).epsilon(1e-14));
  for (double s : g.sigmas) CHECK(s == 0.1);
  // axis centers -0.8, -0.4, 0, 0.4, 0.8; x-index fastest
  for (int i = 0; i < 5; ++i) CHECK(grid_axis_center(i, 5) == Catch::Approx(-0.8 + 0.4 * i).margin(1e-15));
  CHECK(g.means[0] == Vec3(grid_axis_center(0, 5), grid_axis_center(0, 5), grid_axis_center(0, 5)));
  CHECK(g.means[1].x() == Catch::Approx(-0.4));  // k=1 -> i=1
  CHECK(g.means[5].y() == Catch::Approx(-0.4));  // k=5 -> j=1
  CHECK(g.means[25].z() == Catch::Approx(-0.4)); // k=25 -> l=1

  SECTION("weights sum to one") {
    double sum = 0.0;
    for (double w : g.weights) sum += w;
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
  SECTION("default sigma is 1/m") { CHECK(build_grid_gmm(5).sigmas[0] == Catch::Approx(0.2)); }
  SECTION("construction is reproducible") {
    Gmm h = build_grid_gmm(5, 0.1);
    for (std::size_t k = 0; k < 125; ++k) CHECK(g.means[k] == h.means[k]);
  }
}

TEST_CASE("component likelihood at the mode", "[gmm]") {
  Gmm g = build_grid_gmm(1);  // single unit Gaussian at origin
  auto u = component_likelihoods(g, Vec3(0, 0, 0));
  CHECK(u[0] == Catch::Approx(0.06349363593424097).epsilon(1e-12));  // (2*pi)^(-3/2)
}

TEST_CASE("component likelihood is symmetric about the mean", "[gmm]") {
  Gmm g = random_gmm(4, 21);
  const Vec3 d(0.3, -0.2, 0.5);
  for (std::size_t k = 0; k < g.size(); ++k) {
    auto up = component_likelihoods(g, g.means[k] + d);
    auto um = component_likelihoods(g, g.means[k] - d);
    CHECK(up[k] == Catch::Approx(um[k]).epsilon(1e-12));
  }
}

TEST_CASE("component likelihood integrates to one", "[gmm]") {
  // midpoint-rule quadrature over [-6s, 6s]^3 around the mean
  Gmm g;
  g.weights = {1.0};
  g.means = {Vec3(0.2, -0.1, 0.4)};
  g.sigmas = {0.35};
  const double s = g.sigmas[0];
  const int n = 60;
  const double h = 12.0 * s / n;
  double integral = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int l = 0; l < n; ++l) {
        Vec3 p = g.means[0] + Vec3(-6 * s + (i + 0.5) * h, -6 * s + (j + 0.5) * h, -6 * s + (l + 0.5) * h);
        integral += component_likelihoods(g, p)[0];
      }
  integral *= h * h * h;
  CHECK(std::abs(integral - 1.0) < 1e-3);
}

TEST_CASE("soft assignment basics", "[gmm]") {
  SECTION("K=1 gives certainty") {
    Gmm g = build_grid_gmm(1);
    auto gamma = soft_assignment(g, Vec3(5, 5, 5));
    CHECK(gamma[0] == 1.0);
  }
  SECTION("equidistant point splits evenly") {
    Gmm g;
    g.weights = {0.5, 0.5};
    g.means = {Vec3(-1, 0, 0), Vec3(1, 0, 0)};
    g.sigmas = {0.4, 0.4};
    auto gamma = soft_assignment(g, Vec3(0, 0.7, -0.3));
    CHECK(gamma[0] == Catch::Approx(0.5).epsilon(1e-12));
    CHECK(gamma[1] == Catch::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("soft assignment matches a high-precision oracle", "[gmm]") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> pos(-1.5, 1.5);
  for (int trial = 0; trial < 50; ++trial) {
    Gmm g = random_gmm(1 + trial % 8, 1000 + trial);
    const Vec3 p(pos(rng), pos(rng), pos(rng));
    auto gamma = soft_assignment(g, p);
    auto oracle = soft_assignment_oracle(g, p);
    for (std::size_t k = 0; k < g.size(); ++k)
      CHECK(std::abs(gamma[k] - static_cast<double>(oracle[k])) < 1e-12);
  }
}

TEST_CASE("soft assignments always sum to one", "[gmm]") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> pos(-2.0, 2.0);
  for (int trial = 0; trial < 2000; ++trial) {
    Gmm g = random_gmm(1 + trial % 6, trial);
    auto gamma = soft_assignment(g, Vec3(pos(rng), pos(rng), pos(rng)));
    double sum = 0.0;
    for (double v : gamma) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("detached point hard-assigns to nearest component", "[gmm]") {
  Gmm g = build_grid_gmm(2, 1e-4);  // tiny sigma: far point underflows everywhere
  AssignDiagnostics diag;
  auto gamma = soft_assignment(g, Vec3(0.45, 0.45, 0.45), &diag);
  CHECK(diag.detached_points == 1);
  double sum = 0.0;
  int ones = 0;
  for (double v : gamma) {
    sum += v;
    if (v == 1.0) ++ones;
  }
  CHECK(sum == 1.0);
  CHECK(ones == 1);
  // nearest lattice cell for (0.45,...) at m=2 is (+0.5,+0.5,+0.5) = index 7
  CHECK(gamma[7] == 1.0);
}

TEST_CASE("log likelihood closed form and additivity", "[gmm]") {
  Gmm g = build_grid_gmm(1);
  PointCloud at_mean;
  at_mean.points = {Vec3(0, 0, 0)};
  CHECK(log_likelihood(g, at_mean) == Catch::Approx(-2.7568155996140185).epsilon(1e-12));

  Gmm r = random_gmm(5, 77);
  PointCloud pc;
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> pos(-1.0, 1.0);
  for (int i = 0; i < 40; ++i) pc.points.emplace_back(pos(rng), pos(rng), pos(rng));
  const Vec3 extra(0.2, 0.1, -0.4);
  PointCloud plus = pc;
  plus.points.push_back(extra);
  PointCloud single;
  single.points = {extra};
  CHECK(log_likelihood(r, plus) ==
        Catch::Approx(log_likelihood(r, pc) + log_likelihood(r, single)).epsilon(1e-12));

  SECTION("order invariant") {
    PointCloud shuffled = pc;
    std::shuffle(shuffled.points.begin(), shuffled.points.end(), std::mt19937_64(9));
    CHECK(log_likelihood(r, shuffled) == Catch::Approx(log_likelihood(r, pc)).epsilon(1e-12));
  }
}

TEST_CASE("EM recovers a single Gaussian", "[gmm]") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> gauss(0.0, 0.5);
  const Vec3 mu(0.3, -0.2, 0.1);
  PointCloud pc;
  const std::size_t T = 4000;
  for (std::size_t i = 0; i < T; ++i) pc.points.push_back(mu + Vec3(gauss(rng), gauss(rng), gauss(rng)));
  Gmm fit = fit_gmm_em(pc, 1, {}, 7);
  CHECK((fit.means[0] - mu).norm() < 3.0 * 0.5 / std::sqrt(static_cast<double>(T)) * 3.0);
  CHECK(fit.sigmas[0] == Catch::Approx(0.5).margin(0.05));
  CHECK(fit.weights[0] == 1.0);
}

TEST_CASE("EM separates two far clusters", "[gmm]") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> gauss(0.0, 0.1);
  const Vec3 c0(-1, 0, 0), c1(1, 0.5, -0.5);  // 10 sigma apart and then some
  PointCloud pc;
  Vec3 sum0 = Vec3::Zero(), sum1 = Vec3::Zero();
  for (int i = 0; i < 500; ++i) {
    Vec3 p = c0 + Vec3(gauss(rng), gauss(rng), gauss(rng));
    sum0 += p;
    pc.points.push_back(p);
  }
  for (int i = 0; i < 500; ++i) {
    Vec3 p = c1 + Vec3(gauss(rng), gauss(rng), gauss(rng));
    sum1 += p;
    pc.points.push_back(p);
  }
  const Vec3 centroid0 = sum0 / 500.0, centroid1 = sum1 / 500.0;
  Gmm fit = fit_gmm_em(pc, 2, {}, 3);
  const double d00 = (fit.means[0] - centroid0).norm(), d01 = (fit.means[0] - centroid1).norm();
  const Vec3& near0 = d00 < d01 ? fit.means[0] : fit.means[1];
  const Vec3& near1 = d00 < d01 ? fit.means[1] : fit.means[0];
  CHECK((near0 - centroid0).norm() < 0.05);
  CHECK((near1 - centroid1).norm() < 0.05);
}

TEST_CASE("EM log likelihood is monotone", "[gmm]") {
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> pos(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    PointCloud pc;
    for (int i = 0; i < 200; ++i) pc.points.emplace_back(pos(rng), pos(rng), pos(rng));
    EmDiagnostics diag;
    EmConfig cfg;
    cfg.max_iters = 30;
    fit_gmm_em(pc, 1 + trial % 4, cfg, trial, &diag);
    REQUIRE(!diag.ll_trace.empty());
    for (std::size_t i = 1; i < diag.ll_trace.size(); ++i) {
      // monotone except across re-seed boundaries
      if (std::find(diag.reseed_iters.begin(), diag.reseed_iters.end(), static_cast<int>(i - 1)) ==
          diag.reseed_iters.end())
        CHECK(diag.ll_trace[i] >= diag.ll_trace[i - 1] - 1e-9 * std::abs(diag.ll_trace[i - 1]));
    }
  }
}

TEST_CASE("EM requires T >= K", "[gmm]") {
  PointCloud pc;
  pc.points = {Vec3(0, 0, 0), Vec3(1, 0, 0)};
  CHECK_THROWS_AS(fit_gmm_em(pc, 3, {}, 0), MisuseError);
}
