#include <cmath>

#include <gtest/gtest.h>

#include "localel/el_local.hpp"
#include "localel/random.hpp"

using namespace localel;

namespace {

MomentModel iv_model() {
  MomentModel::Evaluate eval = [](auto obs, auto theta, auto m) { m[0] = obs[2] * (obs[0] - obs[1] * theta[0]); };
  MomentModel::Jacobian jac = [](auto obs, auto, auto j) { j[0] = -obs[2] * obs[1]; };
  return MomentModel(1, 1, eval, jac);
}

// Clean linear IV: z = 1 + 0.2 N, x = z + u, y = 2x + 0.1u + e.
Sample iv_sample(std::size_t n, std::uint64_t seed) {
  RngStream rng(seed, 0);
  Vector y(n), x(n), z(n);
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = 1 + 0.2 * rng.normal();
    const double u = rng.normal();
    x[i] = z[i] + u;
    y[i] = 2 * x[i] + 0.1 * u + rng.normal();
  }
  return Sample::from_columns({y, x, z});
}

double iv_estimate(const Sample& s) {
  double zy = 0, zx = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    zy += s.row(i)[2] * s.row(i)[0];
    zx += s.row(i)[2] * s.row(i)[1];
  }
  return zy / zx;
}

// q(theta) = -sqrt(1 + theta^2): Newton from |theta| > 1 runs away from 0.
struct PseudoHuber {
  std::size_t param_dim() const { return 1; }
  static double q(double t) { return -std::sqrt(1 + t * t); }
  double log_ratio(std::span<const double> a, std::span<const double> b) const { return q(a[0]) - q(b[0]); }
};

// A criterion whose curvature is negative everywhere: K can never be made PD.
struct Convex {
  std::size_t param_dim() const { return 1; }
  double log_ratio(std::span<const double> a, std::span<const double> b) const { return a[0] * a[0] - b[0] * b[0]; }
};

}  // namespace

TEST(Sparsify, HandArithmetic) {
  // round(2.069 / 0.0316) = round(65.47...) = 65 and 65 * 0.0316 = 2.054.
  EXPECT_NEAR(sparsify(Vector{2.069}, 0.0316)[0], 2.054, 1e-12);
  EXPECT_NEAR(sparsify(Vector{2.069}, 0.0316, 2.0)[0], 33 * 0.0632, 1e-12);
}

TEST(Sparsify, IdempotentAndRoundsToOrigin) {
  const Vector once = sparsify(Vector{2.069, -0.7}, 0.0316);
  EXPECT_EQ(sparsify(once, 0.0316), once);
  EXPECT_EQ(sparsify(Vector{0.01}, 0.0316)[0], 0.0);
  EXPECT_EQ(sparsify(Vector{-0.015}, 0.0316)[0], 0.0);
}

TEST(Sparsify, DistanceBound) {
  RngStream rng(3, 0);
  for (int k = 0; k < 200; ++k) {
    const Vector th{5 * rng.normal(), 5 * rng.normal(), 5 * rng.normal()};
    const double delta = 0.001 + rng.uniform(), c = 0.5 + rng.uniform();
    const Vector s = sparsify(th, delta, c);
    double d2 = 0;
    for (int j = 0; j < 3; ++j) d2 += (s[j] - th[j]) * (s[j] - th[j]);
    EXPECT_LE(std::sqrt(d2), c * delta / 2 * std::sqrt(3.0) + 1e-12);
  }
  EXPECT_THROW(sparsify(Vector{1.0}, 0.1, 0.0), Error);
}

TEST(LocalQuadratic, ScalarExactQuadratic) {
  const double a = 0.7, b = 2.5, delta = 0.0316, u = 2.0;
  const QuadraticSurrogate q({1.0}, {a}, Matrix{{b}});
  const Matrix dirs{{u}};
  const LocalQuadratic lq = local_quadratic(q, Vector{1.0}, delta, dirs);
  EXPECT_NEAR(lq.direction_values(0, 0), b * delta * delta * u * u, 1e-14);
  EXPECT_NEAR(lq.direction_linear[0], a * delta * u, 1e-14);
  EXPECT_NEAR(lq.K(0, 0), b * delta * delta, 1e-14);
  EXPECT_NEAR(lq.S[0], a * delta, 1e-14);
  EXPECT_NEAR(build_S(q, Vector{1.0}, delta, dirs, lq.direction_values)[0], a * delta * u / u, 1e-14);
}

TEST(LocalQuadratic, MatrixCaseRecoversCurvatureAndArgmax) {
  const Matrix B{{3.0, 0.8}, {0.8, 1.5}};
  const Vector a{0.4, -0.9};
  const Vector c{2.0, -1.0};
  const QuadraticSurrogate q(c, a, B);
  const Matrix U{{1.0, 0.5}, {0.2, 1.0}};  // non-orthogonal directions as columns
  const double delta = 0.05;
  const LocalQuadratic lq = local_quadratic(q, c, delta, U);
  const Matrix expected_dir = (delta * delta) * (U.transpose() * B * U);
  EXPECT_LT(frobenius(lq.direction_values - expected_dir), 1e-12);
  EXPECT_LT(frobenius(lq.K - (delta * delta) * B), 1e-12);
  EXPECT_NEAR(lq.S[0], delta * a[0], 1e-12);
  EXPECT_NEAR(lq.S[1], delta * a[1], 1e-12);

  const OneStep step = one_step(c, lq.K, lq.S, delta);
  const Vector argmax = q.argmax();
  EXPECT_NEAR(step.T[0], argmax[0], 1e-10);
  EXPECT_NEAR(step.T[1], argmax[1], 1e-10);
  for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(step.T[j], c[j] + delta * step.tau[j], 1e-15);
  EXPECT_EQ(lq.K(0, 1), lq.K(1, 0));
}

TEST(LocalQuadratic, IllConditionedDirections) {
  const QuadraticSurrogate q({0.0, 0.0}, {1.0, 1.0}, Matrix::identity(2));
  const Matrix U{{1.0, 1.0}, {1.0, 1.0 + 1e-12}};
  EXPECT_THROW(
      {
        try {
          local_quadratic(q, Vector{0.0, 0.0}, 0.1, U);
        } catch (const Error& e) {
          EXPECT_EQ(e.kind(), ErrorKind::IllConditionedDirections);
          throw;
        }
      },
      Error);
}

TEST(LocalQuadratic, FixedPointGivesZeroScore) {
  const QuadraticSurrogate q({1.5}, {0.0}, Matrix{{4.0}});
  const LocalQuadratic lq = local_quadratic(q, Vector{1.5}, 0.03, Matrix::identity(1));
  EXPECT_NEAR(lq.S[0], 0.0, 1e-15);
  EXPECT_NEAR(one_step(Vector{1.5}, lq.K, lq.S, 0.03).T[0], 1.5, 1e-15);
}

TEST(OneStep, Examples) {
  EXPECT_NEAR(one_step(Vector{2.0}, Matrix{{1.0}}, Vector{0.5}, 0.0316).T[0], 2.0158, 1e-12);
  EXPECT_EQ(one_step(Vector{2.0}, Matrix{{1.0}}, Vector{0.0}, 0.0316).T[0], 2.0);
  EXPECT_THROW(one_step(Vector{2.0}, Matrix{{-1.0}}, Vector{0.5}, 0.0316), Error);
}

TEST(WeightedS, ExactOnQuadraticsAndLines) {
  // f(t) = a t - b t^2 / 2 with h = delta |u|:
  // 3/2 (a - b h / 2) - 1/2 (a - 3 b h / 2) = a, so the weights cancel curvature.
  for (double b : {0.0, 1.0, 7.5}) {
    const QuadraticSurrogate q({0.3}, {1.25}, Matrix{{b}});
    EXPECT_NEAR(weighted_S(q, Vector{0.3}, 0.02, Vector{1.0}), 1.25, 1e-10) << "b=" << b;
    EXPECT_NEAR(weighted_S(q, Vector{0.3}, 0.02, Vector{3.0}), 1.25, 1e-10) << "b=" << b;
  }
}

TEST(Iterate, ExactQuadraticConvergesAfterOneStep) {
  const QuadraticSurrogate q({0.0}, {1.3}, Matrix{{2.0}});
  LocalConfig cfg;
  const double delta = 0.01;
  const LocalFit fit = iterate_local(q, Vector{0.2}, cfg, delta);
  ASSERT_TRUE(fit.converged);
  ASSERT_GE(fit.trace.size(), 1u);
  EXPECT_LE(fit.trace.size(), 2u);  // the second row only confirms tau = 0
  EXPECT_NEAR(fit.trace[0].estimate[0], q.argmax()[0], 1e-10);
  EXPECT_NEAR(fit.T[0], q.argmax()[0], 1e-10);
  EXPECT_NEAR(fit.theta_star[0], 0.2, 1e-12);
}

TEST(Iterate, StartAtOptimumGivesSingleRow) {
  // argmax 0.5 lies on the lattice of mesh 0.01.
  const QuadraticSurrogate q({0.0}, {1.0}, Matrix{{2.0}});
  const LocalFit fit = iterate_local(q, Vector{0.5}, LocalConfig{}, 0.01);
  ASSERT_EQ(fit.trace.size(), 1u);
  EXPECT_TRUE(fit.converged);
  EXPECT_NEAR(fit.T[0], 0.5, 1e-12);
}

TEST(Iterate, MaxIterOneGivesOneRow) {
  const LocalConfig cfg{.max_iter = 1};
  const LocalFit fit = iterate_local(PseudoHuber{}, Vector{0.6}, cfg, 0.01);
  EXPECT_EQ(fit.trace.size(), 1u);
  EXPECT_FALSE(fit.converged);
}

TEST(Iterate, RunawayIterationReportsBestVisitedPoint) {
  LocalConfig cfg;
  cfg.max_iter = 3;
  const LocalFit fit = iterate_local(PseudoHuber{}, Vector{1.5}, cfg, 0.001);
  EXPECT_FALSE(fit.converged);
  ASSERT_EQ(fit.trace.size(), 3u);
  // Newton on -sqrt(1 + t^2) maps t to -t^3: 1.5 -> -3.4 -> 38 -> ...
  EXPECT_GT(std::abs(fit.trace.back().estimate[0]), 30.0);
  EXPECT_EQ(fit.selected_iteration, 0);
  EXPECT_EQ(fit.T, fit.theta_star);
}

TEST(Iterate, ImprovingButUnfinishedPicksLatestBest) {
  LocalConfig cfg;
  cfg.max_iter = 2;
  const LocalFit fit = iterate_local(PseudoHuber{}, Vector{0.9}, cfg, 0.001);
  EXPECT_FALSE(fit.converged);
  EXPECT_EQ(fit.selected_iteration, 2);
  EXPECT_EQ(fit.T, fit.trace[1].estimate);
}

TEST(Iterate, PersistentFailureKeepsThetaStar) {
  const LocalFit fit = iterate_local(Convex{}, Vector{1.0}, LocalConfig{}, 0.01);
  EXPECT_FALSE(fit.converged);
  EXPECT_FALSE(fit.failure.empty());
  EXPECT_NE(fit.failure.find("SingularAfterRidge"), std::string::npos);
  EXPECT_EQ(fit.T, fit.theta_star);
}

TEST(Iterate, BoxClipsIteratesAndTau) {
  const QuadraticSurrogate q({0.0}, {1.0}, Matrix{{1.0}});  // argmax 1.0
  const Bounds box{{-0.5}, {0.25}};
  const double delta = 0.01;
  const LocalFit fit = iterate_local(q, Vector{0.0}, LocalConfig{}, delta, {}, box);
  for (const auto& row : fit.trace) EXPECT_LE(row.estimate[0], 0.25);
  EXPECT_TRUE(fit.converged);
  EXPECT_NEAR(fit.T[0], 0.25, 1e-12);
  EXPECT_NEAR(fit.trace[0].tau_norm, 0.25 / delta, 1e-9);
}

TEST(ElLocal, KMatchesA2OnCleanData) {
  const MomentModel model = iv_model();
  const Sample s = iv_sample(10000, 11);
  const ElCriterion crit(model, s);
  const double delta = 0.01;
  const Vector theta0{2.0};
  const Matrix K = build_K(crit, theta0, delta, Matrix::identity(1));
  EXPECT_NO_THROW(cholesky_factor(K));
  EXPECT_LE(validate_against_A2(model, s, theta0, K, delta), 0.1);

  // Scalar plug-in formula for the same oracle.
  double zx = 0, m2 = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto r = s.row(i);
    zx += r[2] * r[1];
    m2 += std::pow(r[2] * (r[0] - 2 * r[1]), 2);
  }
  const double n = static_cast<double>(s.size());
  const double a2 = (zx / n) * (zx / n) / (m2 / n);
  EXPECT_NEAR(validate_against_A2(model, s, theta0, Matrix{{a2 * delta * delta}}, delta), 0.0, 1e-12);
}

TEST(ElLocal, A2NeedsJacobian) {
  const MomentModel bare(1, 1, [](auto obs, auto theta, auto m) { m[0] = obs[0] - theta[0]; });
  const Sample s = Sample::from_columns({Vector{1.0, 2.0, 4.0}});
  try {
    validate_against_A2(bare, s, Vector{2.0}, Matrix{{1.0}}, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NoJacobian);
  }
}

TEST(ElLocal, DirectionalHessianAgreesWithDefinition) {
  const QuadraticSurrogate q({0.0, 0.0}, {0.2, 0.1}, Matrix{{2.0, 0.3}, {0.3, 1.0}});
  const double delta = 0.05;
  const Matrix K = build_K(q, Vector{0.1, -0.2}, delta, Matrix::identity(2));
  const DirectionalHessian h = hessian_directional(q, Vector{0.1, -0.2}, delta);
  EXPECT_LE(frobenius(h.K - K) / frobenius(K), 1e-6);
  EXPECT_TRUE(h.invertible);

  const MomentModel model = iv_model();
  const Sample s = iv_sample(10000, 5);
  const ElCriterion crit(model, s);
  const double dn = 0.01;
  const Vector th{2.0};
  const Matrix Kd = build_K(crit, th, dn, Matrix::identity(1));
  const DirectionalHessian hd = hessian_directional(crit, th, dn);
  EXPECT_LE(std::abs(hd.K(0, 0) - Kd(0, 0)) / Kd(0, 0), 0.05);
}

TEST(ElLocal, StepThreeScoreAgreesWithWeightedForm) {
  const MomentModel model = iv_model();
  const Sample s = iv_sample(10000, 8);
  const ElCriterion crit(model, s);
  const double delta = 0.01;
  const Vector th{2.02};
  const LocalQuadratic lq = local_quadratic(crit, th, delta, Matrix::identity(1));
  const double ws = weighted_S(crit, th, delta, Vector{1.0});
  EXPECT_LE(std::abs(lq.S[0] - delta * ws), 2 * delta);
  EXPECT_LE(std::abs(lq.S[0] / delta - ws), 0.05 * std::abs(ws));
}

TEST(ElLocal, DirectionalGradientSignAndFlatness) {
  const MomentModel model = iv_model();
  const Sample s = iv_sample(2000, 4);
  const ElCriterion crit(model, s);
  const double th_hat = iv_estimate(s);
  for (double off : {-0.05, 0.05}) {
    const Vector th{th_hat + off};
    const double g = directional_grad_logp(crit, th, Vector{1.0}).value;
    const double secant = crit.log_ratio(Vector{th[0] + 1e-4}, th);
    EXPECT_EQ(std::signbit(g), std::signbit(secant)) << off;
    EXPECT_EQ(std::signbit(g), off > 0);
  }
  const QuadraticSurrogate flat({0.0}, {0.0}, Matrix{{0.0}});
  EXPECT_NEAR(directional_grad_logp(flat, Vector{0.4}, Vector{1.0}).value, 0.0, 1e-8);
}

TEST(ElLocal, CleanIterationEndsNearElEstimate) {
  const MomentModel model = iv_model();
  const Sample s = iv_sample(1000, 21);
  LocalConfig cfg;
  cfg.delta_scale = 0.01;
  const LocalFit fit = iterate(model, s, Vector{2.1}, cfg);
  ASSERT_TRUE(fit.converged) << fit.failure;
  EXPECT_LE(fit.trace.back().tau_norm, cfg.tau_tol);
  EXPECT_NEAR(fit.T[0], iv_estimate(s), 1e-4);
  for (const auto& row : fit.trace) EXPECT_GE(row.lambda_norm, 0.0);
}

TEST(Bisection, ResidualAtReturnedPoint) {
  const MomentModel model = iv_model();
  const Sample s = iv_sample(1000, 9);
  const Vector th{iv_estimate(s) + 0.03};
  const DirectionChoice c = choose_direction_bisection(model, s, th, th[0] - 1, th[0] + 1, 0.0316);
  ASSERT_FALSE(c.fallback);
  const LambdaSolution sol = solve_lambda(model, s, th);
  // The reflection of theta* about the IV estimate solves the linear equation.
  EXPECT_NEAR(c.theta_tilde[0], 2 * iv_estimate(s) - th[0], 1e-9);
  EXPECT_LE(std::abs(c.residual), 1e-10 * s.size() * std::max(1.0, std::abs(sol.lambda[0])));
}

TEST(Bisection, ZeroLambdaFallsBack) {
  // Residuals +-1 around theta = 1 with z = 1: the moment sum is exactly zero.
  const Sample s = Sample::from_columns({Vector{2.0, 0.0, 2.0, 0.0}, Vector{1.0, 1.0, 1.0, 1.0}, Vector{1, 1, 1, 1}});
  const DirectionChoice c = choose_direction_bisection(iv_model(), s, Vector{1.0}, 0.0, 2.0, 0.1);
  EXPECT_TRUE(c.fallback);
  EXPECT_NEAR(c.theta_tilde[0], 1.1, 1e-15);
}

TEST(Bisection, NoSignChangeFallsBack) {
  const MomentModel model = iv_model();
  const Sample s = iv_sample(500, 2);
  const Vector th{iv_estimate(s) + 0.05};
  // Bracket entirely on the same side as theta*.
  const DirectionChoice c = choose_direction_bisection(model, s, th, th[0], th[0] + 0.5, 0.02);
  EXPECT_TRUE(c.fallback);
  EXPECT_NEAR(c.theta_tilde[0], th[0] + 0.02, 1e-15);
}

TEST(ElLocal, KSymmetricAndPositiveOnCleanFixtures) {
  const MomentModel model = iv_model();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Sample s = iv_sample(1000, seed);
    const ElCriterion crit(model, s);
    const Matrix K = build_K(crit, Vector{2.0}, 1 / std::sqrt(1000.0), Matrix::identity(1));
    EXPECT_NO_THROW(invert_spd_ridge(K, 0.0));
    EXPECT_EQ(invert_spd_ridge(K, 0.0).ridge_used, 0.0);
  }
}
