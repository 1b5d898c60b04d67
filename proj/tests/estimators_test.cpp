#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "localel/estimators.hpp"
#include "localel/experiments.hpp"
#include "localel/random.hpp"

using namespace localel;

namespace {

// Gauss-Jordan inverse with full pivot search: a different solve path from
// both Cholesky and the LU used in the library.
Matrix gauss_jordan_inverse(Matrix a) {
  const std::size_t n = a.rows();
  Matrix inv = Matrix::identity(n);
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(p, c))) p = r;
    for (std::size_t j = 0; j < n; ++j) {
      std::swap(a(c, j), a(p, j));
      std::swap(inv(c, j), inv(p, j));
    }
    const double piv = a(c, c);
    for (std::size_t j = 0; j < n; ++j) {
      a(c, j) /= piv;
      inv(c, j) /= piv;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a(r, c);
      for (std::size_t j = 0; j < n; ++j) {
        a(r, j) -= f * a(c, j);
        inv(r, j) -= f * inv(c, j);
      }
    }
  }
  return inv;
}

Matrix random_matrix(RngStream& rng, std::size_t n, std::size_t d) {
  Matrix m(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) m(i, j) = rng.normal();
  return m;
}

Sample clean_linear(std::size_t n, std::uint64_t seed) {
  LinearDGPConfig cfg;
  cfg.n = n;
  RngStream rng(seed, 0);
  return linear_sample(gen_linear(cfg, rng));
}

double log_el_value(const MomentModel& model, const Sample& s, double theta) {
  return log_el(model, s, Vector{theta}).value;
}

}  // namespace

TEST(LeastSquares, Examples) {
  EXPECT_NEAR(least_squares(Vector{2.0, 4.0}, Matrix{{1.0}, {2.0}}).theta_hat[0], 2.0, 1e-15);

  RngStream rng(1, 0);
  const Matrix X = random_matrix(rng, 50, 3);
  const Vector theta{1.5, -2.0, 0.25};
  const Vector y = X * theta;
  const EstimateResult r = least_squares(y, X);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(r.theta_hat[j], theta[j], 1e-12);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.method, "ls");
}

TEST(LeastSquares, MatchesDenseNormalEquationsAndIsOrthogonal) {
  RngStream rng(2, 0);
  const Matrix X = random_matrix(rng, 200, 4);
  Vector y(200);
  for (auto& v : y) v = rng.normal();
  const Vector got = least_squares(y, X).theta_hat;
  const Vector oracle = gauss_jordan_inverse(X.transpose() * X) * (X.transpose() * y);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(got[j], oracle[j], 1e-12);
  Vector resid = y;
  const Vector fit = X * got;
  for (std::size_t i = 0; i < 200; ++i) resid[i] -= fit[i];
  for (double v : X.transpose() * resid) EXPECT_NEAR(v, 0.0, 1e-10);
}

TEST(LeastSquares, RankDeficientThrows) {
  EXPECT_THROW(least_squares(Vector{1.0, 2.0}, Matrix{{1.0, 2.0}, {2.0, 4.0}}), Error);
}

TEST(InstrumentalVariables, Identities) {
  RngStream rng(3, 0);
  const Matrix X = random_matrix(rng, 100, 2);
  const Matrix Z = random_matrix(rng, 100, 2);
  Vector y(100);
  for (auto& v : y) v = rng.normal();
  const Vector iv_xx = instrumental_variables(y, X, X).theta_hat;
  const Vector ls = least_squares(y, X).theta_hat;
  for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(iv_xx[j], ls[j], 1e-12);

  const Vector exact = instrumental_variables(X * Vector{0.5, 3.0}, X, Z).theta_hat;
  EXPECT_NEAR(exact[0], 0.5, 1e-12);
  EXPECT_NEAR(exact[1], 3.0, 1e-12);

  const Vector th = instrumental_variables(y, X, Z).theta_hat;
  Vector resid = y;
  const Vector fit = X * th;
  for (std::size_t i = 0; i < 100; ++i) resid[i] -= fit[i];
  for (double v : Z.transpose() * resid) EXPECT_NEAR(v, 0.0, 1e-10);
}

TEST(InstrumentalVariables, SingularThrowsNotInvertible) {
  const Matrix X{{1.0}, {2.0}, {3.0}};
  const Matrix Z{{1.0}, {-2.0}, {1.0}};  // Z'X = 0
  try {
    instrumental_variables(Vector{1.0, 2.0, 3.0}, X, Z);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotInvertible);
  }
}

TEST(Simplex, QuadraticBowl) {
  const Vector a{1.0, -2.0, 0.5};
  const auto f = [&](std::span<const double> t) {
    double s = 0;
    for (std::size_t j = 0; j < 3; ++j) s += (t[j] - a[j]) * (t[j] - a[j]);
    return -s;
  };
  const SimplexResult r = simplex_search(f, Vector{0.0, 0.0, 0.0});
  EXPECT_TRUE(r.converged);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(r.argmax[j], a[j], 1e-6);
  EXPECT_LE(r.evaluations, 1500);
}

TEST(Simplex, NeverStepsIntoBarrier) {
  const double neg_inf = -std::numeric_limits<double>::infinity();
  // Maximum of -(t-2)^2 lies inside the barrier t > 1; the answer is the edge.
  const auto f = [&](std::span<const double> t) { return t[0] > 1.0 ? neg_inf : -(t[0] - 2) * (t[0] - 2); };
  const SimplexResult r = simplex_search(f, Vector{0.0});
  EXPECT_LE(r.argmax[0], 1.0);
  EXPECT_NEAR(r.argmax[0], 1.0, 1e-6);
  EXPECT_TRUE(std::isfinite(r.value));
}

TEST(Simplex, BoxClipping) {
  const auto f = [](std::span<const double> t) { return -(t[0] - 5) * (t[0] - 5) - t[1] * t[1]; };
  const SimplexResult r = simplex_search(f, Vector{0.0, 1.0}, Bounds{{-1.0, -1.0}, {2.0, 2.0}});
  EXPECT_NEAR(r.argmax[0], 2.0, 1e-6);
  EXPECT_NEAR(r.argmax[1], 0.0, 1e-4);
}

TEST(Simplex, RosenbrockAgainstGrid) {
  const auto f = [](std::span<const double> t) {
    return -(100 * std::pow(t[1] - t[0] * t[0], 2) + std::pow(1 - t[0], 2));
  };
  SimplexOptions opts;
  opts.max_evals_per_dim = 2000;
  const SimplexResult r = simplex_search(f, Vector{-1.2, 1.0}, {}, opts);
  double grid_best = -1e300;
  for (int i = 0; i <= 400; ++i)
    for (int j = 0; j <= 400; ++j) {
      const Vector t{-2.0 + 4.0 * i / 400, -1.0 + 4.0 * j / 400};
      grid_best = std::max(grid_best, f(t));
    }
  EXPECT_GE(r.value, grid_best - 1e-4);
}

TEST(Simplex, FlatObjectiveKeepsStart) {
  const SimplexResult r = simplex_search([](std::span<const double>) { return 1.0; }, Vector{0.3, -0.4});
  EXPECT_EQ(r.argmax, (Vector{0.3, -0.4}));
}

TEST(Gmm, JustIdentifiedEqualsIv) {
  const Sample s = clean_linear(1000, 4);
  const LinearColumns c = linear_columns(s);
  const double iv = instrumental_variables(c.y, c.X, c.Z).theta_hat[0];
  const double ls = least_squares(c.y, c.X).theta_hat[0];
  const EstimateResult g = gmm_two_step(linear_moment_model(), s, Vector{ls});
  EXPECT_NEAR(g.theta_hat[0], iv, 1e-6);
  EXPECT_EQ(g.method, "gmm");
}

TEST(Gmm, IdentityWeightMatchesFirstStep) {
  // Over-identified: instruments (z, z^2) for a scalar slope.
  const Sample s = clean_linear(500, 6);
  const MomentModel model(1, 2, [](auto obs, auto th, auto m) {
    const double e = obs[0] - obs[1] * th[0];
    m[0] = obs[2] * e;
    m[1] = obs[2] * obs[2] * e;
  });
  GmmOptions opts;
  opts.identity_weight = true;
  const EstimateResult g = gmm_two_step(model, s, Vector{1.5}, {}, opts);
  const auto q = [&](std::span<const double> th) {
    const Vector mbar = detail::mean_moment(model.moments(s, th));
    return -dot(mbar, mbar);
  };
  const SimplexResult first = simplex_search(q, Vector{1.5});
  EXPECT_NEAR(g.theta_hat[0], first.argmax[0], 1e-10);
}

TEST(Gmm, ExactMomentsRecoverTruth) {
  // y = 2 x exactly: m = z (y - x theta) vanishes only at theta = 2.
  Vector y, x, z;
  for (int i = 1; i <= 20; ++i) {
    x.push_back(i * 0.3);
    y.push_back(2 * i * 0.3);
    z.push_back(1 + 0.1 * i);
  }
  const Sample s = Sample::from_columns({y, x, z});
  EXPECT_NEAR(gmm_two_step(linear_moment_model(), s, Vector{1.0}).theta_hat[0], 2.0, 1e-6);
}

TEST(ElGlobal, MatchesGridArgmax) {
  const MomentModel model = linear_moment_model();
  const Sample s = clean_linear(300, 7);
  const EstimateResult el = el_global(model, s, Vector{1.9});
  double best = -1e300, arg = 0;
  const double h = 1e-4;
  for (int i = 0; i <= 4000; ++i) {
    const double t = 1.8 + h * i;
    const double v = log_el_value(model, s, t);
    if (v > best) {
      best = v;
      arg = t;
    }
  }
  EXPECT_NEAR(el.theta_hat[0], arg, h);
  EXPECT_GE(el.objective_at_opt, log_el_value(model, s, 1.9) * static_cast<double>(s.size()) - 1e-9);
  ASSERT_TRUE(el.inner_diagnostics.has_value());
  EXPECT_TRUE(el.inner_diagnostics->converged);
}

TEST(ElGlobal, ConsistencyRate) {
  const MomentModel model = linear_moment_model();
  std::vector<double> err;
  const std::size_t n = 4000;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const Sample s = clean_linear(n, 100 + seed);
    err.push_back(std::abs(el_global(model, s, Vector{2.0}).theta_hat[0] - 2.0));
  }
  std::sort(err.begin(), err.end());
  EXPECT_LE(0.5 * (err[24] + err[25]), 3 / std::sqrt(static_cast<double>(n)));
}

TEST(ElGlobal, FlatMomentsKeepStart) {
  const MomentModel model(1, 1, [](auto obs, auto, auto m) { m[0] = obs[0]; });
  const Sample s = Sample::from_columns({Vector{-1.0, 0.5, 0.7, -0.1}});
  EXPECT_EQ(el_global(model, s, Vector{0.42}).theta_hat[0], 0.42);
}

TEST(ElGlobal, InfeasibleStartThrows) {
  const MomentModel model(1, 1, [](auto obs, auto th, auto m) { m[0] = obs[0] - th[0]; });
  const Sample s = Sample::from_columns({Vector{1.0, 2.0, 3.0}});
  try {
    el_global(model, s, Vector{10.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::AllInfeasible);
  }
  EXPECT_NEAR(el_global(model, s, Vector{1.5}).theta_hat[0], 2.0, 1e-6);
}
