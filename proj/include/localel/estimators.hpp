#ifndef LOCALEL_ESTIMATORS_HPP
#define LOCALEL_ESTIMATORS_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "localel/el_core.hpp"
#include "localel/error.hpp"
#include "localel/numerics.hpp"

namespace localel {

struct EstimateResult {
  Vector theta_hat;
  std::string method;
  bool converged = false;
  double objective_at_opt = std::numeric_limits<double>::quiet_NaN();
  std::optional<LambdaSolution> inner_diagnostics;
};

/// Box constraints; an empty box means unbounded.
struct Bounds {
  Vector lower;
  Vector upper;

  bool empty() const { return lower.empty(); }

  void clip(std::span<double> x) const {
    if (empty()) return;
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = std::clamp(x[j], lower[j], upper[j]);
  }

  bool contains(std::span<const double> x) const {
    if (empty()) return true;
    for (std::size_t j = 0; j < x.size(); ++j)
      if (x[j] < lower[j] || x[j] > upper[j]) return false;
    return true;
  }
};

// ---------------------------------------------------------------------------
// Closed-form linear estimators

/// theta = (X'X)^{-1} X'y.
inline EstimateResult least_squares(std::span<const double> y, const Matrix& X) {
  const std::size_t n = X.rows(), d = X.cols();
  if (y.size() != n) throw Error(ErrorKind::InvalidArgument, "y and X disagree on n");
  Matrix xtx(d, d);
  Vector xty(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto xi = X.row(i);
    for (std::size_t a = 0; a < d; ++a) {
      xty[a] += xi[a] * y[i];
      for (std::size_t b = 0; b < d; ++b) xtx(a, b) += xi[a] * xi[b];
    }
  }
  EstimateResult r;
  r.method = "ls";
  r.theta_hat = cholesky_solve(xtx, xty);
  r.converged = true;
  return r;
}

/// theta = (Z'X)^{-1} Z'y for a just-identified instrument set.
inline EstimateResult instrumental_variables(std::span<const double> y, const Matrix& X, const Matrix& Z) {
  const std::size_t n = X.rows(), d = X.cols();
  if (y.size() != n || Z.rows() != n || Z.cols() != d)
    throw Error(ErrorKind::InvalidArgument, "IV needs n x d regressors and instruments");
  Matrix ztx(d, d);
  Vector zty(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto xi = X.row(i);
    auto zi = Z.row(i);
    for (std::size_t a = 0; a < d; ++a) {
      zty[a] += zi[a] * y[i];
      for (std::size_t b = 0; b < d; ++b) ztx(a, b) += zi[a] * xi[b];
    }
  }
  EstimateResult r;
  r.method = "iv";
  r.theta_hat = lu_solve(ztx, zty);
  r.converged = true;
  return r;
}

// ---------------------------------------------------------------------------
// Derivative-free simplex search (maximization)

struct SimplexOptions {
  /// Initial edge along coordinate j: step_scale * max(|x0_j|, step_floor),
  /// or explicit per-coordinate steps.
  double step_scale = 0.1;
  double step_floor = 1.0;
  Vector steps;
  double tol = 1e-8;
  int max_evals_per_dim = 500;
};

struct SimplexResult {
  Vector argmax;
  double value = -std::numeric_limits<double>::infinity();
  int evaluations = 0;
  bool converged = false;
};

/// Nelder-Mead on -objective with box clipping. A -inf (or NaN) objective acts
/// as a barrier: such points are never kept as vertices.
inline SimplexResult simplex_search(const std::function<double(std::span<const double>)>& objective,
                                    std::span<const double> start, const Bounds& bounds = {},
                                    const SimplexOptions& opts = {}) {
  const std::size_t d = start.size();
  const double neg_inf = -std::numeric_limits<double>::infinity();
  SimplexResult res;
  const int max_evals = opts.max_evals_per_dim * static_cast<int>(d);

  auto eval = [&](std::span<const double> x) {
    ++res.evaluations;
    const double v = objective(x);
    return std::isnan(v) ? neg_inf : v;
  };

  std::vector<Vector> pts(d + 1);
  Vector vals(d + 1);
  Vector origin(start.begin(), start.end());
  bounds.clip(origin);
  double origin_val = eval(origin);
  if (!std::isfinite(origin_val) && origin_val != std::numeric_limits<double>::infinity())
    throw Error(ErrorKind::InvalidArgument, "simplex start must have a finite objective");

  // Clipping can flatten the simplex against a face of the box, so a converged
  // simplex is rebuilt around its best vertex until the best vertex stops moving.
  for (;;) {
    pts.assign(d + 1, origin);
    vals[0] = origin_val;
    for (std::size_t j = 0; j < d; ++j) {
      double step = opts.steps.empty() ? opts.step_scale * std::max(std::abs(start[j]), opts.step_floor) : opts.steps[j];
      // Pull the vertex back toward the start until it leaves the barrier.
      for (int tries = 0; tries < 40; ++tries) {
        pts[j + 1] = pts[0];
        pts[j + 1][j] += step;
        bounds.clip(pts[j + 1]);
        if (pts[j + 1][j] == pts[0][j]) {
          step = -step;
          continue;
        }
        vals[j + 1] = eval(pts[j + 1]);
        if (vals[j + 1] > neg_inf) break;
        step *= (tries % 2 == 0) ? -1.0 : -0.5;
      }
    }

    std::vector<std::size_t> order(d + 1);
    auto centroid_excluding_worst = [&]() {
      Vector c(d, 0.0);
      for (std::size_t v = 0; v < d; ++v)
        for (std::size_t j = 0; j < d; ++j) c[j] += pts[order[v]][j] / static_cast<double>(d);
      return c;
    };
    auto along = [&](const Vector& c, const Vector& w, double coef) {
      Vector p(d);
      for (std::size_t j = 0; j < d; ++j) p[j] = c[j] + coef * (w[j] - c[j]);
      bounds.clip(p);
      return p;
    };

    while (true) {
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] > vals[b]; });
      const Vector& best = pts[order[0]];
      double diameter = 0.0;
      for (std::size_t v = 1; v <= d; ++v) {
        Vector diff(d);
        for (std::size_t j = 0; j < d; ++j) diff[j] = pts[order[v]][j] - best[j];
        diameter = std::max(diameter, norm_inf(diff));
      }
      if (diameter <= opts.tol) {
        res.converged = true;
        break;
      }
      if (res.evaluations >= max_evals) break;

      const std::size_t worst = order[d];
      const double f_best = vals[order[0]];
      const double f_second = vals[order[d - 1]];
      const double f_worst = vals[worst];
      const Vector c = centroid_excluding_worst();

      const Vector xr = along(c, pts[worst], -1.0);
      const double fr = eval(xr);
      if (fr > f_best) {
        const Vector xe = along(c, pts[worst], -2.0);
        const double fe = eval(xe);
        if (fe > fr) {
          pts[worst] = xe;
          vals[worst] = fe;
        } else {
          pts[worst] = xr;
          vals[worst] = fr;
        }
        continue;
      }
      if (fr > f_second) {
        pts[worst] = xr;
        vals[worst] = fr;
        continue;
      }
      const bool outside = fr > f_worst;
      const Vector xc = outside ? along(c, pts[worst], -0.5) : along(c, pts[worst], 0.5);
      const double fc = eval(xc);
      if ((outside && fc >= fr && fc > neg_inf) || (!outside && fc > f_worst)) {
        pts[worst] = xc;
        vals[worst] = fc;
        continue;
      }
      // Shrink toward the best vertex.
      const Vector anchor = pts[order[0]];
      for (std::size_t v = 1; v <= d; ++v) {
        const std::size_t idx = order[v];
        for (std::size_t j = 0; j < d; ++j) pts[idx][j] = anchor[j] + 0.5 * (pts[idx][j] - anchor[j]);
        vals[idx] = eval(pts[idx]);
      }
    }

    std::size_t best = 0;
    for (std::size_t v = 1; v <= d; ++v)
      if (vals[v] > vals[best]) best = v;
    double moved = 0.0;
    for (std::size_t j = 0; j < d; ++j) moved = std::max(moved, std::abs(pts[best][j] - origin[j]));
    const bool restart = res.converged && moved > opts.tol && vals[best] > origin_val && res.evaluations < max_evals;
    origin = pts[best];
    origin_val = vals[best];
    if (!restart) break;
    res.converged = false;
  }
  res.argmax = origin;
  res.value = origin_val;
  return res;
}

// ---------------------------------------------------------------------------
// Moment-based estimators

namespace detail {

inline Vector mean_moment(const Matrix& m) {
  Vector mean(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t a = 0; a < m.cols(); ++a) mean[a] += m(i, a);
  for (double& v : mean) v /= static_cast<double>(m.rows());
  return mean;
}

inline Matrix outer_mean(const Matrix& m) {
  const std::size_t k = m.cols();
  Matrix w(k, k);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) w(a, b) += m(i, a) * m(i, b);
  return (1.0 / static_cast<double>(m.rows())) * std::move(w);
}

}  // namespace detail

struct GmmOptions {
  SimplexOptions simplex;
  /// Keep the identity weight in the second step.
  bool identity_weight = false;
};

/// Two-step GMM: minimize mbar'mbar, then mbar' W^{-1} mbar with W the
/// outer-product matrix at the first-step estimate.
inline EstimateResult gmm_two_step(const MomentModel& model, const Sample& sample, std::span<const double> theta_init,
                                   const Bounds& bounds = {}, const GmmOptions& opts = {}) {
  if (!bounds.contains(theta_init)) throw Error(ErrorKind::InvalidArgument, "theta_init outside bounds");
  const double neg_inf = -std::numeric_limits<double>::infinity();
  auto quad = [&](const Matrix& weight) {
    return [&, weight](std::span<const double> theta) {
      const Matrix m = model.moments(sample, theta);
      if (!all_finite(m.values())) return neg_inf;
      const Vector mbar = detail::mean_moment(m);
      return -dot(mbar, weight * mbar);
    };
  };
  const std::size_t k = model.moment_dim();
  const SimplexResult first = simplex_search(quad(Matrix::identity(k)), theta_init, bounds, opts.simplex);

  Matrix weight = Matrix::identity(k);
  if (!opts.identity_weight) {
    const Matrix w = detail::outer_mean(model.moments(sample, first.argmax));
    weight = invert_spd_ridge(symmetrized(w)).inverse;
  }
  const SimplexResult second = simplex_search(quad(weight), first.argmax, bounds, opts.simplex);

  EstimateResult r;
  r.method = "gmm";
  r.theta_hat = second.argmax;
  r.converged = first.converged && second.converged && all_finite(second.argmax);
  r.objective_at_opt = -second.value;
  return r;
}

/// Global EL: simplex search maximizing n*Lambda_n(theta); points where the
/// dual has no solution are a -inf barrier.
inline EstimateResult el_global(const MomentModel& model, const Sample& sample, std::span<const double> theta_init,
                                const Bounds& bounds = {}, const SimplexOptions& opts = {},
                                const SolverOptions& solver = {}) {
  if (!bounds.contains(theta_init)) throw Error(ErrorKind::InvalidArgument, "theta_init outside bounds");
  const double neg_inf = -std::numeric_limits<double>::infinity();
  auto objective = [&](std::span<const double> theta) {
    try {
      const Matrix m = model.moments(sample, theta);
      if (!all_finite(m.values())) return neg_inf;
      const LambdaSolution sol = solve_lambda(m, solver);
      if (!sol.converged) return neg_inf;
      double s = 0.0;
      for (double lw : log_weights(m, sol.lambda)) s += lw;
      return -s;
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::DegenerateMoments || e.kind() == ErrorKind::NonFinite) return neg_inf;
      throw;
    }
  };
  if (!(objective(theta_init) > neg_inf))
    throw Error(ErrorKind::AllInfeasible, "dual has no solution at theta_init=" + format_point(theta_init));
  const SimplexResult s = simplex_search(objective, theta_init, bounds, opts);
  if (!(s.value > neg_inf)) throw Error(ErrorKind::AllInfeasible, "no evaluated point has zero in the moment hull");

  EstimateResult r;
  r.method = "el";
  r.theta_hat = s.argmax;
  r.converged = s.converged;
  r.objective_at_opt = s.value;
  r.inner_diagnostics = solve_lambda(model, sample, s.argmax, solver);
  return r;
}

}  // namespace localel

#endif  // LOCALEL_ESTIMATORS_HPP
