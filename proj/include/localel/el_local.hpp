#ifndef LOCALEL_EL_LOCAL_HPP
#define LOCALEL_EL_LOCAL_HPP

#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "localel/el_core.hpp"
#include "localel/error.hpp"
#include "localel/estimators.hpp"
#include "localel/numerics.hpp"

namespace localel {

// ---------------------------------------------------------------------------
// Criteria
//
// The local construction only needs the log-likelihood ratio
// Lambda_n(theta1, theta2) of implied probabilities. Anything that provides it
// can be localized; the empirical-likelihood criterion is the production one
// and QuadraticSurrogate is an exact linear-quadratic stand-in for tests.

template <class C>
concept LocalCriterion = requires(const C& c, std::span<const double> a, std::span<const double> b) {
  { c.param_dim() } -> std::convertible_to<std::size_t>;
  { c.log_ratio(a, b) } -> std::convertible_to<double>;
};

/// Empirical-likelihood criterion over a fixed sample.
class ElCriterion {
 public:
  ElCriterion(const MomentModel& model, const Sample& sample, SolverOptions opts = {})
      : model_(&model), sample_(&sample), opts_(opts) {}

  std::size_t param_dim() const { return model_->param_dim(); }
  std::size_t sample_size() const { return sample_->size(); }
  const MomentModel& model() const { return *model_; }
  const Sample& sample() const { return *sample_; }
  const SolverOptions& solver_options() const { return opts_; }

  struct Point {
    Matrix moments;
    LambdaSolution solution;
    Vector log_w;  // log(1 + lambda'm_i)
  };

  /// Solves the dual at theta; throws InnerSolveFailed naming the point.
  Point solve(std::span<const double> theta) const {
    Point pt;
    pt.moments = model_->moments(*sample_, theta);
    pt.solution = solve_lambda(pt.moments, opts_);
    if (!pt.solution.converged)
      throw Error(ErrorKind::InnerSolveFailed, "dual solve did not converge at theta=" + format_point(theta));
    pt.log_w = log_weights(pt.moments, pt.solution.lambda);
    return pt;
  }

  double log_ratio(std::span<const double> a, std::span<const double> b) const {
    return ratio_of(solve(a).log_w, solve(b).log_w);
  }

  /// theta -> Lambda_n(theta, anchor) with the anchor solved once.
  std::function<double(std::span<const double>)> anchored(std::span<const double> anchor) const {
    Vector base = solve(anchor).log_w;
    return [this, base = std::move(base)](std::span<const double> theta) { return ratio_of(solve(theta).log_w, base); };
  }

  double lambda_norm(std::span<const double> theta) const { return norm2(solve(theta).solution.lambda); }

  /// Scalar path whose derivative at t = 0 is the directional derivative of the
  /// average log implied probability: the numerator lambda(theta+t u)'m_i(theta+t u)
  /// moves while the chain-rule factor 1/(1 + lambda'm_i) stays at theta.
  std::function<double(double)> score_path(std::span<const double> theta, std::span<const double> direction) const {
    Point base = solve(theta);
    Vector inv_w(base.log_w.size());
    for (std::size_t i = 0; i < inv_w.size(); ++i) inv_w[i] = std::exp(-base.log_w[i]);
    Vector origin(theta.begin(), theta.end());
    Vector dir(direction.begin(), direction.end());
    return [this, origin = std::move(origin), dir = std::move(dir), inv_w = std::move(inv_w)](double t) {
      Vector th(origin.size());
      for (std::size_t j = 0; j < th.size(); ++j) th[j] = origin[j] + t * dir[j];
      const Point pt = solve(th);
      double s = 0.0;
      for (std::size_t i = 0; i < inv_w.size(); ++i) s += dot(pt.moments.row(i), pt.solution.lambda) * inv_w[i];
      return -s / static_cast<double>(inv_w.size());
    };
  }

 private:
  static double ratio_of(const Vector& log_w_a, const Vector& log_w_b) {
    double s = 0.0;
    for (std::size_t i = 0; i < log_w_a.size(); ++i) s += log_w_b[i] - log_w_a[i];
    return s / static_cast<double>(log_w_a.size());
  }

  const MomentModel* model_;
  const Sample* sample_;
  SolverOptions opts_;
};

/// Exactly linear-quadratic criterion around a centre c:
///   q(theta) = a'(theta - c) - 1/2 (theta - c)' B (theta - c),
///   Lambda(theta1, theta2) = q(theta1) - q(theta2).
class QuadraticSurrogate {
 public:
  QuadraticSurrogate(Vector centre, Vector linear, Matrix curvature)
      : centre_(std::move(centre)), linear_(std::move(linear)), curvature_(std::move(curvature)) {}

  std::size_t param_dim() const { return centre_.size(); }
  double log_ratio(std::span<const double> a, std::span<const double> b) const { return q(a) - q(b); }
  double lambda_norm(std::span<const double>) const { return 0.0; }

  double q(std::span<const double> theta) const {
    Vector h(theta.size());
    for (std::size_t j = 0; j < h.size(); ++j) h[j] = theta[j] - centre_[j];
    return dot(linear_, h) - 0.5 * dot(h, curvature_ * h);
  }

  /// Argmax of q: c + B^{-1} a.
  Vector argmax() const {
    Vector step = lu_solve(curvature_, linear_);
    for (std::size_t j = 0; j < step.size(); ++j) step[j] += centre_[j];
    return step;
  }

 private:
  Vector centre_;
  Vector linear_;
  Matrix curvature_;
};

namespace detail {

template <LocalCriterion C>
std::function<double(std::span<const double>)> anchor_at(const C& crit, std::span<const double> anchor) {
  if constexpr (requires { crit.anchored(anchor); }) {
    return crit.anchored(anchor);
  } else {
    Vector a(anchor.begin(), anchor.end());
    return [&crit, a = std::move(a)](std::span<const double> theta) { return crit.log_ratio(theta, a); };
  }
}

template <LocalCriterion C>
std::function<double(double)> score_path_of(const C& crit, std::span<const double> theta,
                                             std::span<const double> direction) {
  if constexpr (requires { crit.score_path(theta, direction); }) {
    return crit.score_path(theta, direction);
  } else {
    Vector origin(theta.begin(), theta.end());
    Vector dir(direction.begin(), direction.end());
    return [&crit, origin = std::move(origin), dir = std::move(dir)](double t) {
      Vector th(origin.size());
      for (std::size_t j = 0; j < th.size(); ++j) th[j] = origin[j] + t * dir[j];
      return crit.log_ratio(th, origin);
    };
  }
}

template <LocalCriterion C>
double lambda_norm_of(const C& crit, std::span<const double> theta) {
  if constexpr (requires { crit.lambda_norm(theta); }) {
    return crit.lambda_norm(theta);
  } else {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

inline Vector shifted(std::span<const double> base, double scale, std::span<const double> dir) {
  Vector out(base.begin(), base.end());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] += scale * dir[j];
  return out;
}

inline Vector column(const Matrix& m, std::size_t j) {
  Vector c(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) c[i] = m(i, j);
  return c;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Configuration and results

enum class HessianMode { Definition, Directional };

struct LocalConfig {
  /// delta_n = delta_scale * n^(-delta_power).
  double delta_scale = 1.0;
  double delta_power = 0.5;
  /// Directions are direction_step * e_j.
  double direction_step = 1.0;
  double sparsify_c = 1.0;
  double tau_tol = 1e-6;
  int max_iter = 50;
  HessianMode hessian_mode = HessianMode::Definition;
  /// d = 1 only: pick the directional-Hessian companion point by bisection.
  bool bisection_direction = false;
  /// Starting ridge handed to invert_spd_ridge.
  double ridge = 0.0;

  double delta(std::size_t n) const {
    return delta_scale * std::pow(static_cast<double>(n), -delta_power);
  }

  Matrix directions(std::size_t d) const { return direction_step * Matrix::identity(d); }

  bool operator==(const LocalConfig&) const = default;
};

struct TraceRow {
  int iteration = 0;
  double lambda_norm = 0.0;
  double tau_norm = 0.0;
  Vector estimate;
};

struct LocalFit {
  Vector theta_star;  // sparsified auxiliary estimate
  Vector theta_base;  // base point of the final step
  Matrix K;
  Vector S;
  Vector tau;
  Vector T;
  double delta = 0.0;
  double ridge_used = 0.0;
  bool converged = false;
  bool direction_fallback = false;
  /// Trace row whose estimate is reported in T (0 = theta*).
  int selected_iteration = 0;
  std::string failure;
  std::vector<TraceRow> trace;
};

// ---------------------------------------------------------------------------
// Sparsification

/// Nearest point of the lattice {c * delta * z : z integer}, componentwise.
inline Vector sparsify(std::span<const double> theta, double delta_n, double c = 1.0) {
  if (!(c > 0.0) || !(delta_n > 0.0)) throw Error(ErrorKind::InvalidArgument, "sparsify needs c > 0 and delta > 0");
  const double mesh = c * delta_n;
  Vector out(theta.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = std::round(theta[j] / mesh) * mesh;
  return out;
}

// ---------------------------------------------------------------------------
// Local quadratic terms

/// Quadratic and linear terms at theta_star. `direction_values` holds the raw
/// three-point differences K_{n,i,j} = u_i' K u_j; `K` and `S` are expressed in
/// parameter coordinates so that T = theta* + delta K^{-1} S.
struct LocalQuadratic {
  Matrix direction_values;
  Vector direction_linear;  // u_j' S
  Matrix K;
  Vector S;
};

template <LocalCriterion C>
LocalQuadratic local_quadratic(const C& crit, std::span<const double> theta_star, double delta_n,
                               const Matrix& directions) {
  const std::size_t d = crit.param_dim();
  if (directions.rows() != d || directions.cols() != d)
    throw Error(ErrorKind::InvalidArgument, "directions must be a d x d matrix of column vectors");
  if (condition_number(directions) > 1e8)
    throw Error(ErrorKind::IllConditionedDirections, "direction matrix condition number exceeds 1e8");

  const auto ratio = detail::anchor_at(crit, theta_star);
  std::vector<Vector> u(d);
  for (std::size_t j = 0; j < d; ++j) u[j] = detail::column(directions, j);

  Vector single(d);
  for (std::size_t j = 0; j < d; ++j) single[j] = ratio(detail::shifted(theta_star, delta_n, u[j]));

  LocalQuadratic out;
  out.direction_values = Matrix(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      Vector uij(d);
      for (std::size_t a = 0; a < d; ++a) uij[a] = u[i][a] + u[j][a];
      const double pair = ratio(detail::shifted(theta_star, delta_n, uij));
      const double v = -(pair - single[i] - single[j]);
      out.direction_values(i, j) = v;
      out.direction_values(j, i) = v;
    }

  out.direction_linear.resize(d);
  for (std::size_t j = 0; j < d; ++j) out.direction_linear[j] = single[j] + 0.5 * out.direction_values(j, j);

  // K_dir = U' K U  =>  K = U^{-T} K_dir U^{-1};  U' S = s_dir.
  const Matrix ut = directions.transpose();
  const Matrix u_inv = lu_inverse(directions);
  out.K = symmetrized(u_inv.transpose() * out.direction_values * u_inv);
  out.S = lu_solve(ut, out.direction_linear);
  return out;
}

template <LocalCriterion C>
Matrix build_K(const C& crit, std::span<const double> theta_star, double delta_n, const Matrix& directions) {
  return local_quadratic(crit, theta_star, delta_n, directions).K;
}

/// Solves u_j'S = Lambda[theta* + delta u_j, theta*] + K_{n,j,j}/2 given the
/// raw direction values of K.
template <LocalCriterion C>
Vector build_S(const C& crit, std::span<const double> theta_star, double delta_n, const Matrix& directions,
               const Matrix& direction_values) {
  const std::size_t d = crit.param_dim();
  if (condition_number(directions) > 1e8)
    throw Error(ErrorKind::IllConditionedDirections, "direction matrix condition number exceeds 1e8");
  const auto ratio = detail::anchor_at(crit, theta_star);
  Vector rhs(d);
  for (std::size_t j = 0; j < d; ++j)
    rhs[j] = ratio(detail::shifted(theta_star, delta_n, detail::column(directions, j))) +
             0.5 * direction_values(j, j);
  return lu_solve(directions.transpose(), rhs);
}

// ---------------------------------------------------------------------------
// One-step update

struct OneStep {
  Vector T;
  Vector tau;
  double ridge_used = 0.0;
};

/// T = theta* + delta K^{-1} S, the maximizer of tau'S - tau'K tau / 2.
inline OneStep one_step(std::span<const double> theta_star, const Matrix& K, std::span<const double> S, double delta_n,
                        double ridge = 0.0) {
  const RidgeInverse inv = invert_spd_ridge(K, ridge);
  OneStep out;
  out.tau = inv.inverse * S;
  out.ridge_used = inv.ridge_used;
  out.T.assign(theta_star.begin(), theta_star.end());
  for (std::size_t j = 0; j < out.T.size(); ++j) out.T[j] += delta_n * out.tau[j];
  return out;
}

// ---------------------------------------------------------------------------
// Derivative-based variants

/// Romberg derivative along `direction` of the average log implied probability.
template <LocalCriterion C>
DerivativeEstimate directional_grad_logp(const C& crit, std::span<const double> theta,
                                         std::span<const double> direction, int levels = 5) {
  const auto path = detail::score_path_of(crit, theta, direction);
  return romberg_derivative(path, 0.0, default_romberg_step(0.0), levels);
}

/// delta^{-1} S along one direction as the weighted average of the two forward
/// slopes of f(t) = Lambda[theta* + t u, theta*] at t = 0 and t = delta.
template <LocalCriterion C>
double weighted_S(const C& crit, std::span<const double> theta_star, double delta_n, std::span<const double> u) {
  const auto ratio = detail::anchor_at(crit, theta_star);
  const double step = delta_n * norm2(u);
  if (!(step > 0.0)) throw Error(ErrorKind::InvalidArgument, "direction must be nonzero");
  const double f0 = ratio(theta_star);
  const double f1 = ratio(detail::shifted(theta_star, delta_n, u));
  const double f2 = ratio(detail::shifted(theta_star, 2.0 * delta_n, u));
  return 1.5 * (f1 - f0) / step - 0.5 * (f2 - f1) / step;
}

struct DirectionalHessian {
  Matrix curvature;  // approximates delta^{-2} K
  Matrix K;          // delta^2 * curvature, comparable to build_K
  double ridge_used = std::numeric_limits<double>::quiet_NaN();
  bool invertible = false;
};

/// Curvature from differences of Romberg directional derivatives between
/// theta* and companion points theta~_i (default theta* + delta e_i):
///   H_ij = -[D_j(theta~_i) - D_j(theta*)] / (theta~_i - theta*)_i, symmetrized.
template <LocalCriterion C>
DirectionalHessian hessian_directional(const C& crit, std::span<const double> theta_star, double delta_n,
                                       std::optional<std::vector<Vector>> companions = std::nullopt) {
  const std::size_t d = crit.param_dim();
  const Matrix basis = Matrix::identity(d);
  std::vector<Vector> tilde;
  if (companions) {
    if (companions->size() != d) throw Error(ErrorKind::InvalidArgument, "need one companion point per coordinate");
    tilde = *companions;
  } else {
    for (std::size_t i = 0; i < d; ++i) tilde.push_back(detail::shifted(theta_star, delta_n, basis.row(i)));
  }

  Vector base_grad(d);
  for (std::size_t j = 0; j < d; ++j) base_grad[j] = directional_grad_logp(crit, theta_star, basis.row(j)).value;

  Matrix h(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    const double step = tilde[i][i] - theta_star[i];
    if (step == 0.0) throw Error(ErrorKind::InvalidArgument, "companion point coincides with theta*");
    for (std::size_t j = 0; j < d; ++j) {
      const double g = directional_grad_logp(crit, tilde[i], basis.row(j)).value;
      h(i, j) = -(g - base_grad[j]) / step;
    }
  }

  DirectionalHessian out;
  out.curvature = symmetrized(h);
  out.K = (delta_n * delta_n) * out.curvature;
  try {
    out.ridge_used = invert_spd_ridge(out.K).ridge_used;
    out.invertible = true;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::SingularAfterRidge) throw;
  }
  return out;
}

struct DirectionChoice {
  Vector theta_tilde;
  bool fallback = false;
  double residual = 0.0;
};

/// d = 1: finds theta~ with lambda(theta*)'[sum m_i(theta*) + sum m_i(theta~)] = 0
/// on the bracket. Falls back to theta* + delta when lambda(theta*) = 0 or the
/// bracket has no sign change.
inline DirectionChoice choose_direction_bisection(const MomentModel& model, const Sample& sample,
                                                  std::span<const double> theta_star, double lo, double hi,
                                                  double delta_n, const SolverOptions& opts = {}) {
  if (model.param_dim() != 1) throw Error(ErrorKind::InvalidArgument, "bisection direction search needs d = 1");
  const std::size_t k = model.moment_dim();
  auto moment_sum = [&](double theta) {
    const Vector th{theta};
    const Matrix m = model.moments(sample, th);
    Vector s(k, 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t a = 0; a < k; ++a) s[a] += m(i, a);
    return s;
  };
  const LambdaSolution sol = solve_lambda(model, sample, theta_star, opts);
  DirectionChoice out;
  const Vector fallback{theta_star[0] + delta_n};
  if (norm_inf(sol.lambda) == 0.0) {
    out.theta_tilde = fallback;
    out.fallback = true;
    return out;
  }
  const Vector base_sum = moment_sum(theta_star[0]);
  auto g = [&](double t) {
    const Vector s = moment_sum(t);
    double v = 0.0;
    for (std::size_t a = 0; a < k; ++a) v += sol.lambda[a] * (base_sum[a] + s[a]);
    return v;
  };
  try {
    const RootResult r = bisect_root(g, lo, hi, 1e-12);
    out.theta_tilde = {r.root};
    out.residual = g(r.root);
    if (out.theta_tilde[0] == theta_star[0]) {
      out.theta_tilde = fallback;
      out.fallback = true;
    }
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::NoSignChange) throw;
    out.theta_tilde = fallback;
    out.fallback = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Oracle for differentiable just-identified models

/// Relative Frobenius gap between delta^{-2} K and the plug-in curvature
/// A2 = J' Omega^{-1} J, with J the average Jacobian and Omega the average
/// outer product of moments at theta0.
///
/// Scale bookkeeping: K is built from the per-observation average Lambda_n, so
/// for smooth moments Lambda_n(theta0 + h, theta0) ~ s'h - h'A2 h / 2 and
/// K = delta^2 A2. The conversion constant is therefore exactly 1 here; the
/// factor 2 of the summed expansion never enters.
inline double validate_against_A2(const MomentModel& model, const Sample& sample, std::span<const double> theta0,
                                  const Matrix& K, double delta_n) {
  if (!model.has_jacobian()) throw Error(ErrorKind::NoJacobian, "A2 oracle needs an analytic Jacobian");
  if (model.moment_dim() != model.param_dim())
    throw Error(ErrorKind::InvalidArgument, "A2 oracle assumes a just-identified model");
  const std::size_t n = sample.size(), k = model.moment_dim();
  const Matrix m = model.moments(sample, theta0);
  Matrix omega(k, k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) omega(a, b) += m(i, a) * m(i, b) / static_cast<double>(n);
  const Matrix jac = model.mean_jacobian(sample, theta0);
  const Matrix omega_inv = invert_spd_ridge(omega).inverse;
  const Matrix a2 = symmetrized(jac.transpose() * omega_inv * jac);
  const Matrix scaled = (1.0 / (delta_n * delta_n)) * K;
  return frobenius(scaled - a2) / frobenius(a2);
}

// ---------------------------------------------------------------------------
// Iteration

/// Without convergence the fit reports the visited point (theta* or any
/// iterate) with the largest Lambda_n relative to theta*.
template <LocalCriterion C>
void select_best_so_far(const C& crit, LocalFit& fit) {
  std::function<double(std::span<const double>)> ratio;
  try {
    ratio = detail::anchor_at(crit, fit.theta_star);
  } catch (const Error&) {
    fit.T = fit.theta_star;
    fit.selected_iteration = 0;
    return;
  }
  double best = 0.0;
  fit.T = fit.theta_star;
  fit.selected_iteration = 0;
  for (const TraceRow& row : fit.trace) {
    if (!all_finite(row.estimate)) continue;
    double v = -std::numeric_limits<double>::infinity();
    try {
      v = ratio(row.estimate);
    } catch (const Error&) {
    }
    if (v > best) {
      best = v;
      fit.T = row.estimate;
      fit.selected_iteration = row.iteration;
    }
  }
}

/// Repeats the quadratic fit and one-step update from the sparsified auxiliary estimate until
/// ||tau||_inf <= tau_tol or max_iter steps. Inner failures stop the loop and
/// return the last good estimate with converged = false.
template <LocalCriterion C>
LocalFit iterate_local(const C& crit, std::span<const double> theta_aux, const LocalConfig& config, double delta_n,
                       const std::function<std::optional<Vector>(std::span<const double>)>& companion = {},
                       const Bounds& box = {}) {
  if (config.max_iter < 1) throw Error(ErrorKind::InvalidArgument, "max_iter must be at least 1");
  const std::size_t d = crit.param_dim();
  const Matrix directions = config.directions(d);

  LocalFit fit;
  fit.delta = delta_n;
  fit.theta_star = sparsify(theta_aux, delta_n, config.sparsify_c);
  box.clip(fit.theta_star);
  Vector current = fit.theta_star;
  fit.theta_base = current;
  fit.T = current;
  fit.tau.assign(d, 0.0);

  for (int it = 1; it <= config.max_iter; ++it) {
    try {
      TraceRow row;
      row.iteration = it;
      row.lambda_norm = detail::lambda_norm_of(crit, current);

      Matrix K;
      Vector S;
      if (config.hessian_mode == HessianMode::Definition) {
        LocalQuadratic lq = local_quadratic(crit, current, delta_n, directions);
        K = std::move(lq.K);
        S = std::move(lq.S);
      } else {
        std::optional<std::vector<Vector>> comps;
        if (companion) {
          if (auto c = companion(current)) comps = std::vector<Vector>{*c};
          else fit.direction_fallback = true;
        }
        K = hessian_directional(crit, current, delta_n, comps).K;
        // delta^{-1} S is the Romberg score at theta*.
        S.resize(d);
        const Matrix basis = Matrix::identity(d);
        for (std::size_t j = 0; j < d; ++j)
          S[j] = delta_n * directional_grad_logp(crit, current, basis.row(j)).value;
      }

      OneStep step = one_step(current, K, S, delta_n, config.ridge);
      if (!box.empty() && all_finite(step.T)) {
        // Iterates stay in the parameter space; tau is the step actually taken.
        box.clip(step.T);
        for (std::size_t j = 0; j < d; ++j) step.tau[j] = (step.T[j] - current[j]) / delta_n;
      }
      fit.K = std::move(K);
      fit.S = std::move(S);
      fit.tau = step.tau;
      fit.ridge_used = step.ridge_used;
      fit.theta_base = current;
      fit.T = step.T;

      row.tau_norm = norm_inf(step.tau);
      row.estimate = step.T;
      fit.trace.push_back(std::move(row));

      if (!all_finite(step.T)) throw Error(ErrorKind::NonFinite, "local step produced a non-finite estimate");
      if (norm_inf(step.tau) <= config.tau_tol) {
        fit.converged = true;
        fit.selected_iteration = it;
        break;
      }
      current = step.T;
    } catch (const Error& e) {
      fit.failure = e.what();
      break;
    }
  }
  if (!fit.converged) select_best_so_far(crit, fit);
  return fit;
}

/// Local EL fit on a sample with delta_n from the configured rule.
inline LocalFit iterate(const MomentModel& model, const Sample& sample, std::span<const double> theta_aux,
                        const LocalConfig& config, const SolverOptions& opts = {}, const Bounds& box = {}) {
  const ElCriterion crit(model, sample, opts);
  const double delta_n = config.delta(sample.size());
  std::function<std::optional<Vector>(std::span<const double>)> companion;
  if (config.hessian_mode == HessianMode::Directional && config.bisection_direction && model.param_dim() == 1) {
    companion = [&](std::span<const double> theta) -> std::optional<Vector> {
      const double reach = 50.0 * delta_n;
      const DirectionChoice c =
          choose_direction_bisection(model, sample, theta, theta[0] - reach, theta[0] + reach, delta_n, opts);
      if (c.fallback) return std::nullopt;
      return c.theta_tilde;
    };
  }
  return iterate_local(crit, theta_aux, config, delta_n, companion, box);
}

}  // namespace localel

#endif  // LOCALEL_EL_LOCAL_HPP
