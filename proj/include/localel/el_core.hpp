#ifndef LOCALEL_EL_CORE_HPP
#define LOCALEL_EL_CORE_HPP

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "localel/error.hpp"
#include "localel/numerics.hpp"

namespace localel {

/// n fixed-width observation records stored row-major.
class Sample {
 public:
  Sample() = default;
  Sample(std::size_t n, std::size_t width, std::vector<double> data)
      : n_(n), width_(width), data_(std::move(data)) {
    if (data_.size() != n_ * width_) throw Error(ErrorKind::InvalidArgument, "sample data size mismatch");
    if (!all_finite(data_)) throw Error(ErrorKind::NonFinite, "sample contains non-finite entries");
  }

  /// Builds a sample from equally long columns.
  static Sample from_columns(std::initializer_list<std::span<const double>> columns) {
    const std::size_t width = columns.size();
    const std::size_t n = width ? columns.begin()->size() : 0;
    std::vector<double> data(n * width);
    std::size_t c = 0;
    for (auto col : columns) {
      if (col.size() != n) throw Error(ErrorKind::InvalidArgument, "columns differ in length");
      for (std::size_t i = 0; i < n; ++i) data[i * width + c] = col[i];
      ++c;
    }
    return Sample(n, width, std::move(data));
  }

  std::size_t size() const noexcept { return n_; }
  std::size_t width() const noexcept { return width_; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * width_, width_}; }

 private:
  std::size_t n_ = 0;
  std::size_t width_ = 0;
  std::vector<double> data_;
};

/// Moment restriction m(x, theta) in R^k with parameter dimension d <= k.
class MomentModel {
 public:
  using Evaluate = std::function<void(std::span<const double> obs, std::span<const double> theta, std::span<double> m)>;
  /// Writes dm/dtheta^T as a k x d row-major block.
  using Jacobian = std::function<void(std::span<const double> obs, std::span<const double> theta, std::span<double> jac)>;

  MomentModel(std::size_t param_dim, std::size_t moment_dim, Evaluate evaluate, Jacobian jacobian = {})
      : d_(param_dim), k_(moment_dim), evaluate_(std::move(evaluate)), jacobian_(std::move(jacobian)) {
    if (d_ == 0 || k_ < d_) throw Error(ErrorKind::InvalidArgument, "moment model needs 1 <= d <= k");
  }

  std::size_t param_dim() const noexcept { return d_; }
  std::size_t moment_dim() const noexcept { return k_; }
  bool has_jacobian() const noexcept { return static_cast<bool>(jacobian_); }

  void evaluate(std::span<const double> obs, std::span<const double> theta, std::span<double> m) const {
    evaluate_(obs, theta, m);
  }

  void jacobian(std::span<const double> obs, std::span<const double> theta, std::span<double> jac) const {
    if (!jacobian_) throw Error(ErrorKind::NoJacobian, "model has no analytic Jacobian");
    jacobian_(obs, theta, jac);
  }

  /// n x k matrix of m(x_i, theta).
  Matrix moments(const Sample& sample, std::span<const double> theta) const {
    if (theta.size() != d_) throw Error(ErrorKind::InvalidArgument, "theta has wrong dimension");
    Matrix m(sample.size(), k_);
    for (std::size_t i = 0; i < sample.size(); ++i) evaluate_(sample.row(i), theta, m.row(i));
    return m;
  }

  /// k x d average Jacobian.
  Matrix mean_jacobian(const Sample& sample, std::span<const double> theta) const {
    Matrix acc(k_, d_);
    Vector block(k_ * d_);
    for (std::size_t i = 0; i < sample.size(); ++i) {
      jacobian(sample.row(i), theta, block);
      for (std::size_t j = 0; j < block.size(); ++j) acc.values()[j] += block[j];
    }
    return (1.0 / static_cast<double>(sample.size())) * std::move(acc);
  }

 private:
  std::size_t d_;
  std::size_t k_;
  Evaluate evaluate_;
  Jacobian jacobian_;
};

struct SolverOptions {
  double tol = 1e-10;
  int max_iter = 100;
  double backtrack = 0.5;
  /// A step may only consume this fraction of each observation's distance to
  /// the 1 + lambda'm >= 1/n boundary.
  double boundary_fraction = 0.99;

  bool operator==(const SolverOptions&) const = default;
};

struct LambdaSolution {
  Vector lambda;
  double residual_norm = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  double feasibility_margin = 0.0;  // min_i (1 + lambda'm_i) - 1/n
  double dual_value = 0.0;          // (1/n) sum log(1 + lambda'm_i)
};

struct ImpliedProbabilities {
  Vector p;
};

inline std::string format_point(std::span<const double> theta) {
  std::ostringstream os;
  os.precision(17);
  os << '(';
  for (std::size_t i = 0; i < theta.size(); ++i) os << (i ? ", " : "") << theta[i];
  os << ')';
  return os.str();
}

namespace detail {

inline void check_moment_rank(const Matrix& moments) {
  const std::size_t n = moments.rows(), k = moments.cols();
  Matrix omega(k, k);
  for (std::size_t i = 0; i < n; ++i) {
    auto m = moments.row(i);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b <= a; ++b) omega(a, b) += m[a] * m[b];
  }
  const double tr = omega.trace();
  // Cholesky with an absolute pivot floor relative to the trace.
  Matrix l(k, k);
  for (std::size_t j = 0; j < k; ++j) {
    double d = omega(j, j);
    for (std::size_t c = 0; c < j; ++c) d -= l(j, c) * l(j, c);
    if (!(d > 1e-14 * tr)) throw Error(ErrorKind::DegenerateMoments, "sample second-moment matrix of moments is rank deficient");
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < k; ++i) {
      double s = omega(i, j);
      for (std::size_t c = 0; c < j; ++c) s -= l(i, c) * l(j, c);
      l(i, j) = s / l(j, j);
    }
  }
}

}  // namespace detail

/// Maximizes the concave dual (1/n) sum log(1 + lambda'm_i) by damped Newton.
/// Every accepted iterate keeps 1 + lambda'm_i >= 1/n.
inline LambdaSolution solve_lambda(const Matrix& moments, const SolverOptions& opts = {}) {
  const std::size_t n = moments.rows(), k = moments.cols();
  if (n == 0 || k == 0) throw Error(ErrorKind::InvalidArgument, "empty moment matrix");
  if (!all_finite(moments.values())) throw Error(ErrorKind::NonFinite, "non-finite moments");
  detail::check_moment_rank(moments);

  const double inv_n = 1.0 / static_cast<double>(n);
  LambdaSolution sol;
  sol.lambda.assign(k, 0.0);
  Vector w(n, 1.0);  // 1 + lambda'm_i
  double dual = 0.0;
  Vector grad(k), step(k);
  Matrix hess(k, k);

  auto derivatives = [&](const Vector& weights, Vector& g, Matrix& h) {
    std::fill(g.begin(), g.end(), 0.0);
    std::fill(h.values().begin(), h.values().end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto m = moments.row(i);
      const double iw = 1.0 / weights[i];
      for (std::size_t a = 0; a < k; ++a) {
        g[a] += m[a] * iw;
        const double ma = m[a] * iw * iw;
        for (std::size_t b = 0; b <= a; ++b) h(a, b) += ma * m[b];
      }
    }
    for (double& v : g) v *= inv_n;
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b <= a; ++b) {
        h(a, b) *= inv_n;
        h(b, a) = h(a, b);
      }
  };
  auto newton_direction = [&](const Matrix& h, const Vector& g) {
    try {
      return cholesky_solve_factored(cholesky_factor(h), g);
    } catch (const Error&) {
      return invert_spd_ridge(h, 0.0).inverse * g;
    }
  };

  for (int it = 0;; ++it) {
    derivatives(w, grad, hess);
    sol.residual_norm = norm_inf(grad);
    sol.iterations = it;
    // sum p_i - 1 = -lambda'grad; a small gradient with a runaway lambda means
    // zero lies outside (or on) the hull of the moments.
    if (sol.residual_norm <= opts.tol && std::abs(dot(sol.lambda, grad)) <= opts.tol) {
      sol.converged = true;
      break;
    }
    if (it >= opts.max_iter) break;

    // Newton direction on the concave dual: step = H^{-1} grad, H = -Hessian.
    step = newton_direction(hess, grad);

    double alpha = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = dot(moments.row(i), step);
      if (s < 0.0) alpha = std::min(alpha, opts.boundary_fraction * (w[i] - inv_n) / -s);
    }
    const double slope = dot(grad, step);
    bool accepted = false;
    Vector trial_lambda(k), trial_w(n);
    for (int bt = 0; bt < 60 && alpha > 0.0; ++bt, alpha *= opts.backtrack) {
      for (std::size_t a = 0; a < k; ++a) trial_lambda[a] = sol.lambda[a] + alpha * step[a];
      double trial_dual = 0.0;
      bool feasible = true;
      for (std::size_t i = 0; i < n; ++i) {
        trial_w[i] = 1.0 + dot(moments.row(i), trial_lambda);
        if (!(trial_w[i] >= inv_n)) {
          feasible = false;
          break;
        }
        trial_dual += std::log(trial_w[i]);
      }
      if (!feasible) continue;
      trial_dual *= inv_n;
      bool ok = trial_dual >= dual + 1e-4 * alpha * slope;
      if (!ok && std::abs(trial_dual - dual) <= 1e-13 * (1.0 + std::abs(dual))) {
        // Dual changes are below rounding here; judge the step by the gradient instead.
        Vector trial_grad(k, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          auto m = moments.row(i);
          for (std::size_t a = 0; a < k; ++a) trial_grad[a] += m[a] / trial_w[i];
        }
        ok = inv_n * norm_inf(trial_grad) < sol.residual_norm;
      }
      if (ok) {
        sol.lambda = trial_lambda;
        w = trial_w;
        dual = trial_dual;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }

  // Polish: near the root full Newton steps converge quadratically, which
  // pushes sum p_i - 1 = -lambda'grad well below the stopping tolerance. A
  // step is kept only while it stays feasible and shrinks the gradient.
  for (int polish = 0; sol.converged && polish < 3 && sol.residual_norm > 0.0; ++polish) {
    step = newton_direction(hess, grad);
    Vector trial_lambda(k), trial_w(n), trial_grad(k);
    Matrix trial_hess(k, k);
    for (std::size_t a = 0; a < k; ++a) trial_lambda[a] = sol.lambda[a] + step[a];
    bool feasible = true;
    for (std::size_t i = 0; i < n && feasible; ++i) {
      trial_w[i] = 1.0 + dot(moments.row(i), trial_lambda);
      feasible = trial_w[i] >= inv_n;
    }
    if (!feasible) break;
    derivatives(trial_w, trial_grad, trial_hess);
    const double r = norm_inf(trial_grad);
    if (!(r < sol.residual_norm)) break;
    sol.lambda = std::move(trial_lambda);
    w = std::move(trial_w);
    grad = std::move(trial_grad);
    hess = std::move(trial_hess);
    sol.residual_norm = r;
    dual = 0.0;
    for (double v : w) dual += std::log(v);
    dual *= inv_n;
  }

  double min_w = std::numeric_limits<double>::infinity();
  for (double v : w) min_w = std::min(min_w, v);
  sol.feasibility_margin = min_w - inv_n;
  sol.dual_value = dual;
  return sol;
}

inline LambdaSolution solve_lambda(const MomentModel& model, const Sample& sample, std::span<const double> theta,
                                   const SolverOptions& opts = {}) {
  return solve_lambda(model.moments(sample, theta), opts);
}

/// log(1 + lambda'm_i) per observation.
inline Vector log_weights(const Matrix& moments, std::span<const double> lambda) {
  Vector lw(moments.rows());
  for (std::size_t i = 0; i < moments.rows(); ++i) lw[i] = std::log1p(dot(moments.row(i), lambda));
  return lw;
}

/// p_i = 1 / (n (1 + lambda'm_i)).
inline ImpliedProbabilities implied_probs(const Matrix& moments, std::span<const double> lambda) {
  const std::size_t n = moments.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  ImpliedProbabilities out;
  out.p.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = 1.0 + dot(moments.row(i), lambda);
    if (!(w >= inv_n)) throw Error(ErrorKind::InfeasibleLambda, "1 + lambda'm_i < 1/n at observation " + std::to_string(i));
    out.p[i] = inv_n / w;
  }
  return out;
}

/// Profile log empirical likelihood n*Lambda_n(theta). When the inner solve
/// fails (zero outside the moment hull) the value is -inf and feasible=false.
struct ElValue {
  double value = -std::numeric_limits<double>::infinity();
  bool feasible = false;
  LambdaSolution solution;
};

inline ElValue log_el(const MomentModel& model, const Sample& sample, std::span<const double> theta,
                      const SolverOptions& opts = {}) {
  const Matrix m = model.moments(sample, theta);
  ElValue out;
  out.solution = solve_lambda(m, opts);
  if (!out.solution.converged) return out;
  double s = 0.0;
  for (double lw : log_weights(m, out.solution.lambda)) s += lw;
  out.value = -s;
  out.feasible = true;
  return out;
}

/// Lambda_n(theta1, theta2) = (1/n) sum log(p_i(theta1) / p_i(theta2)),
/// accumulated observation by observation.
inline double log_el_ratio(const MomentModel& model, const Sample& sample, std::span<const double> theta1,
                           std::span<const double> theta2, const SolverOptions& opts = {}) {
  auto log_w = [&](std::span<const double> theta) {
    const Matrix m = model.moments(sample, theta);
    const LambdaSolution sol = solve_lambda(m, opts);
    if (!sol.converged)
      throw Error(ErrorKind::InnerSolveFailed, "dual solve did not converge at theta=" + format_point(theta));
    return log_weights(m, sol.lambda);
  };
  const Vector a = log_w(theta1);
  const Vector b = log_w(theta2);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += b[i] - a[i];
  return s / static_cast<double>(a.size());
}

/// sum_i p_i m_i(theta).
inline Vector moment_residual(const MomentModel& model, const Sample& sample, std::span<const double> theta,
                              const ImpliedProbabilities& probs) {
  if (probs.p.size() != sample.size()) throw Error(ErrorKind::InvalidArgument, "probability vector length mismatch");
  const Matrix m = model.moments(sample, theta);
  Vector r(model.moment_dim(), 0.0);
  for (std::size_t i = 0; i < sample.size(); ++i)
    for (std::size_t a = 0; a < r.size(); ++a) r[a] += probs.p[i] * m(i, a);
  return r;
}

}  // namespace localel

#endif  // LOCALEL_EL_CORE_HPP
