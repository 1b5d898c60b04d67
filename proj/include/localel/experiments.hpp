#ifndef LOCALEL_EXPERIMENTS_HPP
#define LOCALEL_EXPERIMENTS_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "localel/el_core.hpp"
#include "localel/el_local.hpp"
#include "localel/error.hpp"
#include "localel/estimators.hpp"
#include "localel/numerics.hpp"
#include "localel/random.hpp"

namespace localel {

// ---------------------------------------------------------------------------
// Contaminated linear IV design
//
//   y = x theta0 + eps,  x = z pi + u,  eps = R u + eps',
//   u ~ (1 - c) N(0, 1) + c N(L, 1),  z = z_mean + z_noise_sd N(0, 1).

struct LinearDGPConfig {
  std::size_t n = 1000;
  double theta0 = 2.0;
  double pi = 1.0;
  double R = 0.1;
  double c = 0.0;
  double L = 0.0;
  double z_mean = 1.0;
  double z_noise_sd = 0.2;

  void validate() const {
    if (!(c >= 0.0 && c <= 1.0)) throw Error(ErrorKind::InvalidArgument, "linear.c must lie in [0, 1]");
    if (n < 10) throw Error(ErrorKind::InvalidArgument, "linear.n must be at least 10");
    if (!(z_noise_sd > 0.0)) throw Error(ErrorKind::InvalidArgument, "linear.z_noise_sd must be positive");
  }
  bool operator==(const LinearDGPConfig&) const = default;
};

struct LinearData {
  Vector y, x, z;
};

inline LinearData gen_linear(const LinearDGPConfig& cfg, RngStream& rng) {
  cfg.validate();
  LinearData d;
  d.z = sample_normal(rng, cfg.z_mean, cfg.z_noise_sd, cfg.n);
  const Vector u = sample_mixture(rng, cfg.c, {0.0, 1.0}, {cfg.L, 1.0}, cfg.n);
  const Vector e = sample_normal(rng, 0.0, 1.0, cfg.n);
  d.x.resize(cfg.n);
  d.y.resize(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    d.x[i] = d.z[i] * cfg.pi + u[i];
    d.y[i] = d.x[i] * cfg.theta0 + cfg.R * u[i] + e[i];
  }
  return d;
}

/// Observation records are (y, x, z).
inline Sample linear_sample(const LinearData& d) { return Sample::from_columns({d.y, d.x, d.z}); }

/// m = z (y - x theta), dm/dtheta = -z x.
inline MomentModel linear_moment_model() {
  return MomentModel(
      1, 1, [](auto obs, auto theta, auto m) { m[0] = obs[2] * (obs[0] - obs[1] * theta[0]); },
      [](auto obs, auto, auto jac) { jac[0] = -obs[2] * obs[1]; });
}

/// Columns of a linear sample as regressor/instrument matrices.
struct LinearColumns {
  Vector y;
  Matrix X, Z;
};

inline LinearColumns linear_columns(const Sample& s) {
  LinearColumns c{Vector(s.size()), Matrix(s.size(), 1), Matrix(s.size(), 1)};
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto o = s.row(i);
    c.y[i] = o[0];
    c.X(i, 0) = o[1];
    c.Z(i, 0) = o[2];
  }
  return c;
}

// ---------------------------------------------------------------------------
// Contaminated CKLS short rate
//
//   r_{t+1} - r_t = alpha + beta r_t + sigma r_t^gamma sqrt(dt) u_t.
// The sqrt(dt) scaling makes the variance moments (which carry dt) mean zero
// at the true parameter.

struct CKLSConfig {
  std::size_t T = 1000;
  double alpha = 0.05;
  double beta = -0.1;
  double gamma = 0.5;
  double sigma = 0.2;
  double r0 = 0.05;
  double dt = 1.0 / 12.0;
  double c = 0.0;
  double L = 0.0;
  /// Test hook: force u_t = 0 for a deterministic path.
  bool zero_shocks = false;

  Vector truth() const { return {alpha, beta, gamma, sigma}; }

  void validate() const {
    if (!(sigma > 0.0)) throw Error(ErrorKind::InvalidArgument, "ckls.sigma must be positive");
    if (!(dt > 0.0)) throw Error(ErrorKind::InvalidArgument, "ckls.dt must be positive");
    if (!(c >= 0.0 && c <= 1.0)) throw Error(ErrorKind::InvalidArgument, "ckls.c must lie in [0, 1]");
    if (!(r0 > 0.0)) throw Error(ErrorKind::InvalidArgument, "ckls.r0 must be positive");
    if (T < 10) throw Error(ErrorKind::InvalidArgument, "ckls.T must be at least 10");
  }
  bool operator==(const CKLSConfig&) const = default;
};

inline constexpr double kRateFloor = 1e-6;

struct CKLSPath {
  Vector r;  // r_0 .. r_T
  std::size_t corrections = 0;
  std::size_t contaminated = 0;
};

inline CKLSPath gen_ckls(const CKLSConfig& cfg, RngStream& rng) {
  cfg.validate();
  CKLSPath p;
  p.r.resize(cfg.T + 1);
  p.r[0] = cfg.r0;
  const double sdt = std::sqrt(cfg.dt);
  for (std::size_t t = 0; t < cfg.T; ++t) {
    // Same draw pattern as sample_mixture so the stream layout is shared.
    const bool second = rng.uniform() < cfg.c;
    const double u = (second ? cfg.L : 0.0) + rng.normal();
    p.contaminated += second;
    const double r = p.r[t];
    const double shock = cfg.zero_shocks ? 0.0 : cfg.sigma * std::pow(r, cfg.gamma) * sdt * u;
    double next = r + cfg.alpha + cfg.beta * r + shock;
    if (next < kRateFloor) {
      next = 2.0 * kRateFloor - next;  // reflect
      ++p.corrections;
    }
    p.r[t + 1] = next;
  }
  if (10 * p.corrections > cfg.T)
    throw Error(ErrorKind::PathDegenerate, std::to_string(p.corrections) + " of " + std::to_string(cfg.T) +
                                               " steps needed positivity correction");
  return p;
}

/// Observation records are consecutive pairs (r_t, r_{t+1}).
inline Sample ckls_sample(const CKLSPath& p) {
  const std::size_t T = p.r.size() - 1;
  std::vector<double> data(2 * T);
  for (std::size_t t = 0; t < T; ++t) {
    data[2 * t] = p.r[t];
    data[2 * t + 1] = p.r[t + 1];
  }
  return Sample(T, 2, std::move(data));
}

/// theta = (alpha, beta, gamma, sigma); e = r_{t+1} - r_t - alpha - beta r_t,
/// v = e^2 - sigma^2 r_t^{2 gamma} dt;  m = (e, e r_t, v, v r_t).
inline MomentModel ckls_moment_model(double dt) {
  auto eval = [dt](auto obs, auto th, auto m) {
    const double r = obs[0];
    const double e = obs[1] - r - th[0] - th[1] * r;
    const double v = e * e - th[3] * th[3] * std::pow(r, 2.0 * th[2]) * dt;
    m[0] = e;
    m[1] = e * r;
    m[2] = v;
    m[3] = v * r;
  };
  auto jac = [dt](auto obs, auto th, auto J) {
    const double r = obs[0];
    const double e = obs[1] - r - th[0] - th[1] * r;
    const double r2g = std::pow(r, 2.0 * th[2]);
    const double dv[4] = {-2.0 * e, -2.0 * e * r, -th[3] * th[3] * dt * r2g * 2.0 * std::log(r), -2.0 * th[3] * r2g * dt};
    const double de[4] = {-1.0, -r, 0.0, 0.0};
    for (int j = 0; j < 4; ++j) {
      J[0 * 4 + j] = de[j];
      J[1 * 4 + j] = de[j] * r;
      J[2 * 4 + j] = dv[j];
      J[3 * 4 + j] = dv[j] * r;
    }
  };
  return MomentModel(4, 4, eval, jac);
}

inline double median_of(Vector v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Default search box for CKLS parameters.
inline Bounds ckls_bounds() { return {{-5.0, -5.0, 0.0, 1e-4}, {5.0, 5.0, 3.0, 10.0}}; }

/// Starting value from OLS of dr on (1, r) and a gamma = 1/2 variance fit.
inline Vector ckls_start(const Sample& s, double dt, const Bounds& box = ckls_bounds()) {
  const std::size_t T = s.size();
  Matrix X(T, 2);
  Vector dr(T);
  for (std::size_t t = 0; t < T; ++t) {
    auto o = s.row(t);
    X(t, 0) = 1.0;
    X(t, 1) = o[0];
    dr[t] = o[1] - o[0];
  }
  const Vector ab = least_squares(dr, X).theta_hat;
  Vector scaled(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double r = X(t, 1);
    const double e = dr[t] - ab[0] - ab[1] * r;
    scaled[t] = e * e / (r * dt);
  }
  // Median of a chi-square(1) variable is 0.45494; the median keeps single
  // contaminated shocks from inflating sigma.
  Vector th{ab[0], ab[1], 0.5, std::sqrt(median_of(scaled) / 0.454936423119572)};
  if (!all_finite(th)) th = {0.0, 0.0, 0.5, 1.0};
  box.clip(th);
  return th;
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricsRow {
  std::string method;
  double mean = 0.0;
  double median = 0.0;
  double mse = 0.0;
  double rmse = 0.0;
  double iqr = 0.0;
  double mad = 0.0;
  std::size_t reps_used = 0;
};

/// Linear-interpolation quantile of sorted data.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

inline MetricsRow compute_metrics(std::span<const double> estimates, double theta0, std::string method = {}) {
  if (estimates.empty()) throw Error(ErrorKind::EmptyEstimates, "no estimates for " + (method.empty() ? "metrics" : method));
  const double n = static_cast<double>(estimates.size());
  MetricsRow row;
  row.method = std::move(method);
  row.reps_used = estimates.size();
  Vector sorted(estimates.begin(), estimates.end());
  std::sort(sorted.begin(), sorted.end());
  double sum = 0.0, sq = 0.0;
  for (double v : sorted) {
    sum += v;
    sq += (v - theta0) * (v - theta0);
  }
  row.mean = sum / n;
  row.median = median_of(sorted);
  row.mse = sq / n;
  row.rmse = std::sqrt(row.mse);
  row.iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  Vector dev(sorted.size());
  for (std::size_t i = 0; i < dev.size(); ++i) dev[i] = std::abs(sorted[i] - row.median);
  row.mad = median_of(std::move(dev));
  return row;
}

// ---------------------------------------------------------------------------
// Plot data

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Standard normal quantile: rational approximation refined by one Halley step.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorKind::InvalidArgument, "normal_quantile needs p in (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

struct QQPoint {
  double theoretical;
  double empirical;
};

/// Sorted standardized estimates against N(0,1) quantiles at (i - 0.5)/n.
inline std::vector<QQPoint> emit_qq(std::span<const double> estimates) {
  const std::size_t n = estimates.size();
  if (n < 20) throw Error(ErrorKind::InvalidArgument, "QQ data needs at least 20 estimates");
  double mean = 0.0;
  for (double v : estimates) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : estimates) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sd > 0.0)) throw Error(ErrorKind::InvalidArgument, "QQ data has zero spread");
  Vector z(estimates.begin(), estimates.end());
  std::sort(z.begin(), z.end());
  std::vector<QQPoint> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = {normal_quantile((static_cast<double>(i) + 0.5) / static_cast<double>(n)), (z[i] - mean) / sd};
  return out;
}

struct DensityPoint {
  double x;
  double density;
};

/// Gaussian kernel density on an equispaced grid over [min - 3h, max + 3h].
inline std::vector<DensityPoint> emit_density(std::span<const double> estimates, std::size_t grid = 512,
                                              std::optional<double> bandwidth = std::nullopt) {
  const std::size_t n = estimates.size();
  if (n < 20) throw Error(ErrorKind::InvalidArgument, "density data needs at least 20 estimates");
  if (grid < 2) throw Error(ErrorKind::InvalidArgument, "density grid needs at least 2 points");
  double h;
  if (bandwidth) {
    h = *bandwidth;
  } else {
    double mean = 0.0;
    for (double v : estimates) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : estimates) ss += (v - mean) * (v - mean);
    h = 1.06 * std::sqrt(ss / static_cast<double>(n - 1)) * std::pow(static_cast<double>(n), -0.2);
  }
  if (!(h > 0.0)) throw Error(ErrorKind::InvalidArgument, "density bandwidth must be positive");
  const auto [lo_it, hi_it] = std::minmax_element(estimates.begin(), estimates.end());
  const double lo = *lo_it - 3.0 * h, hi = *hi_it + 3.0 * h;
  const double norm = 1.0 / (static_cast<double>(n) * h * std::sqrt(2.0 * std::numbers::pi));
  std::vector<DensityPoint> out(grid);
  for (std::size_t g = 0; g < grid; ++g) {
    const double x = lo + (hi - lo) * static_cast<double>(g) / static_cast<double>(grid - 1);
    double s = 0.0;
    for (double v : estimates) {
      const double t = (x - v) / h;
      s += std::exp(-0.5 * t * t);
    }
    out[g] = {x, s * norm};
  }
  return out;
}

struct ProfilePoint {
  double theta;
  double value;  // n Lambda_n(theta), -inf when infeasible
  bool feasible;
};

/// n Lambda_n over a grid of scalar parameter values.
inline std::vector<ProfilePoint> emit_likelihood_profile(const MomentModel& model, const Sample& sample,
                                                         std::span<const double> grid, const SolverOptions& opts = {}) {
  if (model.param_dim() != 1) throw Error(ErrorKind::InvalidArgument, "likelihood profile needs d = 1");
  std::vector<ProfilePoint> out;
  out.reserve(grid.size());
  for (double t : grid) {
    ElValue v;
    try {
      v = log_el(model, sample, Vector{t}, opts);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateMoments && e.kind() != ErrorKind::NonFinite) throw;
    }
    out.push_back({t, v.value, v.feasible});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo runner

enum class Experiment { Linear, Ckls, Custom };
enum class MethodKind { LS, IV, GMM, EL, LocalEL };

inline std::string to_string(Experiment e) {
  switch (e) {
    case Experiment::Linear: return "linear";
    case Experiment::Ckls: return "ckls";
    case Experiment::Custom: return "custom";
  }
  return "?";
}

struct MethodSpec {
  MethodKind kind = MethodKind::LS;
  MethodKind aux = MethodKind::LS;  // used by LocalEL only

  std::string label() const {
    auto base = [](MethodKind k) -> std::string {
      switch (k) {
        case MethodKind::LS: return "ls";
        case MethodKind::IV: return "iv";
        case MethodKind::GMM: return "gmm";
        case MethodKind::EL: return "el";
        case MethodKind::LocalEL: return "local-el";
      }
      return "?";
    };
    return kind == MethodKind::LocalEL ? "local-el(" + base(aux) + ")" : base(kind);
  }

  bool operator==(const MethodSpec& o) const {
    return kind == o.kind && (kind != MethodKind::LocalEL || aux == o.aux);
  }

  static MethodSpec parse(const std::string& s) {
    if (s == "ls") return {MethodKind::LS};
    if (s == "iv") return {MethodKind::IV};
    if (s == "gmm") return {MethodKind::GMM};
    if (s == "el") return {MethodKind::EL};
    if (s == "local-el(ls)") return {MethodKind::LocalEL, MethodKind::LS};
    if (s == "local-el(iv)") return {MethodKind::LocalEL, MethodKind::IV};
    if (s == "local-el(el)") return {MethodKind::LocalEL, MethodKind::EL};
    throw Error(ErrorKind::InvalidArgument,
                "unknown method '" + s + "' (expected ls, iv, gmm, el, local-el(ls|iv|el))");
  }
};

struct McConfig {
  Experiment experiment = Experiment::Linear;
  LinearDGPConfig linear;
  CKLSConfig ckls;
  /// Fixed sample for the custom experiment (linear records y, x, z).
  std::optional<Sample> custom_data;
  std::vector<MethodSpec> methods;
  std::size_t reps = 500;
  std::uint64_t seed = 1;
  LocalConfig local;
  SolverOptions solver;

  bool linear_family() const { return experiment != Experiment::Ckls; }

  void validate() const {
    if (methods.empty()) throw Error(ErrorKind::InvalidArgument, "methods must not be empty");
    if (reps < 1) throw Error(ErrorKind::InvalidArgument, "reps must be at least 1");
    if (local.max_iter < 1) throw Error(ErrorKind::InvalidArgument, "local.max_iter must be at least 1");
    for (const auto& m : methods) {
      const MethodKind k = m.kind == MethodKind::LocalEL ? m.aux : m.kind;
      if (!linear_family() && (k == MethodKind::LS || k == MethodKind::IV))
        throw Error(ErrorKind::InvalidArgument, "method " + m.label() + " needs the linear design");
    }
    if (experiment == Experiment::Linear) linear.validate();
    if (experiment == Experiment::Ckls) ckls.validate();
    if (experiment == Experiment::Custom && !custom_data)
      throw Error(ErrorKind::InvalidArgument, "custom experiment needs a data file");
    if (experiment == Experiment::Custom && custom_data->width() != 3)
      throw Error(ErrorKind::InvalidArgument, "custom data needs three columns y, x, z");
  }

  Vector theta0() const { return linear_family() ? Vector{linear.theta0} : ckls.truth(); }

  std::vector<std::string> param_names() const {
    if (linear_family()) return {"theta"};
    return {"alpha", "beta", "gamma", "sigma"};
  }
};

/// Draws the sample for replication r from stream (seed, r).
inline Sample replication_sample(const McConfig& cfg, std::size_t r) {
  RngStream rng(cfg.seed, r);
  switch (cfg.experiment) {
    case Experiment::Linear: return linear_sample(gen_linear(cfg.linear, rng));
    case Experiment::Ckls: return ckls_sample(gen_ckls(cfg.ckls, rng));
    case Experiment::Custom: return *cfg.custom_data;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown experiment");
}

inline MomentModel experiment_model(const McConfig& cfg) {
  return cfg.linear_family() ? linear_moment_model() : ckls_moment_model(cfg.ckls.dt);
}

struct MethodOutcome {
  std::optional<Vector> estimate;
  std::string error;
  bool local_converged = true;
};

/// Runs every configured method on one sample. Auxiliary estimates are shared,
/// and each method depends only on the sample, so list order has no effect.
class ReplicationRunner {
 public:
  ReplicationRunner(const McConfig& cfg, const MomentModel& model, const Sample& sample)
      : cfg_(cfg), model_(model), sample_(sample) {}

  MethodOutcome run(const MethodSpec& m) {
    MethodOutcome out;
    try {
      if (m.kind == MethodKind::LocalEL) {
        const Vector aux = base(m.aux);
        const Bounds box = cfg_.linear_family() ? Bounds{} : ckls_bounds();
        const LocalFit fit = iterate(model_, sample_, aux, cfg_.local, cfg_.solver, box);
        last_fit_ = fit;
        if (!all_finite(fit.T)) throw Error(ErrorKind::NonFinite, "local estimate is not finite");
        out.estimate = fit.T;
        out.local_converged = fit.converged;
      } else {
        out.estimate = base(m.kind);
      }
    } catch (const Error& e) {
      out.error = e.what();
    }
    return out;
  }

  const std::optional<LocalFit>& last_fit() const { return last_fit_; }

 private:
  Vector base(MethodKind k) {
    auto it = cache_.find(k);
    if (it != cache_.end()) {
      if (!it->second) throw Error(ErrorKind::InvalidArgument, "auxiliary estimator failed earlier in this replication");
      return *it->second;
    }
    cache_[k] = std::nullopt;
    Vector v = compute(k);
    if (!all_finite(v)) throw Error(ErrorKind::NonFinite, "estimate is not finite");
    cache_[k] = v;
    return v;
  }

  Vector compute(MethodKind k) {
    if (cfg_.linear_family()) {
      if (!cols_) cols_ = linear_columns(sample_);
      switch (k) {
        case MethodKind::LS: return least_squares(cols_->y, cols_->X).theta_hat;
        case MethodKind::IV: return instrumental_variables(cols_->y, cols_->X, cols_->Z).theta_hat;
        case MethodKind::GMM: return gmm_two_step(model_, sample_, base(MethodKind::LS)).theta_hat;
        case MethodKind::EL: return el_global(model_, sample_, base(MethodKind::LS), {}, {}, cfg_.solver).theta_hat;
        default: break;
      }
    } else {
      const Bounds box = ckls_bounds();
      if (!start_) start_ = ckls_start(sample_, cfg_.ckls.dt, box);
      switch (k) {
        case MethodKind::GMM: return gmm_two_step(model_, sample_, *start_, box).theta_hat;
        case MethodKind::EL: {
          // A contaminated path can leave zero outside the moment hull at the
          // moment-based start; the GMM estimate is the second candidate.
          if (log_el(model_, sample_, *start_, cfg_.solver).feasible)
            return el_global(model_, sample_, *start_, box, {}, cfg_.solver).theta_hat;
          return el_global(model_, sample_, base(MethodKind::GMM), box, {}, cfg_.solver).theta_hat;
        }
        default: break;
      }
    }
    throw Error(ErrorKind::InvalidArgument, "method not available for this experiment");
  }

  const McConfig& cfg_;
  const MomentModel& model_;
  const Sample& sample_;
  std::map<MethodKind, std::optional<Vector>> cache_;
  std::optional<LinearColumns> cols_;
  std::optional<Vector> start_;
  std::optional<LocalFit> last_fit_;
};

struct RawEstimate {
  std::size_t replication;
  std::string method;
  std::size_t param_index;
  double estimate;
};

struct McResult {
  /// One row per method; multi-parameter models use stacked errors (theta0 = 0).
  std::vector<MetricsRow> metrics;
  /// Per-parameter rows labelled method[name]; empty for scalar models.
  std::vector<MetricsRow> breakdown;
  std::vector<RawEstimate> estimates;
  std::map<std::string, std::size_t> failures;
  std::map<std::string, std::size_t> local_not_converged;
  std::map<std::string, std::string> first_error;
};

inline McResult run_mc(const McConfig& cfg, std::size_t workers = 1) {
  cfg.validate();
  const std::size_t reps = cfg.reps, nm = cfg.methods.size();
  const MomentModel model = experiment_model(cfg);
  std::vector<std::vector<MethodOutcome>> outcomes(reps);

  std::atomic<std::size_t> next{0};
  std::exception_ptr fatal;
  std::mutex fatal_mutex;
  auto worker = [&]() {
    for (std::size_t r = next++; r < reps; r = next++) {
      std::vector<MethodOutcome> row(nm);
      try {
        const Sample sample = replication_sample(cfg, r);
        ReplicationRunner runner(cfg, model, sample);
        for (std::size_t m = 0; m < nm; ++m) row[m] = runner.run(cfg.methods[m]);
      } catch (const Error& e) {
        // Data generation failed: every method loses this replication.
        for (auto& o : row) o.error = e.what();
      } catch (...) {
        std::lock_guard lock(fatal_mutex);
        if (!fatal) fatal = std::current_exception();
      }
      outcomes[r] = std::move(row);
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, reps);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (fatal) std::rethrow_exception(fatal);

  McResult res;
  const Vector theta0 = cfg.theta0();
  const auto names = cfg.param_names();
  const std::size_t d = theta0.size();
  for (std::size_t m = 0; m < nm; ++m) {
    const std::string label = cfg.methods[m].label();
    std::vector<Vector> per_param(d);
    Vector stacked;
    std::size_t used = 0;
    for (std::size_t r = 0; r < reps; ++r) {
      const MethodOutcome& o = outcomes[r][m];
      if (!o.estimate) {
        ++res.failures[label];
        if (!res.first_error.count(label)) res.first_error[label] = o.error;
        continue;
      }
      ++used;
      if (!o.local_converged) ++res.local_not_converged[label];
      for (std::size_t j = 0; j < d; ++j) {
        per_param[j].push_back((*o.estimate)[j]);
        stacked.push_back((*o.estimate)[j] - theta0[j]);
      }
    }
    if (!res.failures.count(label)) res.failures[label] = 0;
    if (used == 0) {
      MetricsRow empty;
      empty.method = label;
      const double nan = std::numeric_limits<double>::quiet_NaN();
      empty.mean = empty.median = empty.mse = empty.rmse = empty.iqr = empty.mad = nan;
      res.metrics.push_back(empty);
      continue;
    }
    if (d == 1) {
      res.metrics.push_back(compute_metrics(per_param[0], theta0[0], label));
    } else {
      MetricsRow row = compute_metrics(stacked, 0.0, label);
      row.reps_used = used;
      res.metrics.push_back(row);
      for (std::size_t j = 0; j < d; ++j)
        res.breakdown.push_back(compute_metrics(per_param[j], theta0[j], label + "[" + names[j] + "]"));
    }
  }
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t m = 0; m < nm; ++m)
      if (outcomes[r][m].estimate)
        for (std::size_t j = 0; j < d; ++j)
          res.estimates.push_back({r, cfg.methods[m].label(), j, (*outcomes[r][m].estimate)[j]});
  return res;
}

}  // namespace localel

#endif  // LOCALEL_EXPERIMENTS_HPP
