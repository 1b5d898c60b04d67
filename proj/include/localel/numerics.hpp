#ifndef LOCALEL_NUMERICS_HPP
#define LOCALEL_NUMERICS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "localel/error.hpp"

namespace localel {

using Vector = std::vector<double>;

/// Dense row-major matrix. Only meant for the small systems that appear here
/// (parameter and moment dimensions of order ten).
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw Error(ErrorKind::InvalidArgument, "ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t dim) {
    Matrix m(dim, dim);
    for (std::size_t i = 0; i < dim; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diagonal(std::span<const double> diag) {
    Matrix m(diag.size(), diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<const double> values() const noexcept { return data_; }
  std::span<double> values() noexcept { return data_; }

  double trace() const {
    double t = 0.0;
    for (std::size_t i = 0; i < std::min(rows_, cols_); ++i) t += (*this)(i, i);
    return t;
  }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw Error(ErrorKind::InvalidArgument, "matrix product shape mismatch");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

inline Vector operator*(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw Error(ErrorKind::InvalidArgument, "matrix-vector shape mismatch");
  Vector y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

inline Vector operator*(const Matrix& a, const Vector& x) { return a * std::span<const double>(x); }

inline Matrix operator+(Matrix a, const Matrix& b) {
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) av[i] += bv[i];
  return a;
}

inline Matrix operator-(Matrix a, const Matrix& b) {
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) av[i] -= bv[i];
  return a;
}

inline Matrix operator*(double s, Matrix a) {
  for (double& v : a.values()) v *= s;
  return a;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double norm_inf(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

inline double frobenius(const Matrix& a) { return norm2(a.values()); }

inline Matrix symmetrized(const Matrix& a) {
  Matrix s(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) s(i, j) = 0.5 * (a(i, j) + a(j, i));
  return s;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline void require_symmetric(const Matrix& a, double rel_tol = 1e-12) {
  if (!a.square()) throw Error(ErrorKind::InvalidArgument, "matrix is not square");
  double scale = 0.0;
  for (double v : a.values()) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j)
      if (std::abs(a(i, j) - a(j, i)) > rel_tol * std::max(scale, 1e-300))
        throw Error(ErrorKind::InvalidArgument, "matrix is not symmetric");
}

/// Lower Cholesky factor of a symmetric matrix; throws NotPositiveDefinite on a
/// non-positive pivot.
inline Matrix cholesky_factor(const Matrix& a) {
  const std::size_t n = a.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) throw Error(ErrorKind::NotPositiveDefinite, "non-positive pivot in Cholesky");
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

inline Vector cholesky_solve_factored(const Matrix& l, std::span<const double> b) {
  const std::size_t n = l.rows();
  Vector y(b.begin(), b.end());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) y[i] -= l(i, k) * y[k];
    y[i] /= l(i, i);
  }
  for (std::size_t ii = n; ii-- > 0;) {
    for (std::size_t k = ii + 1; k < n; ++k) y[ii] -= l(k, ii) * y[k];
    y[ii] /= l(ii, ii);
  }
  return y;
}

/// Solves A x = b for symmetric positive definite A.
inline Vector cholesky_solve(const Matrix& a, std::span<const double> b) {
  require_symmetric(a);
  if (b.size() != a.rows()) throw Error(ErrorKind::InvalidArgument, "rhs length mismatch");
  return cholesky_solve_factored(cholesky_factor(a), b);
}

inline Vector cholesky_solve(const Matrix& a, const Vector& b) {
  return cholesky_solve(a, std::span<const double>(b));
}

struct RidgeInverse {
  Matrix inverse;
  double ridge_used = 0.0;
};

/// (A + ridge I)^{-1} via Cholesky. On failure the ridge escalates: first to
/// 1e-10 * trace/dim, then by factors of ten, up to 1e-2 * trace/dim.
inline RidgeInverse invert_spd_ridge(const Matrix& a, double ridge = 0.0) {
  require_symmetric(a);
  if (ridge < 0.0) throw Error(ErrorKind::InvalidArgument, "ridge must be nonnegative");
  const std::size_t n = a.rows();
  const double scale = a.trace() / static_cast<double>(n);
  const double cap = 1e-2 * scale;

  auto attempt = [&](double r) -> std::optional<Matrix> {
    Matrix shifted = a;
    for (std::size_t i = 0; i < n; ++i) shifted(i, i) += r;
    try {
      const Matrix l = cholesky_factor(shifted);
      Matrix inv(n, n);
      Vector e(n, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        std::fill(e.begin(), e.end(), 0.0);
        e[j] = 1.0;
        const Vector col = cholesky_solve_factored(l, e);
        for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
      }
      return symmetrized(inv);
    } catch (const Error&) {
      return std::nullopt;
    }
  };

  if (auto inv = attempt(ridge)) return {std::move(*inv), ridge};
  if (!(scale > 0.0)) throw Error(ErrorKind::SingularAfterRidge, "trace is not positive; ridge cannot help");
  double r = std::max(ridge * 10.0, 1e-10 * scale);
  while (r <= cap * (1.0 + 1e-12)) {
    if (auto inv = attempt(r)) return {std::move(*inv), r};
    r *= 10.0;
  }
  throw Error(ErrorKind::SingularAfterRidge, "matrix not invertible with ridge up to 1e-2*trace/dim");
}

/// General square solve by Gaussian elimination with partial pivoting.
inline Vector lu_solve(Matrix a, std::span<const double> b) {
  if (!a.square() || b.size() != a.rows()) throw Error(ErrorKind::InvalidArgument, "lu_solve shape mismatch");
  const std::size_t n = a.rows();
  Vector x(b.begin(), b.end());
  double scale = 0.0;
  for (double v : a.values()) scale = std::max(scale, std::abs(v));
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
    if (!(std::abs(a(piv, c)) > 1e-14 * scale)) throw Error(ErrorKind::NotInvertible, "singular matrix");
    if (piv != c) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(c, j), a(piv, j));
      std::swap(x[c], x[piv]);
    }
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a(r, c) / a(c, c);
      if (f == 0.0) continue;
      for (std::size_t j = c; j < n; ++j) a(r, j) -= f * a(c, j);
      x[r] -= f * x[c];
    }
  }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = i + 1; j < n; ++j) x[i] -= a(i, j) * x[j];
    x[i] /= a(i, i);
  }
  return x;
}

inline Matrix lu_inverse(const Matrix& a) {
  const std::size_t n = a.rows();
  Matrix inv(n, n);
  Vector e(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(e.begin(), e.end(), 0.0);
    e[j] = 1.0;
    const Vector col = lu_solve(a, e);
    for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
  }
  return inv;
}

/// Eigenvalues of a symmetric matrix (cyclic Jacobi), ascending.
inline Vector symmetric_eigenvalues(Matrix a) {
  require_symmetric(a, 1e-10);
  const std::size_t n = a.rows();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (off < 1e-30 * std::max(1.0, frobenius(a) * frobenius(a))) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
  }
  Vector ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
  std::sort(ev.begin(), ev.end());
  return ev;
}

/// 2-norm condition number of an arbitrary square matrix.
inline double condition_number(const Matrix& a) {
  const Vector ev = symmetric_eigenvalues(symmetrized(a.transpose() * a));
  if (!(ev.front() > 0.0)) return std::numeric_limits<double>::infinity();
  return std::sqrt(ev.back() / ev.front());
}

// ---------------------------------------------------------------------------
// Scalar calculus

struct DerivativeEstimate {
  double value = 0.0;
  double error = 0.0;  // last extrapolation gap
};

inline double default_romberg_step(double x0) { return std::max(1e-4, 1e-4 * std::abs(x0)); }

/// Richardson-extrapolated central difference. Exact for polynomials of degree
/// up to 2*levels-1 (modulo rounding).
inline DerivativeEstimate romberg_derivative(const std::function<double(double)>& f, double x0, double h0,
                                             int levels = 5) {
  if (!(h0 > 0.0)) throw Error(ErrorKind::InvalidArgument, "romberg step must be positive");
  if (levels < 2 || levels > 8) throw Error(ErrorKind::InvalidArgument, "romberg levels must be in [2, 8]");
  std::vector<Vector> table(levels, Vector(levels, 0.0));
  double h = h0;
  for (int i = 0; i < levels; ++i, h *= 0.5) {
    const double fp = f(x0 + h);
    const double fm = f(x0 - h);
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw Error(ErrorKind::NonFinite, "non-finite function value in romberg_derivative");
    table[i][0] = (fp - fm) / (2.0 * h);
    double factor = 4.0;
    for (int j = 1; j <= i; ++j, factor *= 4.0)
      table[i][j] = table[i][j - 1] + (table[i][j - 1] - table[i - 1][j - 1]) / (factor - 1.0);
  }
  const int last = levels - 1;
  return {table[last][last], std::abs(table[last][last] - table[last - 1][last - 1])};
}

struct RootResult {
  double root = 0.0;
  int iterations = 0;
};

/// Bisection on a sign-changing bracket. Stops once |g(x)| <= tol or the
/// bracket is no wider than tol.
inline RootResult bisect_root(const std::function<double(double)>& g, double lo, double hi, double tol) {
  if (!(lo < hi)) throw Error(ErrorKind::InvalidArgument, "bisect_root needs lo < hi");
  if (!(tol > 0.0)) throw Error(ErrorKind::InvalidArgument, "bisect_root needs tol > 0");
  double glo = g(lo);
  const double ghi = g(hi);
  if (glo * ghi > 0.0 || std::isnan(glo * ghi)) throw Error(ErrorKind::NoSignChange, "no sign change on bracket");
  if (glo == 0.0) return {lo, 0};
  if (ghi == 0.0) return {hi, 0};
  int it = 0;
  while (hi - lo > tol) {
    ++it;
    const double mid = 0.5 * (lo + hi);
    const double gm = g(mid);
    if (std::abs(gm) <= tol) return {mid, it};
    if ((gm < 0.0) == (glo < 0.0)) {
      lo = mid;
      glo = gm;
    } else {
      hi = mid;
    }
  }
  return {0.5 * (lo + hi), it};
}

}  // namespace localel

#endif  // LOCALEL_NUMERICS_HPP
