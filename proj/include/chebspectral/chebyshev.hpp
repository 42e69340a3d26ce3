#ifndef CHEBSPECTRAL_CHEBYSHEV_HPP
#define CHEBSPECTRAL_CHEBYSHEV_HPP

#include "csr.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace chebspectral {

/// Spectrum bounds driving the filter.
///
/// `a` and `b` bound the whole spectrum (0 and 2 for a normalized
/// Laplacian); `a0` is the lower bound of the unwanted eigenvalues. The
/// filter maps [a0, b] onto [-1, 1], where the Chebyshev polynomial stays
/// bounded, and amplifies everything in [a, a0).
struct FilterBounds {
  double a = 0.0;
  double b = 2.0;
  double a0 = 1.0;

  bool valid() const noexcept {
    return std::isfinite(a) && std::isfinite(b) && std::isfinite(a0) && a < a0 && a0 < b;
  }

  /// Default cut for a normalized Laplacian wanting k of n eigenvalues.
  static FilterBounds laplacian(Index k_want, Index n) {
    FilterBounds f;
    f.a0 = f.a + (f.b - f.a) * static_cast<double>(k_want) / static_cast<double>(n);
    return f;
  }
};

/// Chebyshev polynomial of the first kind, C_m(x), via the trigonometric /
/// hyperbolic closed form.
inline double cheb_scalar(int m, double x) {
  if (m < 0) throw std::invalid_argument("cheb_scalar: negative degree");
  if (m == 0) return 1.0;
  if (std::abs(x) <= 1.0) return std::cos(m * std::acos(x));
  const double v = std::cosh(m * std::acosh(std::abs(x)));
  return (x < 0.0 && (m % 2 == 1)) ? -v : v;
}

/// Centre, half-width and initial scaling of the filter interval.
struct FilterCoeffs {
  double c;
  double e;
  double sigma;
  double tau;

  explicit FilterCoeffs(const FilterBounds& f) {
    if (!f.valid())
      throw std::invalid_argument("chebyshev filter: bounds must satisfy a < a0 < b (got a=" +
                                  std::to_string(f.a) + ", a0=" + std::to_string(f.a0) +
                                  ", b=" + std::to_string(f.b) + ")");
    c = 0.5 * (f.a0 + f.b);
    e = 0.5 * (f.b - f.a0);
    if (f.a - c == 0.0) throw std::invalid_argument("chebyshev filter: degenerate bounds");
    sigma = e / (f.a - c);
    tau = 2.0 / sigma;
  }
};

/// Scalar response of the scaled degree-m filter:
/// C_m((x - c)/e) / C_m((a - c)/e).
inline double filter_response(const FilterBounds& f, int m, double x) {
  const FilterCoeffs k(f);
  return cheb_scalar(m, (x - k.c) / k.e) / cheb_scalar(m, (f.a - k.c) / k.e);
}

namespace detail {

// The two update formulas of the scaled three-term recurrence. Shared by the
// sequential and distributed filters so both perform identical arithmetic.

inline void cheb_first(const DenseBlock& av, const DenseBlock& v, const FilterCoeffs& k,
                       DenseBlock& u) {
  u = (av - k.c * v) * (k.sigma / k.e);
}

inline void cheb_step(const DenseBlock& au, const DenseBlock& u, const DenseBlock& vprev,
                      double sigma, double sigma1, const FilterCoeffs& k, DenseBlock& w) {
  w = (au - k.c * u) * (2.0 * sigma1 / k.e) - vprev * (sigma * sigma1);
}

}  // namespace detail

/// Degree-m scaled Chebyshev filter applied through `apply(x, out)`, which
/// must compute out = A x.
template <class Apply>
DenseBlock chebyshev_filter_with(Apply&& apply, const DenseBlock& v, const FilterBounds& bounds,
                                 int m) {
  if (m < 1) throw std::invalid_argument("chebyshev_filter: degree must be >= 1");
  const FilterCoeffs k(bounds);
  DenseBlock prev = v;
  DenseBlock u, w, tmp;
  apply(prev, tmp);
  detail::cheb_first(tmp, prev, k, u);
  double sigma = k.sigma;
  for (int i = 2; i <= m; ++i) {
    const double sigma1 = 1.0 / (k.tau - sigma);
    apply(u, tmp);
    detail::cheb_step(tmp, u, prev, sigma, sigma1, k, w);
    prev.swap(u);
    u.swap(w);
    sigma = sigma1;
  }
  return u;
}

inline DenseBlock chebyshev_filter(const CsrMatrix& a, const DenseBlock& v,
                                   const FilterBounds& bounds, int m) {
  if (v.rows() != a.cols()) throw std::invalid_argument("chebyshev_filter: dimension mismatch");
  return chebyshev_filter_with([&](const DenseBlock& x, DenseBlock& out) { spmm_into(a, x, out); },
                               v, bounds, m);
}

}  // namespace chebspectral

#endif  // CHEBSPECTRAL_CHEBYSHEV_HPP
