#pragma once

// Scalar special functions, stable primitives and quadrature used as ground
// truth throughout the library. Everything here is a pure function.

#include <functional>
#include <numbers>
#include <span>

namespace era::numerics {

inline constexpr double kSqrt2Pi = 2.5066282746310005024;
/// log(sqrt(2*pi*e)), the per-dimension entropy of a unit Gaussian.
inline constexpr double kLogSqrt2PiE = 1.4189385332046727418;
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

/// Composite Simpson rule over [lower, upper] with an even number of panels.
struct QuadratureSpec {
  double lower = 0.0;
  double upper = 1.0;
  int panels = 4096;

  void validate() const;
};

double normal_pdf(double x);
double normal_log_pdf(double x);

/// Standard normal CDF, Phi(x) = erfc(-x / sqrt 2) / 2.
double normal_cdf(double x);

/// Upper tail 1 - Phi(x) without cancellation for large x.
double normal_sf(double x);

/// Phi(b) - Phi(a) for a < b, computed on whichever tail avoids cancellation.
double normal_mass(double a, double b);

/// Inverse of normal_cdf on (0, 1). Rational initial guess refined by one
/// Halley step; |Phi(q(p)) - p| <= 1e-10 on [1e-12, 1 - 1e-12].
double normal_quantile(double p);

/// Quantile of the upper tail: returns x with normal_sf(x) = q.
double normal_quantile_upper(double q);

/// log(1 + exp(x)) without overflow.
double softplus(double x);

/// log(sum exp(xs)), max-shifted. Throws std::invalid_argument on empty input.
double log_sum_exp(std::span<const double> xs);

double simpson_integrate(const std::function<double(double)>& f, const QuadratureSpec& spec);

/// Quadrature oracle for the differential entropy -int p log p of a density
/// supported on [spec.lower, spec.upper]. Zero density contributes zero.
double entropy_by_quadrature(const std::function<double(double)>& density, const QuadratureSpec& spec);

}  // namespace era::numerics
