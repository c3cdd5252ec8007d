#pragma once

// ERA for softmax policies: logits are mapped so that the output
// distribution's entropy stays above a target H0.

#include <cstddef>
#include <span>
#include <vector>

#include "era/autodiff.hpp"
#include "era/distributions.hpp"

namespace era::disc {

enum class Inverse { approx, exact };

struct EraDiscreteConfig {
  double target_entropy = 0.0;  // H0
  double tau = 4.0;
  std::size_t classes = 2;  // D

  /// log(tau) / tau, the per-class cap on kappa.
  double u() const;
  /// C = exp(H0 - 1), the kappa budget.
  double c() const;
  /// kappa_i = max(slope * p_i + intercept, 0).
  double slope() const;
  double intercept() const;
  /// Requires D >= 2, tau >= e, H0 <= log D and u <= C <= D u.
  void validate() const;
};

/// Per-class entropy allocation for one logit vector.
std::vector<double> kappa(std::span<const double> z, const EraDiscreteConfig& cfg);
/// Same quantity written as u + (C - D u)(1 - p_i)/(D - 1), clamped at 0.
std::vector<double> kappa_reference(std::span<const double> z, const EraDiscreteConfig& cfg);

/// Closed-form approximation of the inverse of h(y) = -y e^y on y <= -1:
/// -1 - sqrt(2v) - 0.75 v with v = -1 - log x. x is floored at 1e-12.
double h_inv_approx(double x);
/// Root of -y e^y = x with y <= -1 by safeguarded Newton in log space.
double h_inv_exact(double x);
double h_inv(double x, Inverse inverse);

/// Adjusted logits h^-1(kappa(z)) shifted so their minimum is 0.
std::vector<double> era_logits(std::span<const double> z, const EraDiscreteConfig& cfg, Inverse inverse);
dist::CategoricalLogits era_logits(const dist::CategoricalLogits& z, const EraDiscreteConfig& cfg, Inverse inverse);

/// Tape version over a batch of rows: [N, D] -> [N, D].
ad::Var era_logits(ad::Var z, const EraDiscreteConfig& cfg, Inverse inverse);

}  // namespace era::disc
