#pragma once

// Policy distributions: diagonal Gaussian, Gaussian truncated to [-1, 1]^D,
// tanh-squashed Gaussian and softmax categorical.

#include <cstddef>
#include <random>
#include <span>
#include <vector>

namespace era {

using Rng = std::mt19937_64;

namespace dist {

/// Per-dimension mean and standard deviation with the bounds the policy head
/// is allowed to produce.
struct GaussianPolicyParams {
  std::vector<double> mu;
  std::vector<double> sigma;
  double sigma_min = 1e-6;
  double sigma_max = 1e6;

  GaussianPolicyParams() = default;
  GaussianPolicyParams(std::vector<double> mu, std::vector<double> sigma, double sigma_min, double sigma_max);

  std::size_t dim() const { return mu.size(); }
  /// Throws ConfigError / ShapeError when an invariant is violated.
  void validate() const;
};

/// Standardized truncation bounds and the per-dimension mass on [-1, 1].
struct TruncatedGaussianAux {
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<double> mass;

  /// Throws DegenerateMassError if any mass is below 1e-300.
  static TruncatedGaussianAux from(const GaussianPolicyParams& params);
};

struct CategoricalLogits {
  std::vector<double> z;
};

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

inline constexpr double kMinTruncatedMass = 1e-300;

double gaussian_entropy(const GaussianPolicyParams& params);

double truncated_entropy(const GaussianPolicyParams& params);

/// Analytic mean of each truncated coordinate, mu + sigma (phi(a) - phi(b)) / Z.
std::vector<double> truncated_mean(const GaussianPolicyParams& params);

/// Inverse-CDF sample. Coordinates whose interval lies in the upper tail are
/// drawn in the mirrored frame so that Phi(alpha) close to one keeps precision.
std::vector<double> truncated_sample(const GaussianPolicyParams& params, Rng& rng);

/// Deterministic inverse-CDF map from uniforms in [0, 1] to an action.
std::vector<double> truncated_from_uniform(const GaussianPolicyParams& params, std::span<const double> uniforms);

double truncated_log_prob(const GaussianPolicyParams& params, std::span<const double> action);

/// log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)).
double log_one_minus_tanh_sq(double u);

/// Log density of a = tanh(u) for u ~ N(mu, sigma^2), evaluated at the
/// pre-squash sample u.
double tanh_gaussian_log_prob(const GaussianPolicyParams& params, std::span<const double> pre_action);

McEstimate tanh_gaussian_entropy_mc(const GaussianPolicyParams& params, std::size_t n, Rng& rng);

std::vector<double> softmax(std::span<const double> z);

/// -sum p log p with p = softmax(z); lies in [0, log D].
double categorical_entropy(const CategoricalLogits& logits);
double categorical_entropy(std::span<const double> z);

}  // namespace dist
}  // namespace era
