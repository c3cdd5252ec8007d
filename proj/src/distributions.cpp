#include "era/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "era/error.hpp"
#include "era/numerics.hpp"

namespace era::dist {

using numerics::kLogSqrt2PiE;
using numerics::normal_pdf;

GaussianPolicyParams::GaussianPolicyParams(std::vector<double> mu_in, std::vector<double> sigma_in, double lo,
                                           double hi)
    : mu(std::move(mu_in)), sigma(std::move(sigma_in)), sigma_min(lo), sigma_max(hi) {
  validate();
}

void GaussianPolicyParams::validate() const {
  if (mu.size() != sigma.size()) throw ShapeError("GaussianPolicyParams: mu and sigma lengths differ");
  if (mu.empty()) throw ShapeError("GaussianPolicyParams: dimension must be positive");
  if (!(sigma_min > 0.0 && sigma_min < sigma_max)) {
    throw ConfigError("GaussianPolicyParams: requires 0 < sigma_min < sigma_max");
  }
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (!std::isfinite(mu[i])) throw ConfigError("GaussianPolicyParams: mu[" + std::to_string(i) + "] not finite");
    if (!(sigma[i] >= sigma_min && sigma[i] <= sigma_max)) {
      throw ConfigError("GaussianPolicyParams: sigma[" + std::to_string(i) + "] outside [sigma_min, sigma_max]");
    }
  }
}

TruncatedGaussianAux TruncatedGaussianAux::from(const GaussianPolicyParams& params) {
  params.validate();
  TruncatedGaussianAux aux;
  const std::size_t d = params.dim();
  aux.alpha.resize(d);
  aux.beta.resize(d);
  aux.mass.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    aux.alpha[i] = (-1.0 - params.mu[i]) / params.sigma[i];
    aux.beta[i] = (1.0 - params.mu[i]) / params.sigma[i];
    aux.mass[i] = numerics::normal_mass(aux.alpha[i], aux.beta[i]);
    if (!(aux.mass[i] >= kMinTruncatedMass)) {
      throw DegenerateMassError("truncated Gaussian: mass on [-1, 1] underflows in dimension " + std::to_string(i));
    }
  }
  return aux;
}

double gaussian_entropy(const GaussianPolicyParams& params) {
  params.validate();
  double h = 0.0;
  for (double s : params.sigma) h += kLogSqrt2PiE + std::log(s);
  return h;
}

double truncated_entropy(const GaussianPolicyParams& params) {
  const auto aux = TruncatedGaussianAux::from(params);
  double h = 0.0;
  for (std::size_t i = 0; i < params.dim(); ++i) {
    const double a = aux.alpha[i];
    const double b = aux.beta[i];
    const double z = aux.mass[i];
    h += std::log(params.sigma[i]) + std::log(z) + kLogSqrt2PiE - (b * normal_pdf(b) - a * normal_pdf(a)) / (2.0 * z);
  }
  return h;
}

std::vector<double> truncated_mean(const GaussianPolicyParams& params) {
  const auto aux = TruncatedGaussianAux::from(params);
  std::vector<double> m(params.dim());
  for (std::size_t i = 0; i < params.dim(); ++i) {
    m[i] = params.mu[i] +
           params.sigma[i] * (normal_pdf(aux.alpha[i]) - normal_pdf(aux.beta[i])) / aux.mass[i];
  }
  return m;
}

std::vector<double> truncated_from_uniform(const GaussianPolicyParams& params, std::span<const double> uniforms) {
  const auto aux = TruncatedGaussianAux::from(params);
  if (uniforms.size() != params.dim()) throw ShapeError("truncated_from_uniform: uniform count differs from dim");
  std::vector<double> action(params.dim());
  for (std::size_t i = 0; i < params.dim(); ++i) {
    const double eps = std::clamp(uniforms[i], 0.0, 1.0);
    const double a = aux.alpha[i];
    const double b = aux.beta[i];
    double x;
    if (a > 0.0) {
      // Both bounds in the upper tail: invert the survival function instead.
      const double lo = numerics::normal_sf(b);
      const double hi = numerics::normal_sf(a);
      const double q = hi - eps * (hi - lo);
      x = q <= 0.0 ? b : (q >= 1.0 ? a : numerics::normal_quantile_upper(q));
    } else {
      const double lo = numerics::normal_cdf(a);
      const double hi = numerics::normal_cdf(b);
      const double p = lo + eps * (hi - lo);
      x = p <= 0.0 ? a : (p >= 1.0 ? b : numerics::normal_quantile(p));
    }
    action[i] = std::clamp(params.mu[i] + params.sigma[i] * std::clamp(x, a, b), -1.0, 1.0);
  }
  return action;
}

std::vector<double> truncated_sample(const GaussianPolicyParams& params, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> eps(params.dim());
  for (double& e : eps) e = unif(rng);
  return truncated_from_uniform(params, eps);
}

double truncated_log_prob(const GaussianPolicyParams& params, std::span<const double> action) {
  const auto aux = TruncatedGaussianAux::from(params);
  if (action.size() != params.dim()) throw ShapeError("truncated_log_prob: action length differs from dim");
  double lp = 0.0;
  for (std::size_t i = 0; i < params.dim(); ++i) {
    if (!(action[i] >= -1.0 && action[i] <= 1.0)) {
      throw DomainError("truncated_log_prob: action[" + std::to_string(i) + "] outside [-1, 1]");
    }
    const double xi = (action[i] - params.mu[i]) / params.sigma[i];
    lp += numerics::normal_log_pdf(xi) - std::log(params.sigma[i]) - std::log(aux.mass[i]);
  }
  return lp;
}

double log_one_minus_tanh_sq(double u) { return 2.0 * (std::numbers::ln2 - u - numerics::softplus(-2.0 * u)); }

double tanh_gaussian_log_prob(const GaussianPolicyParams& params, std::span<const double> pre_action) {
  params.validate();
  if (pre_action.size() != params.dim()) throw ShapeError("tanh_gaussian_log_prob: length differs from dim");
  double lp = 0.0;
  for (std::size_t i = 0; i < params.dim(); ++i) {
    const double xi = (pre_action[i] - params.mu[i]) / params.sigma[i];
    lp += numerics::normal_log_pdf(xi) - std::log(params.sigma[i]) - log_one_minus_tanh_sq(pre_action[i]);
  }
  return lp;
}

McEstimate tanh_gaussian_entropy_mc(const GaussianPolicyParams& params, std::size_t n, Rng& rng) {
  params.validate();
  if (n == 0) throw std::invalid_argument("tanh_gaussian_entropy_mc: n must be >= 1");
  // Gaussian part in closed form; only the tanh correction is sampled
  std::normal_distribution<double> normal(0.0, 1.0);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    double v = 0.0;
    for (std::size_t i = 0; i < params.dim(); ++i)
      v += log_one_minus_tanh_sq(params.mu[i] + params.sigma[i] * normal(rng));
    sum += v;
    sum_sq += v * v;
  }
  McEstimate est;
  const double mean_correction = sum / static_cast<double>(n);
  est.mean = gaussian_entropy(params) + mean_correction;
  if (n > 1) {
    const double var = std::max(0.0, (sum_sq - sum * mean_correction) / static_cast<double>(n - 1));
    est.std_error = std::sqrt(var / static_cast<double>(n));
  }
  return est;
}

std::vector<double> softmax(std::span<const double> z) {
  const double lse = numerics::log_sum_exp(z);
  std::vector<double> p(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) p[i] = std::exp(z[i] - lse);
  return p;
}

double categorical_entropy(std::span<const double> z) {
  const double lse = numerics::log_sum_exp(z);
  double h = 0.0;
  for (double zi : z) {
    const double log_p = zi - lse;
    const double p = std::exp(log_p);
    if (p > 0.0) h -= p * log_p;
  }
  return std::max(h, 0.0);
}

double categorical_entropy(const CategoricalLogits& logits) { return categorical_entropy(logits.z); }

}  // namespace era::dist
