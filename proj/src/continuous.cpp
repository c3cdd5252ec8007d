#include "era/continuous.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "era/error.hpp"
#include "era/numerics.hpp"

namespace era::cont {

using numerics::kLogSqrt2PiE;

double EraContinuousConfig::max_entropy() const {
  return static_cast<double>(dim) * (std::log(sigma_max) + kLogSqrt2PiE);
}

void EraContinuousConfig::validate() const {
  if (dim == 0) throw ConfigError("EraContinuousConfig: dim must be positive");
  if (!(sigma_min > 0.0) || !(sigma_min < sigma_max) || !std::isfinite(sigma_max)) {
    throw ConfigError("EraContinuousConfig: need 0 < sigma_min < sigma_max < inf");
  }
  if (!std::isfinite(target_entropy)) throw ConfigError("EraContinuousConfig: target_entropy must be finite");
  if (!learned_delta && !(delta >= 0.0)) throw ConfigError("EraContinuousConfig: constant delta must be >= 0");
  if (learned_delta && !(delta_lr > 0.0)) throw ConfigError("EraContinuousConfig: delta_lr must be positive");
  const double h = target_entropy + (learned_delta ? 0.0 : delta);
  if (h > max_entropy()) {
    throw ConfigError("EraContinuousConfig: target entropy " + std::to_string(h) + " exceeds D log(sigma_max sqrt(2 pi e)) = " +
                      std::to_string(max_entropy()));
  }
}

namespace {

// Coefficient multiplying the per-dimension weight; <= 0 for feasible targets.
double slope_total(const EraContinuousConfig& cfg, double delta) {
  if (!(delta >= 0.0)) throw DomainError("era_activate: delta must be >= 0");
  const double h = cfg.target_entropy + delta;
  if (h > cfg.max_entropy() * (1.0 + 1e-15) + 1e-15) throw ConfigError("era_activate: H0 + delta is infeasible");
  const double d = static_cast<double>(cfg.dim);
  return std::min(0.0, h - d * kLogSqrt2PiE - d * std::log(cfg.sigma_max));
}

double bounded_sigma(double log_sigma, const EraContinuousConfig& cfg) {
  const double ls = std::max(log_sigma, std::log(cfg.sigma_min));
  return std::clamp(std::exp(ls), cfg.sigma_min, cfg.sigma_max);
}

}  // namespace

dist::GaussianPolicyParams era_activate(std::span<const double> mu, std::span<const double> sigma_hat,
                                        const EraContinuousConfig& cfg, double delta) {
  if (mu.size() != cfg.dim || sigma_hat.size() != cfg.dim) {
    throw ShapeError("era_activate: expected length " + std::to_string(cfg.dim));
  }
  const double slope = slope_total(cfg, delta);
  const double lse = numerics::log_sum_exp(sigma_hat);
  const double log_smax = std::log(cfg.sigma_max);
  std::vector<double> sigma(cfg.dim);
  for (std::size_t i = 0; i < cfg.dim; ++i) {
    sigma[i] = bounded_sigma(log_smax + slope * std::exp(sigma_hat[i] - lse), cfg);
  }
  return {std::vector<double>(mu.begin(), mu.end()), std::move(sigma), cfg.sigma_min, cfg.sigma_max};
}

double batch_exp_mean(const std::vector<std::vector<double>>& sigma_hat) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& row : sigma_hat) {
    for (double v : row) s += std::exp(v);
    n += row.size();
  }
  if (n == 0) throw ShapeError("batch_exp_mean: empty batch");
  return s / static_cast<double>(n);
}

std::vector<dist::GaussianPolicyParams> era_activate_batch(const std::vector<std::vector<double>>& mu,
                                                           const std::vector<std::vector<double>>& sigma_hat,
                                                           const EraContinuousConfig& cfg, double delta,
                                                           std::optional<double> ebar) {
  if (mu.empty()) throw ShapeError("era_activate_batch: empty batch");
  if (mu.size() != sigma_hat.size()) throw ShapeError("era_activate_batch: mu and sigma_hat batch sizes differ");
  for (std::size_t n = 0; n < mu.size(); ++n) {
    if (mu[n].size() != cfg.dim || sigma_hat[n].size() != cfg.dim) {
      throw ShapeError("era_activate_batch: row " + std::to_string(n) + " has wrong length");
    }
  }
  const double e = ebar ? *ebar : batch_exp_mean(sigma_hat);
  if (!(e > 0.0)) throw DomainError("era_activate_batch: ebar must be positive");
  const double coef = slope_total(cfg, delta) / static_cast<double>(cfg.dim);
  const double log_smax = std::log(cfg.sigma_max);
  std::vector<dist::GaussianPolicyParams> out;
  out.reserve(mu.size());
  for (std::size_t n = 0; n < mu.size(); ++n) {
    std::vector<double> sigma(cfg.dim);
    for (std::size_t i = 0; i < cfg.dim; ++i) {
      sigma[i] = bounded_sigma(log_smax + coef * std::exp(sigma_hat[n][i]) / e, cfg);
    }
    out.emplace_back(mu[n], std::move(sigma), cfg.sigma_min, cfg.sigma_max);
  }
  return out;
}

std::vector<dist::GaussianPolicyParams> BatchEraActivation::train(const std::vector<std::vector<double>>& mu,
                                                                  const std::vector<std::vector<double>>& sigma_hat,
                                                                  const EraContinuousConfig& cfg, double delta) {
  const double e = batch_exp_mean(sigma_hat);
  auto out = era_activate_batch(mu, sigma_hat, cfg, delta, e);
  observe(e);
  return out;
}

std::vector<dist::GaussianPolicyParams> BatchEraActivation::eval(const std::vector<std::vector<double>>& mu,
                                                                 const std::vector<std::vector<double>>& sigma_hat,
                                                                 const EraContinuousConfig& cfg, double delta) const {
  if (!running_) throw std::logic_error("BatchEraActivation::eval: no training batch observed yet");
  return era_activate_batch(mu, sigma_hat, cfg, delta, running_);
}

void BatchEraActivation::observe(double batch_ebar) {
  running_ = running_ ? momentum_ * *running_ + (1.0 - momentum_) * batch_ebar : batch_ebar;
}

namespace {

double mean_of(std::span<const double> xs, const char* who) {
  if (xs.empty()) throw std::invalid_argument(std::string(who) + ": entropies must be nonempty");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

}  // namespace

double residual_loss(double delta_hat, std::span<const double> entropies, double h0) {
  return delta_hat * (mean_of(entropies, "residual_loss") - h0);
}

double residual_loss_grad(std::span<const double> entropies, double h0) {
  return mean_of(entropies, "residual_loss_grad") - h0;
}

double delta_tn_analytic(const dist::GaussianPolicyParams& params) {
  const auto aux = dist::TruncatedGaussianAux::from(params);
  double d = 0.0;
  for (std::size_t i = 0; i < params.dim(); ++i) {
    const double a = aux.alpha[i], b = aux.beta[i], z = aux.mass[i];
    // x phi(x) -> 0 at infinite bounds.
    const double bpb = std::isfinite(b) ? b * numerics::normal_pdf(b) : 0.0;
    const double apa = std::isfinite(a) ? a * numerics::normal_pdf(a) : 0.0;
    d -= std::log(z) - (bpb - apa) / (2.0 * z);
  }
  return d;
}

dist::McEstimate delta_tanh_mc(const dist::GaussianPolicyParams& params, std::size_t n, Rng& rng) {
  if (n == 0) throw std::invalid_argument("delta_tanh_mc: n must be >= 1");
  params.validate();
  std::normal_distribution<double> normal;
  double mean = 0.0, m2 = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    double v = 0.0;
    for (std::size_t i = 0; i < params.dim(); ++i) {
      v -= dist::log_one_minus_tanh_sq(params.mu[i] + params.sigma[i] * normal(rng));
    }
    const double d = v - mean;
    mean += d / static_cast<double>(k + 1);
    m2 += d * (v - mean);
  }
  const double var = n > 1 ? m2 / static_cast<double>(n - 1) : 0.0;
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

DeltaState update_delta(DeltaState state, std::span<const double> entropies, double h0) {
  const double g = residual_loss_grad(entropies, h0);
  state.delta_hat = std::clamp(state.delta_hat - state.learning_rate * g, 0.0, state.max_delta);
  return state;
}

double final_policy_entropy(const dist::GaussianPolicyParams& params, Bounding bounding, Rng& rng) {
  if (bounding == Bounding::truncated) return dist::truncated_entropy(params);
  return dist::tanh_gaussian_entropy_mc(params, 256, rng).mean;
}

ad::Var era_log_sigma(ad::Var sigma_hat, const EraContinuousConfig& cfg, double delta) {
  if (sigma_hat.cols() != cfg.dim) throw ShapeError("era_log_sigma: expected " + std::to_string(cfg.dim) + " columns");
  const double slope = slope_total(cfg, delta);
  ad::Var w = ad::softmax_rows(sigma_hat);
  ad::Var ls = ad::add_scalar(ad::scale(w, slope), std::log(cfg.sigma_max));
  return ad::clip(ls, std::log(cfg.sigma_min), std::log(cfg.sigma_max));
}

ad::Var truncated_log_prob_rows(ad::Var mu, ad::Var log_sigma, ad::Var action) {
  using namespace ad;
  Var inv_sigma = exp(neg(log_sigma));
  Var xi = mul(sub(action, mu), inv_sigma);
  Var alpha = mul(add_scalar(neg(mu), -1.0), inv_sigma);
  Var beta = mul(add_scalar(neg(mu), 1.0), inv_sigma);
  Var per_dim = sub(sub(add_scalar(scale(square(xi), -0.5), -numerics::kLogSqrt2Pi), log_sigma), log_normal_mass(alpha, beta));
  return sum_rows(per_dim);
}

}  // namespace era::cont
