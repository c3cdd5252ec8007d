#pragma once

// ERA for bounded Gaussian policies: the entropy-floor activation on the
// standard deviations, its batch-level variant and the residual-entropy
// machinery that compensates for action bounding.

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "era/autodiff.hpp"
#include "era/distributions.hpp"

namespace era::cont {

enum class Bounding { truncated, tanh };

struct EraContinuousConfig {
  double target_entropy = 0.0;  // H0
  bool learned_delta = false;
  double delta = 0.0;  // constant residual when !learned_delta
  double delta_lr = 3e-4;
  double sigma_min = 1e-3;
  double sigma_max = 1.0;
  std::size_t dim = 1;
  Bounding bounding = Bounding::truncated;

  /// Largest reachable Gaussian entropy, D log(sigma_max sqrt(2 pi e)).
  double max_entropy() const;
  /// Throws ConfigError on sigma bounds, negative delta or H0 + delta above
  /// max_entropy().
  void validate() const;
};

struct DeltaState {
  double delta_hat = 0.0;
  double learning_rate = 3e-4;
  /// Upper projection bound keeping H0 + delta_hat feasible.
  double max_delta = std::numeric_limits<double>::infinity();
};

/// Per-state activation. Returns (mu, sigma') with
///   log sigma'_i = max(log smax + (H0' - D log sqrt(2 pi e) - D log smax) softmax(sigma_hat)_i, log smin)
/// clipped to [sigma_min, sigma_max]; H0' = H0 + delta.
dist::GaussianPolicyParams era_activate(std::span<const double> mu, std::span<const double> sigma_hat,
                                        const EraContinuousConfig& cfg, double delta);

/// Mean of exp(sigma_hat) over every entry of a batch.
double batch_exp_mean(const std::vector<std::vector<double>>& sigma_hat);

/// Batch-level activation with softmax replaced by exp(sigma_hat) / ebar.
/// When ebar is empty it is computed from this batch.
std::vector<dist::GaussianPolicyParams> era_activate_batch(const std::vector<std::vector<double>>& mu,
                                                           const std::vector<std::vector<double>>& sigma_hat,
                                                           const EraContinuousConfig& cfg, double delta,
                                                           std::optional<double> ebar = std::nullopt);

/// Batch activation that tracks a running ebar for evaluation mode.
class BatchEraActivation {
 public:
  explicit BatchEraActivation(double momentum = 0.9) : momentum_(momentum) {}

  /// Uses the batch's own ebar and folds it into the running average.
  std::vector<dist::GaussianPolicyParams> train(const std::vector<std::vector<double>>& mu,
                                                const std::vector<std::vector<double>>& sigma_hat,
                                                const EraContinuousConfig& cfg, double delta);
  /// Uses the running ebar; throws std::logic_error before the first train().
  std::vector<dist::GaussianPolicyParams> eval(const std::vector<std::vector<double>>& mu,
                                               const std::vector<std::vector<double>>& sigma_hat,
                                               const EraContinuousConfig& cfg, double delta) const;

  /// Folds one batch mean into the running average (first call initializes).
  void observe(double batch_ebar);
  std::optional<double> running_ebar() const { return running_; }

 private:
  double momentum_;
  std::optional<double> running_;
};

/// delta_hat * (mean(entropies) - H0).
double residual_loss(double delta_hat, std::span<const double> entropies, double h0);
/// d residual_loss / d delta_hat = mean(entropies) - H0.
double residual_loss_grad(std::span<const double> entropies, double h0);

/// Entropy lost to truncation on [-1, 1]: gaussian_entropy - truncated_entropy.
double delta_tn_analytic(const dist::GaussianPolicyParams& params);

/// Entropy lost to tanh squashing, -E[sum log(1 - tanh(u)^2)], by Monte Carlo.
dist::McEstimate delta_tanh_mc(const dist::GaussianPolicyParams& params, std::size_t n, Rng& rng);

/// Projected gradient step delta <- clamp(delta - lr (mean entropy - H0), 0, max_delta).
DeltaState update_delta(DeltaState state, std::span<const double> entropies, double h0);

/// Entropy estimate fed to the residual loss: analytic truncated entropy, or a
/// 256-sample tanh Monte-Carlo estimate.
double final_policy_entropy(const dist::GaussianPolicyParams& params, Bounding bounding, Rng& rng);

// --- tape versions ---------------------------------------------------------

/// sigma_hat: [N, D] -> log sigma' [N, D], both bounds applied.
ad::Var era_log_sigma(ad::Var sigma_hat, const EraContinuousConfig& cfg, double delta);

/// Per-row truncated-Gaussian log density of actions: [N, D] x3 -> [N, 1].
ad::Var truncated_log_prob_rows(ad::Var mu, ad::Var log_sigma, ad::Var action);

}  // namespace era::cont
