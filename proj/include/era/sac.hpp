#pragma once

// Soft actor-critic with a truncated-Gaussian policy, in two variants:
// the entropy-bonus baseline with fixed temperature and SAC-ERA, whose policy
// head enforces the entropy floor so no entropy term enters either loss.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "era/autodiff.hpp"
#include "era/continuous.hpp"
#include "era/envs.hpp"
#include "era/nn.hpp"
#include "era/run_record.hpp"

namespace era::sac {

enum class Variant { baseline, era };

Variant parse_variant(const std::string& name);
const char* to_string(Variant v);

struct SacConfig {
  double gamma = 0.99;
  double tau = 0.005;
  double alpha = 0.2;  // baseline temperature, fixed
  std::size_t batch_size = 128;
  std::size_t grad_steps = 2;
  std::size_t warmup_steps = 1000;
  std::size_t hidden = 64;
  bool layer_norm = true;
  double lr = 1e-3;
  std::size_t buffer_capacity = 100000;
  std::size_t eval_every = 2000;
  std::size_t eval_episodes = 10;
  double log_sigma_min = -5.0;
  double log_sigma_max = 2.0;
  /// H0; defaults to -dim(A)/2.
  std::optional<double> target_entropy;
  bool learned_delta = false;
  double delta = 0.0;
  double delta_lr = 3e-4;

  /// Defaults tuned per task: pointmass reaches its goal within ~20 steps, so
  /// it uses the shorter horizon gamma = 0.95.
  static SacConfig for_env(env::EnvKind kind);

  void validate() const;
  cont::EraContinuousConfig era_config(std::size_t act_dim) const;
};

/// Minibatch as tensors; reward and not_done are [B, 1].
struct Batch {
  ad::Tensor state, action, reward, next_state, not_done;
};

Batch make_batch(const env::ReplayBuffer& buffer, std::span<const std::size_t> indices);

/// y = r + gamma * not_done * (min_q - alpha * logp) for the baseline and
/// y = r + gamma * not_done * min_q for ERA. logp is ignored for ERA.
ad::Tensor compute_targets(const ad::Tensor& reward, const ad::Tensor& not_done, const ad::Tensor& min_q,
                           const ad::Tensor* logp, double gamma, double alpha, Variant variant);

struct UpdateMetrics {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double mean_gaussian_entropy = 0.0;
  double min_gaussian_entropy = 0.0;
  double delta = 0.0;
};

class SacAgent {
 public:
  SacAgent(std::size_t obs_dim, std::size_t act_dim, SacConfig cfg, Variant variant, std::uint64_t seed);
  // Optimizers hold pointers into the networks.
  SacAgent(const SacAgent&) = delete;
  SacAgent& operator=(const SacAgent&) = delete;

  struct PolicyHead {
    ad::Var mu;         // tanh of the raw mean, in [-1, 1]
    ad::Var log_sigma;
  };
  PolicyHead policy(ad::Tape& tape, ad::Var obs, bool trainable);

  /// Per-row policy parameters for a [N, obs_dim] block of observations.
  std::vector<dist::GaussianPolicyParams> policy_params(const ad::Tensor& obs);
  std::vector<double> act(std::span<const double> obs, bool deterministic, Rng& rng);

  struct NextValue {
    ad::Tensor min_q;
    std::optional<ad::Tensor> logp;  // baseline only
  };
  /// Target critics at (s', a') with a' drawn from the policy via uniforms eps.
  NextValue next_value(const Batch& batch, const ad::Tensor& eps);
  ad::Tensor q_target(const Batch& batch, const ad::Tensor& eps);

  UpdateMetrics update(const Batch& batch, Rng& rng);

  /// Number of policy log-density evaluations so far (always 0 for ERA).
  std::size_t logprob_evaluations() const { return logprob_evals_; }
  double current_delta() const;
  /// H0 + delta, the Gaussian-level entropy floor of the ERA head.
  double entropy_floor() const;
  Variant variant() const { return variant_; }
  const SacConfig& config() const { return cfg_; }
  const cont::EraContinuousConfig& era_config() const { return era_; }
  nn::Mlp& actor() { return actor_; }
  nn::Mlp& critic(int i) { return i == 0 ? q1_ : q2_; }
  nn::Mlp& target_critic(int i) { return i == 0 ? q1_target_ : q2_target_; }

  /// Actor, online and target critics (prefixed "target.") and delta_hat.
  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  ad::Var log_prob(ad::Var mu, ad::Var log_sigma, ad::Var action);

  SacConfig cfg_;
  Variant variant_;
  std::size_t obs_dim_;
  std::size_t act_dim_;
  cont::EraContinuousConfig era_;
  cont::DeltaState delta_;
  nn::Mlp actor_, q1_, q2_, q1_target_, q2_target_;
  nn::Adam actor_opt_, critic_opt_;
  std::size_t logprob_evals_ = 0;
};

/// Writes the final agent to `checkpoint` when it is non-empty.
run::RunRecord train_sac(env::EnvKind kind, const SacConfig& cfg, Variant variant, std::uint64_t seed,
                         std::size_t total_steps, const std::filesystem::path& checkpoint = {});

nlohmann::json to_json(const SacConfig& cfg);

}  // namespace era::sac
