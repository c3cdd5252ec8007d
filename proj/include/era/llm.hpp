#pragma once

// ERA for language-model style policies: GRPO advantages, the response
// entropy statistic and the post-sampling logit / advantage rescaling.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "era/autodiff.hpp"

namespace era::llm {

struct EraLlmConfig {
  double omega_low = 0.45;
  std::optional<double> omega_high;  // empty = +inf
  double k = 2.0;
  double top_frac = 0.2;
  std::optional<std::size_t> top_k_logits;  // 20 in the reference setup
  bool scale_advantages = true;

  void validate() const;
};

enum class Branch { sharpen, identity, flatten };

const char* to_string(Branch b);

/// Logits [batch * time, vocab] flattened row-major, one response per batch index.
struct ResponseBatch {
  std::size_t batch = 0;
  std::size_t time = 0;
  std::size_t vocab = 0;
  std::vector<double> logits;         // [batch, time, vocab]
  std::vector<std::size_t> tokens;    // [batch, time]
  std::vector<double> advantages;     // [batch, time]
  std::vector<std::uint8_t> mask;     // [batch, time], 1 = valid

  void validate() const;
  std::span<const double> token_logits(std::size_t b, std::size_t t) const {
    return {logits.data() + (b * time + t) * vocab, vocab};
  }
};

/// (r - mean) / (std + eps) with the population std; zeros when std < 1e-8.
std::vector<double> grpo_advantages(std::span<const double> rewards, double eps = 1e-8);

/// Mean of the m = max(1, floor(top_frac L)) largest unmasked entropies.
/// Ties go to the earlier position.
double h_resp(std::span<const double> token_entropies, std::span<const std::uint8_t> mask, double top_frac = 0.2);

Branch select_branch(double h_resp, double advantage, const EraLlmConfig& cfg);

/// k z, z / k or z according to the branch.
std::vector<double> era_transform(std::span<const double> logits, double h_resp, double advantage,
                                  const EraLlmConfig& cfg);
/// A / k, A or k A matching era_transform (A unchanged if scaling is disabled).
double scale_advantages(double advantage, double h_resp, const EraLlmConfig& cfg);

/// Per-token branch decisions for a batch.
struct TokenPlan {
  std::vector<double> logit_scale;   // k, 1 or 1/k per token
  std::vector<double> advantage;     // A' per token, 0 where masked
  std::vector<Branch> branch;
  std::vector<double> h_resp;        // per response
  std::size_t unmasked = 0;
};

TokenPlan plan_tokens(const ResponseBatch& batch, const EraLlmConfig& cfg);

/// Same, from precomputed per-token entropies.
TokenPlan plan_tokens(std::size_t batch, std::size_t time, std::span<const double> token_entropies,
                      std::span<const double> advantages, std::span<const std::uint8_t> mask,
                      const EraLlmConfig& cfg);

/// J = mean over unmasked tokens of log softmax(s_t z_t)[a_t] A'_t. logits is
/// [batch * time, vocab]. The top-k filter keeps the sampled token.
ad::Var era_objective(ad::Var logits, std::span<const std::size_t> tokens, const TokenPlan& plan,
                      const EraLlmConfig& cfg);

struct ObjectiveResult {
  double value = 0.0;
  std::vector<double> grad_logits;  // dJ/dlogits, same layout as ResponseBatch::logits
  TokenPlan plan;
};

ObjectiveResult era_objective(const ResponseBatch& batch, const EraLlmConfig& cfg);

struct DecompositionResult {
  std::vector<double> lhs;  // autodiff gradient
  std::vector<double> rhs;  // pi A - C (pi' - pi)
};

/// Gradient of sum_a pi_a log pi'_a A'_a (pi detached) against the closed
/// form. advantages must satisfy sum pi A = 0.
DecompositionResult decomposition_check(std::span<const double> z, std::span<const double> advantages, double k,
                                        Branch branch);

struct EntropyFloorStat {
  double min = 0.0;
  double mean = 0.0;
  double frac_below_low = 0.0;
  double frac_above_high = 0.0;
};

EntropyFloorStat entropy_floor_stat(std::span<const double> h_resp_history, const EraLlmConfig& cfg);

/// Config that applies from begin_step onwards (e.g. a second stage that
/// lowers omega_low and removes omega_high).
struct ScheduleStage {
  std::size_t begin_step = 0;
  double omega_low = 0.45;
  std::optional<double> omega_high;
  double k = 2.0;
};

EraLlmConfig config_at(const EraLlmConfig& base, std::span<const ScheduleStage> schedule, std::size_t step);

/// Per-token -sum p log p of a [rows, vocab] logit block.
std::vector<double> token_entropies(std::span<const double> logits, std::size_t vocab);

}  // namespace era::llm
