#pragma once

// Toy sequence task for GRPO with and without ERA. A position-conditioned
// policy emits `length` tokens; a response earns reward 1 when every token
// lies in the allowed set of one hidden pattern, observed with probability
// success_prob.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "era/llm.hpp"
#include "era/run_record.hpp"

namespace era::grpo {

struct ToyTask {
  std::size_t vocab = 16;
  std::size_t length = 12;
  std::size_t patterns = 2;
  std::size_t allowed_per_position = 10;

  /// allowed[p][t][v] for pattern p, position t, token v.
  std::vector<std::vector<std::vector<std::uint8_t>>> allowed;

  static ToyTask make(std::size_t vocab, std::size_t length, std::size_t patterns, std::size_t allowed_per_position,
                      std::uint64_t seed);
  double reward(const std::vector<std::size_t>& tokens) const;
};

struct ToyGrpoConfig {
  std::size_t vocab = 16;
  std::size_t length = 12;
  std::size_t patterns = 2;
  std::size_t allowed_per_position = 12;
  std::size_t group_size = 8;  // K
  std::size_t groups_per_step = 32;
  std::size_t steps = 1000;
  std::size_t embed = 16;
  std::size_t hidden = 64;
  double lr = 7e-3;
  /// A matching response is rewarded with this probability, so groups keep
  /// mixed rewards after the task is learned; 1 gives a deterministic reward.
  double success_prob = 0.5;
  bool use_era = true;
  llm::EraLlmConfig era;
  std::uint64_t task_seed = 12345;

  void validate() const;
};

/// Points per step: mean_reward, h_resp (mean over responses), token_entropy,
/// frac_sharpen / frac_flatten (over responses with positive advantage), and
/// frac_below_low / frac_above_high of H_resp. Also hashes sampled tokens.
/// Writes the final policy (MLP and position embedding) to `checkpoint` when
/// it is non-empty.
run::RunRecord train_toy_grpo(const ToyGrpoConfig& cfg, std::uint64_t seed,
                              const std::filesystem::path& checkpoint = {});

}  // namespace era::grpo
