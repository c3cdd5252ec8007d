#include "era/grpo_toy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "era/distributions.hpp"
#include "era/error.hpp"
#include "era/nn.hpp"

namespace era::grpo {

ToyTask ToyTask::make(std::size_t vocab, std::size_t length, std::size_t patterns, std::size_t allowed_per_position,
                      std::uint64_t seed) {
  if (vocab < 2 || length == 0 || patterns == 0) throw ConfigError("ToyTask: need vocab >= 2, length, patterns > 0");
  if (allowed_per_position == 0 || allowed_per_position > vocab) {
    throw ConfigError("ToyTask: allowed_per_position must lie in [1, vocab]");
  }
  ToyTask task{vocab, length, patterns, allowed_per_position, {}};
  Rng rng(seed);
  std::vector<std::size_t> ids(vocab);
  task.allowed.assign(patterns, std::vector<std::vector<std::uint8_t>>(length, std::vector<std::uint8_t>(vocab, 0)));
  for (std::size_t p = 0; p < patterns; ++p) {
    for (std::size_t t = 0; t < length; ++t) {
      std::iota(ids.begin(), ids.end(), 0);
      std::shuffle(ids.begin(), ids.end(), rng);
      for (std::size_t j = 0; j < allowed_per_position; ++j) task.allowed[p][t][ids[j]] = 1;
    }
  }
  return task;
}

double ToyTask::reward(const std::vector<std::size_t>& tokens) const {
  for (const auto& pat : allowed) {
    bool ok = tokens.size() == length;
    for (std::size_t t = 0; ok && t < length; ++t) ok = pat[t][tokens[t]] != 0;
    if (ok) return 1.0;
  }
  return 0.0;
}

void ToyGrpoConfig::validate() const {
  if (group_size < 2) throw ConfigError("grpo.group_size must be >= 2");
  if (groups_per_step == 0 || steps == 0 || embed == 0 || hidden == 0) throw ConfigError("grpo: sizes must be positive");
  if (!(lr > 0.0)) throw ConfigError("grpo.lr must be positive");
  if (!(success_prob > 0.0 && success_prob <= 1.0)) throw ConfigError("grpo.success_prob must lie in (0, 1]");
  era.validate();
}

namespace {

std::uint64_t fnv1a(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

run::RunRecord train_toy_grpo(const ToyGrpoConfig& cfg, std::uint64_t seed, const std::filesystem::path& checkpoint) {
  cfg.validate();
  const ToyTask task = ToyTask::make(cfg.vocab, cfg.length, cfg.patterns, cfg.allowed_per_position, cfg.task_seed);
  Rng rng(seed);
  std::normal_distribution<double> normal;
  std::bernoulli_distribution success(cfg.success_prob);
  ad::Parameter pos("grpo.pos", ad::Tensor(cfg.length, cfg.embed));
  for (double& v : pos.value.values()) v = normal(rng);
  nn::Mlp net("grpo.mlp", {{cfg.embed, cfg.hidden, cfg.vocab}, nn::Activation::tanh, false}, rng);
  auto params = net.parameters();
  params.push_back(&pos);
  nn::Adam opt(params, {cfg.lr});

  // With ERA disabled every token takes the identity branch.
  llm::EraLlmConfig era = cfg.era;
  if (!cfg.use_era) {
    era.omega_low = -std::numeric_limits<double>::infinity();
    era.omega_high.reset();
  }

  run::RunRecord rec;
  rec.kind = cfg.use_era ? "grpo-era-toy" : "grpo-toy";
  rec.seed = seed;
  rec.config = {{"vocab", cfg.vocab},
                {"length", cfg.length},
                {"patterns", cfg.patterns},
                {"allowed_per_position", cfg.allowed_per_position},
                {"group_size", cfg.group_size},
                {"groups_per_step", cfg.groups_per_step},
                {"steps", cfg.steps},
                {"embed", cfg.embed},
                {"hidden", cfg.hidden},
                {"lr", cfg.lr},
                {"success_prob", cfg.success_prob},
                {"use_era", cfg.use_era},
                {"omega_low", cfg.era.omega_low},
                {"omega_high", cfg.era.omega_high ? nlohmann::json(*cfg.era.omega_high) : nlohmann::json("inf")},
                {"k", cfg.era.k},
                {"scale_advantages", cfg.era.scale_advantages},
                {"task_seed", cfg.task_seed}};

  const std::size_t n_resp = cfg.group_size * cfg.groups_per_step;
  const std::size_t n_tok = n_resp * cfg.length;
  std::uint64_t token_hash = 0xcbf29ce484222325ULL;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    ad::Tape tape;
    ad::Var logits_pos = net.forward(tape, ad::tanh(tape.parameter(pos)));
    const ad::Tensor& lp = logits_pos.value();

    // Sampling uses the untransformed policy.
    std::vector<std::vector<double>> probs(cfg.length);
    for (std::size_t t = 0; t < cfg.length; ++t) probs[t] = dist::softmax(lp.row_span(t));
    std::vector<std::size_t> tokens(n_tok), rows(n_tok);
    std::vector<double> rewards(n_resp);
    for (std::size_t r = 0; r < n_resp; ++r) {
      std::vector<std::size_t> seq(cfg.length);
      for (std::size_t t = 0; t < cfg.length; ++t) {
        std::discrete_distribution<std::size_t> pick(probs[t].begin(), probs[t].end());
        seq[t] = pick(rng);
        tokens[r * cfg.length + t] = seq[t];
        rows[r * cfg.length + t] = t;
        token_hash = fnv1a(token_hash, seq[t]);
      }
      rewards[r] = task.reward(seq);
      if (cfg.success_prob < 1.0 && rewards[r] > 0.0) rewards[r] = success(rng) ? 1.0 : 0.0;
    }
    std::vector<double> adv(n_tok);
    for (std::size_t g = 0; g < cfg.groups_per_step; ++g) {
      const auto a = llm::grpo_advantages(std::span<const double>(rewards).subspan(g * cfg.group_size, cfg.group_size));
      for (std::size_t j = 0; j < cfg.group_size; ++j) {
        const std::size_t r = g * cfg.group_size + j;
        std::fill_n(adv.begin() + static_cast<std::ptrdiff_t>(r * cfg.length), cfg.length, a[j]);
      }
    }
    std::vector<double> pos_entropy(cfg.length);
    for (std::size_t t = 0; t < cfg.length; ++t) pos_entropy[t] = dist::categorical_entropy(lp.row_span(t));
    std::vector<double> ents(n_tok);
    for (std::size_t i = 0; i < n_tok; ++i) ents[i] = pos_entropy[rows[i]];
    const std::vector<std::uint8_t> mask(n_tok, 1);
    const llm::TokenPlan plan = llm::plan_tokens(n_resp, cfg.length, ents, adv, mask, era);

    opt.zero_grad();
    ad::Var per_token = ad::gather_rows(logits_pos, rows);
    ad::Var objective = llm::era_objective(per_token, tokens, plan, era);
    tape.backward(ad::neg(objective));
    opt.step();

    std::size_t positive = 0, sharpen = 0, flatten = 0, below = 0, above = 0;
    for (std::size_t r = 0; r < n_resp; ++r) {
      const double h = plan.h_resp[r];
      if (h < cfg.era.omega_low) ++below;
      if (cfg.era.omega_high && h > *cfg.era.omega_high) ++above;
      if (adv[r * cfg.length] > 0.0) {
        ++positive;
        const auto b = plan.branch[r * cfg.length];
        if (b == llm::Branch::sharpen) ++sharpen;
        if (b == llm::Branch::flatten) ++flatten;
      }
    }
    const double nr = static_cast<double>(n_resp);
    rec.points.push_back(
        {{"step", step},
         {"mean_reward", std::accumulate(rewards.begin(), rewards.end(), 0.0) / nr},
         {"h_resp", std::accumulate(plan.h_resp.begin(), plan.h_resp.end(), 0.0) / nr},
         {"token_entropy", std::accumulate(pos_entropy.begin(), pos_entropy.end(), 0.0) / static_cast<double>(cfg.length)},
         {"objective", objective.item()},
         {"frac_sharpen", positive ? static_cast<double>(sharpen) / static_cast<double>(positive) : 0.0},
         {"frac_flatten", positive ? static_cast<double>(flatten) / static_cast<double>(positive) : 0.0},
         {"frac_below_low", static_cast<double>(below) / nr},
         {"frac_above_high", static_cast<double>(above) / nr},
         {"token_hash", std::to_string(token_hash)}});
  }
  if (!checkpoint.empty()) {
    auto saved = std::as_const(net).parameters();
    saved.push_back(&pos);
    nn::save_checkpoint(checkpoint, saved);
  }
  return rec;
}

}  // namespace era::grpo
