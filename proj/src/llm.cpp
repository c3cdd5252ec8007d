#include "era/llm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "era/distributions.hpp"
#include "era/error.hpp"

namespace era::llm {

void EraLlmConfig::validate() const {
  if (!(k > 1.0)) throw ConfigError("EraLlmConfig: k must be > 1");
  if (!(top_frac > 0.0 && top_frac <= 1.0)) throw ConfigError("EraLlmConfig: top_frac must lie in (0, 1]");
  if (omega_high && !(omega_low < *omega_high)) throw ConfigError("EraLlmConfig: need omega_low < omega_high");
  if (top_k_logits && *top_k_logits == 0) throw ConfigError("EraLlmConfig: top_k_logits must be positive");
}

const char* to_string(Branch b) {
  switch (b) {
    case Branch::sharpen: return "sharpen";
    case Branch::identity: return "identity";
    case Branch::flatten: return "flatten";
  }
  return "?";
}

void ResponseBatch::validate() const {
  const std::size_t n = batch * time;
  if (logits.size() != n * vocab || tokens.size() != n || advantages.size() != n || mask.size() != n) {
    throw ShapeError("ResponseBatch: field sizes do not match [batch, time, vocab]");
  }
  for (std::size_t i = 0; i < n; ++i)
    if (mask[i] && tokens[i] >= vocab) throw ShapeError("ResponseBatch: sampled token id >= vocab");
}

std::vector<double> grpo_advantages(std::span<const double> rewards, double eps) {
  if (rewards.size() < 2) throw std::invalid_argument("grpo_advantages: need at least 2 samples per group");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> a(rewards.size(), 0.0);
  if (sd < 1e-8) return a;
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = (rewards[i] - mean) / (sd + eps);
  return a;
}

double h_resp(std::span<const double> token_entropies, std::span<const std::uint8_t> mask, double top_frac) {
  if (token_entropies.size() != mask.size()) throw ShapeError("h_resp: entropies and mask differ in length");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) idx.push_back(i);
  if (idx.empty()) throw std::invalid_argument("h_resp: every token is masked");
  const auto m = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(top_frac * static_cast<double>(idx.size()))));
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return token_entropies[a] > token_entropies[b]; });
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) s += token_entropies[idx[i]];
  return s / static_cast<double>(m);
}

Branch select_branch(double h, double advantage, const EraLlmConfig& cfg) {
  if (!(advantage > 0.0)) return Branch::identity;
  if (h < cfg.omega_low) return Branch::sharpen;
  if (cfg.omega_high && h > *cfg.omega_high) return Branch::flatten;
  return Branch::identity;
}

namespace {

double logit_factor(Branch b, double k) {
  switch (b) {
    case Branch::sharpen: return k;
    case Branch::flatten: return 1.0 / k;
    case Branch::identity: break;
  }
  return 1.0;
}

double advantage_factor(Branch b, const EraLlmConfig& cfg) {
  if (!cfg.scale_advantages) return 1.0;
  return 1.0 / logit_factor(b, cfg.k);
}

}  // namespace

std::vector<double> era_transform(std::span<const double> logits, double h, double advantage, const EraLlmConfig& cfg) {
  const Branch b = select_branch(h, advantage, cfg);
  std::vector<double> out(logits.begin(), logits.end());
  if (b == Branch::identity) return out;
  const double f = logit_factor(b, cfg.k);
  for (double& v : out) v *= f;
  return out;
}

double scale_advantages(double advantage, double h, const EraLlmConfig& cfg) {
  const Branch b = select_branch(h, advantage, cfg);
  if (b == Branch::identity || !cfg.scale_advantages) return advantage;
  return b == Branch::sharpen ? advantage / cfg.k : advantage * cfg.k;
}

std::vector<double> token_entropies(std::span<const double> logits, std::size_t vocab) {
  if (vocab == 0 || logits.size() % vocab != 0) throw ShapeError("token_entropies: logits not a multiple of vocab");
  std::vector<double> h(logits.size() / vocab);
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = dist::categorical_entropy(logits.subspan(i * vocab, vocab));
  return h;
}

TokenPlan plan_tokens(std::size_t batch, std::size_t time, std::span<const double> ents,
                      std::span<const double> advantages, std::span<const std::uint8_t> mask,
                      const EraLlmConfig& cfg) {
  cfg.validate();
  const std::size_t n = batch * time;
  if (ents.size() != n || advantages.size() != n || mask.size() != n) throw ShapeError("plan_tokens: size mismatch");
  TokenPlan plan;
  plan.logit_scale.assign(n, 1.0);
  plan.advantage.assign(n, 0.0);
  plan.branch.assign(n, Branch::identity);
  plan.h_resp.assign(batch, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto m = mask.subspan(b * time, time);
    if (std::none_of(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; })) continue;
    const double h = h_resp(ents.subspan(b * time, time), m, cfg.top_frac);
    plan.h_resp[b] = h;
    for (std::size_t t = 0; t < time; ++t) {
      const std::size_t i = b * time + t;
      if (!mask[i]) continue;
      ++plan.unmasked;
      const Branch br = select_branch(h, advantages[i], cfg);
      plan.branch[i] = br;
      plan.logit_scale[i] = logit_factor(br, cfg.k);
      plan.advantage[i] = br == Branch::identity ? advantages[i] : advantages[i] * advantage_factor(br, cfg);
    }
  }
  return plan;
}

TokenPlan plan_tokens(const ResponseBatch& batch, const EraLlmConfig& cfg) {
  batch.validate();
  const auto ents = token_entropies(batch.logits, batch.vocab);
  return plan_tokens(batch.batch, batch.time, ents, batch.advantages, batch.mask, cfg);
}

ad::Var era_objective(ad::Var logits, std::span<const std::size_t> tokens, const TokenPlan& plan,
                      const EraLlmConfig& cfg) {
  const std::size_t n = logits.rows();
  const std::size_t vocab = logits.cols();
  if (tokens.size() != n || plan.logit_scale.size() != n || plan.advantage.size() != n) {
    throw ShapeError("era_objective: tokens / plan do not match logits rows");
  }
  if (plan.unmasked == 0) throw std::invalid_argument("era_objective: no unmasked tokens");
  ad::Tape& tape = *logits.tape();
  ad::Var z = logits;
  if (cfg.top_k_logits && *cfg.top_k_logits < vocab) {
    const std::size_t keep = *cfg.top_k_logits;
    const ad::Tensor& v = logits.value();
    ad::Tensor filt(n, vocab, -std::numeric_limits<double>::infinity());
    std::vector<std::size_t> order(vocab);
    for (std::size_t r = 0; r < n; ++r) {
      std::iota(order.begin(), order.end(), 0);
      std::partial_sort(order.begin(), order.begin() + keep, order.end(),
                        [&](std::size_t a, std::size_t b) { return v(r, a) > v(r, b); });
      for (std::size_t j = 0; j < keep; ++j) filt(r, order[j]) = 0.0;
      filt(r, tokens[r]) = 0.0;
    }
    z = ad::add(z, tape.constant(std::move(filt)));
  }
  const bool any_scaled = std::any_of(plan.logit_scale.begin(), plan.logit_scale.end(), [](double s) { return s != 1.0; });
  if (any_scaled) z = ad::mul_col(z, tape.constant(ad::Tensor::column(plan.logit_scale)));
  ad::Var logp = ad::gather_cols(ad::log_softmax_rows(z), tokens);
  ad::Var adv = tape.constant(ad::Tensor::column(plan.advantage));
  return ad::scale(ad::dot(logp, adv), 1.0 / static_cast<double>(plan.unmasked));
}

ObjectiveResult era_objective(const ResponseBatch& batch, const EraLlmConfig& cfg) {
  ObjectiveResult res;
  res.plan = plan_tokens(batch, cfg);
  ad::Tape tape;
  ad::Var z = tape.variable(ad::Tensor(batch.batch * batch.time, batch.vocab, batch.logits));
  // Masked rows may carry arbitrary token ids; point them at a valid column.
  std::vector<std::size_t> tokens = batch.tokens;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (!batch.mask[i]) tokens[i] = 0;
  ad::Var j = era_objective(z, tokens, res.plan, cfg);
  tape.backward(j);
  res.value = j.item();
  const auto g = z.grad().values();
  res.grad_logits.assign(g.begin(), g.end());
  return res;
}

DecompositionResult decomposition_check(std::span<const double> z, std::span<const double> advantages, double k,
                                        Branch branch) {
  if (z.size() != advantages.size() || z.empty()) throw ShapeError("decomposition_check: size mismatch");
  if (!(k > 1.0)) throw std::invalid_argument("decomposition_check: k must be > 1");
  const auto pi = dist::softmax(z);
  double centre = 0.0, scale = 0.0;
  for (std::size_t a = 0; a < pi.size(); ++a) {
    centre += pi[a] * advantages[a];
    scale += std::abs(pi[a] * advantages[a]);
  }
  if (std::abs(centre) > 1e-10 * std::max(1.0, scale)) {
    throw std::invalid_argument("decomposition_check: advantages are not centred under pi");
  }
  const double f = logit_factor(branch, k);
  const std::size_t v = z.size();

  // lhs: rows are actions, each row holds the logits it is evaluated under.
  ad::Tape tape;
  ad::Var zv = tape.variable(ad::Tensor::row(z));
  std::vector<std::size_t> rows(v, 0);
  ad::Var zr = ad::gather_rows(zv, rows);
  std::vector<double> scale_col(v, 1.0), weight(v, 0.0);
  for (std::size_t a = 0; a < v; ++a) {
    const bool pos = advantages[a] > 0.0;
    scale_col[a] = pos ? f : 1.0;
    weight[a] = pi[a] * (pos ? advantages[a] / f : advantages[a]);
  }
  ad::Var scaled = ad::mul_col(zr, tape.constant(ad::Tensor::column(scale_col)));
  std::vector<std::size_t> diag(v);
  std::iota(diag.begin(), diag.end(), 0);
  ad::Var logp = ad::gather_cols(ad::log_softmax_rows(scaled), diag);
  ad::Var obj = ad::dot(logp, tape.constant(ad::Tensor::column(weight)));
  tape.backward(obj);

  DecompositionResult res;
  const auto g = zv.grad().values();
  res.lhs.assign(g.begin(), g.end());

  std::vector<double> zp(z.begin(), z.end());
  for (double& x : zp) x *= f;
  const auto pi_p = dist::softmax(zp);
  double c = 0.0;
  for (std::size_t a = 0; a < v; ++a)
    if (advantages[a] > 0.0) c += pi[a] * advantages[a];
  res.rhs.resize(v);
  for (std::size_t a = 0; a < v; ++a) res.rhs[a] = pi[a] * advantages[a] - c * (pi_p[a] - pi[a]);
  return res;
}

EntropyFloorStat entropy_floor_stat(std::span<const double> hist, const EraLlmConfig& cfg) {
  if (hist.empty()) throw std::invalid_argument("entropy_floor_stat: empty history");
  EntropyFloorStat s;
  s.min = *std::min_element(hist.begin(), hist.end());
  s.mean = std::accumulate(hist.begin(), hist.end(), 0.0) / static_cast<double>(hist.size());
  std::size_t below = 0, above = 0;
  for (double h : hist) {
    if (h < cfg.omega_low) ++below;
    if (cfg.omega_high && h > *cfg.omega_high) ++above;
  }
  s.frac_below_low = static_cast<double>(below) / static_cast<double>(hist.size());
  s.frac_above_high = static_cast<double>(above) / static_cast<double>(hist.size());
  return s;
}

EraLlmConfig config_at(const EraLlmConfig& base, std::span<const ScheduleStage> schedule, std::size_t step) {
  EraLlmConfig cfg = base;
  const ScheduleStage* active = nullptr;
  for (const auto& s : schedule)
    if (s.begin_step <= step && (!active || s.begin_step >= active->begin_step)) active = &s;
  if (active) {
    cfg.omega_low = active->omega_low;
    cfg.omega_high = active->omega_high;
    cfg.k = active->k;
  }
  return cfg;
}

}  // namespace era::llm
