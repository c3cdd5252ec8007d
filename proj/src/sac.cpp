#include "era/sac.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

#include "era/error.hpp"
#include "era/numerics.hpp"

namespace era::sac {

Variant parse_variant(const std::string& name) {
  if (name == "sac" || name == "baseline") return Variant::baseline;
  if (name == "sac-era" || name == "era") return Variant::era;
  throw ConfigError("unknown SAC variant '" + name + "'");
}

const char* to_string(Variant v) { return v == Variant::era ? "sac-era" : "sac"; }

SacConfig SacConfig::for_env(env::EnvKind kind) {
  SacConfig c;
  if (kind == env::EnvKind::pointmass) c.gamma = 0.95;
  return c;
}

void SacConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("sac.gamma must lie in (0, 1)");
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("sac.tau must lie in (0, 1)");
  if (!(alpha >= 0.0)) throw ConfigError("sac.alpha must be >= 0");
  if (batch_size == 0 || grad_steps == 0 || hidden == 0) throw ConfigError("sac: batch_size, grad_steps, hidden must be positive");
  if (!(lr > 0.0)) throw ConfigError("sac.lr must be positive");
  if (buffer_capacity < batch_size) throw ConfigError("sac.buffer_capacity must be >= batch_size");
  if (eval_every == 0 || eval_episodes == 0) throw ConfigError("sac: eval_every and eval_episodes must be positive");
  if (!(log_sigma_min < log_sigma_max)) throw ConfigError("sac: need log_sigma_min < log_sigma_max");
}

cont::EraContinuousConfig SacConfig::era_config(std::size_t act_dim) const {
  cont::EraContinuousConfig c;
  c.dim = act_dim;
  c.target_entropy = target_entropy ? *target_entropy : -0.5 * static_cast<double>(act_dim);
  c.learned_delta = learned_delta;
  c.delta = delta;
  c.delta_lr = delta_lr;
  c.sigma_min = std::exp(log_sigma_min);
  c.sigma_max = std::exp(log_sigma_max);
  c.bounding = cont::Bounding::truncated;
  c.validate();
  return c;
}

Batch make_batch(const env::ReplayBuffer& buffer, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: no indices");
  const auto& first = buffer.at(indices[0]);
  const std::size_t n = indices.size(), ds = first.state.size(), da = first.action.size();
  Batch b{ad::Tensor(n, ds), ad::Tensor(n, da), ad::Tensor(n, 1), ad::Tensor(n, ds), ad::Tensor(n, 1)};
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = buffer.at(indices[i]);
    std::copy(t.state.begin(), t.state.end(), b.state.row_span(i).begin());
    std::copy(t.action.begin(), t.action.end(), b.action.row_span(i).begin());
    std::copy(t.next_state.begin(), t.next_state.end(), b.next_state.row_span(i).begin());
    b.reward(i, 0) = t.reward;
    b.not_done(i, 0) = t.done ? 0.0 : 1.0;
  }
  return b;
}

ad::Tensor compute_targets(const ad::Tensor& reward, const ad::Tensor& not_done, const ad::Tensor& min_q,
                           const ad::Tensor* logp, double gamma, double alpha, Variant variant) {
  if (!reward.same_shape(not_done) || !reward.same_shape(min_q)) throw ShapeError("compute_targets: shape mismatch");
  if (variant == Variant::baseline && (logp == nullptr || !logp->same_shape(min_q))) {
    throw ShapeError("compute_targets: baseline needs a log-prob column");
  }
  ad::Tensor y(reward.rows(), 1);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double soft = variant == Variant::baseline ? min_q[i] - alpha * (*logp)[i] : min_q[i];
    y[i] = reward[i] + gamma * not_done[i] * soft;
  }
  return y;
}

namespace {

nn::MlpSpec mlp_spec(std::size_t in, std::size_t hidden, std::size_t out, bool layer_norm) {
  return {{in, hidden, hidden, out}, nn::Activation::relu, layer_norm};
}

std::vector<ad::Parameter*> concat(std::vector<ad::Parameter*> a, const std::vector<ad::Parameter*>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

ad::Tensor uniforms(std::size_t rows, std::size_t cols, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ad::Tensor t(rows, cols);
  for (double& v : t.values()) v = u(rng);
  return t;
}

}  // namespace

SacAgent::SacAgent(std::size_t obs_dim, std::size_t act_dim, SacConfig cfg, Variant variant, std::uint64_t seed)
    : cfg_(std::move(cfg)), variant_(variant), obs_dim_(obs_dim), act_dim_(act_dim) {
  cfg_.validate();
  era_ = cfg_.era_config(act_dim);
  delta_.delta_hat = era_.learned_delta ? 0.0 : era_.delta;
  delta_.learning_rate = era_.delta_lr;
  delta_.max_delta = era_.max_entropy() - era_.target_entropy;
  Rng rng(seed);
  actor_ = nn::Mlp("actor", mlp_spec(obs_dim, cfg_.hidden, 2 * act_dim, cfg_.layer_norm), rng);
  q1_ = nn::Mlp("q1", mlp_spec(obs_dim + act_dim, cfg_.hidden, 1, cfg_.layer_norm), rng);
  q2_ = nn::Mlp("q2", mlp_spec(obs_dim + act_dim, cfg_.hidden, 1, cfg_.layer_norm), rng);
  q1_target_ = q1_;
  q2_target_ = q2_;
  nn::AdamConfig ac;
  ac.lr = cfg_.lr;
  actor_opt_ = nn::Adam(actor_.parameters(), ac);
  critic_opt_ = nn::Adam(concat(q1_.parameters(), q2_.parameters()), ac);
}

double SacAgent::current_delta() const { return delta_.delta_hat; }

double SacAgent::entropy_floor() const { return era_.target_entropy + delta_.delta_hat; }

SacAgent::PolicyHead SacAgent::policy(ad::Tape& tape, ad::Var obs, bool trainable) {
  ad::Var out = actor_.forward(tape, obs, trainable);
  ad::Var mu = ad::tanh(ad::slice_cols(out, 0, act_dim_));
  ad::Var pre = ad::slice_cols(out, act_dim_, act_dim_);
  ad::Var log_sigma;
  if (variant_ == Variant::era) {
    log_sigma = cont::era_log_sigma(pre, era_, delta_.delta_hat);
  } else {
    const double lo = cfg_.log_sigma_min, hi = cfg_.log_sigma_max;
    log_sigma = ad::add_scalar(ad::scale(ad::add_scalar(ad::tanh(pre), 1.0), 0.5 * (hi - lo)), lo);
  }
  return {mu, log_sigma};
}

ad::Var SacAgent::log_prob(ad::Var mu, ad::Var log_sigma, ad::Var action) {
  ++logprob_evals_;
  return cont::truncated_log_prob_rows(mu, log_sigma, action);
}

std::vector<dist::GaussianPolicyParams> SacAgent::policy_params(const ad::Tensor& obs) {
  ad::Tape tape;
  auto head = policy(tape, tape.constant(obs), false);
  const ad::Tensor& mu = head.mu.value();
  const ad::Tensor& ls = head.log_sigma.value();
  std::vector<dist::GaussianPolicyParams> out;
  out.reserve(obs.rows());
  for (std::size_t r = 0; r < obs.rows(); ++r) {
    std::vector<double> m(mu.row_span(r).begin(), mu.row_span(r).end());
    std::vector<double> s(act_dim_);
    for (std::size_t i = 0; i < act_dim_; ++i) s[i] = std::clamp(std::exp(ls(r, i)), era_.sigma_min, era_.sigma_max);
    out.emplace_back(std::move(m), std::move(s), era_.sigma_min, era_.sigma_max);
  }
  return out;
}

std::vector<double> SacAgent::act(std::span<const double> obs, bool deterministic, Rng& rng) {
  const auto params = policy_params(ad::Tensor::row(obs));
  if (deterministic) {
    std::vector<double> a = params[0].mu;
    for (double& v : a) v = std::clamp(v, -1.0, 1.0);
    return a;
  }
  return dist::truncated_sample(params[0], rng);
}

SacAgent::NextValue SacAgent::next_value(const Batch& batch, const ad::Tensor& eps) {
  ad::Tape tape;
  auto head = policy(tape, tape.constant(batch.next_state), false);
  ad::Var a2 = ad::truncated_normal_sample(head.mu, ad::exp(head.log_sigma), eps);
  ad::Var sa2 = ad::concat_cols(tape.constant(batch.next_state), a2);
  ad::Var q = ad::min(q1_target_.forward(tape, sa2, false), q2_target_.forward(tape, sa2, false));
  NextValue nv{q.value(), std::nullopt};
  if (variant_ == Variant::baseline) nv.logp = log_prob(head.mu, head.log_sigma, a2).value();
  return nv;
}

ad::Tensor SacAgent::q_target(const Batch& batch, const ad::Tensor& eps) {
  const NextValue nv = next_value(batch, eps);
  return compute_targets(batch.reward, batch.not_done, nv.min_q, nv.logp ? &*nv.logp : nullptr, cfg_.gamma,
                         cfg_.alpha, variant_);
}

UpdateMetrics SacAgent::update(const Batch& batch, Rng& rng) {
  const std::size_t n = batch.state.rows();
  UpdateMetrics m;
  const ad::Tensor y = q_target(batch, uniforms(n, act_dim_, rng));

  {
    critic_opt_.zero_grad();
    ad::Tensor x(n, obs_dim_ + act_dim_);
    for (std::size_t r = 0; r < n; ++r) {
      std::copy(batch.state.row_span(r).begin(), batch.state.row_span(r).end(), x.row_span(r).begin());
      std::copy(batch.action.row_span(r).begin(), batch.action.row_span(r).end(), x.row_span(r).begin() + obs_dim_);
    }
    ad::Tape tape;
    ad::Var sa = tape.constant(std::move(x));
    ad::Var target = tape.constant(y);
    ad::Var loss = ad::add(ad::mean(ad::square(ad::sub(q1_.forward(tape, sa), target))),
                           ad::mean(ad::square(ad::sub(q2_.forward(tape, sa), target))));
    tape.backward(loss);
    critic_opt_.step();
    m.critic_loss = loss.item();
  }

  {
    actor_opt_.zero_grad();
    ad::Tape tape;
    ad::Var s = tape.constant(batch.state);
    auto head = policy(tape, s, true);
    ad::Var a = ad::truncated_normal_sample(head.mu, ad::exp(head.log_sigma), uniforms(n, act_dim_, rng));
    ad::Var sa = ad::concat_cols(s, a);
    ad::Var q = ad::min(q1_.forward(tape, sa, false), q2_.forward(tape, sa, false));
    ad::Var loss = ad::neg(ad::mean(q));
    if (variant_ == Variant::baseline) loss = ad::add(loss, ad::scale(ad::mean(log_prob(head.mu, head.log_sigma, a)), cfg_.alpha));
    tape.backward(loss);
    actor_opt_.step();
    m.actor_loss = loss.item();

    const ad::Tensor& ls = head.log_sigma.value();
    const ad::Tensor& mu = head.mu.value();
    std::vector<double> trunc;
    m.min_gaussian_entropy = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < n; ++r) {
      double h = 0.0;
      for (std::size_t i = 0; i < act_dim_; ++i) h += ls(r, i) + numerics::kLogSqrt2PiE;
      m.mean_gaussian_entropy += h / static_cast<double>(n);
      m.min_gaussian_entropy = std::min(m.min_gaussian_entropy, h);
      if (variant_ == Variant::era && era_.learned_delta) {
        std::vector<double> mm(mu.row_span(r).begin(), mu.row_span(r).end());
        std::vector<double> ss(act_dim_);
        for (std::size_t i = 0; i < act_dim_; ++i) ss[i] = std::clamp(std::exp(ls(r, i)), era_.sigma_min, era_.sigma_max);
        trunc.push_back(dist::truncated_entropy({std::move(mm), std::move(ss), era_.sigma_min, era_.sigma_max}));
      }
    }
    if (!trunc.empty()) delta_ = cont::update_delta(delta_, trunc, era_.target_entropy);
  }

  nn::polyak_update(std::as_const(q1_).parameters(), q1_target_.parameters(), cfg_.tau);
  nn::polyak_update(std::as_const(q2_).parameters(), q2_target_.parameters(), cfg_.tau);
  m.delta = delta_.delta_hat;
  return m;
}

namespace {

struct EvalStats {
  double mean_return = 0.0;
  double std_return = 0.0;
  double mean_gaussian_entropy = 0.0;
  double min_gaussian_entropy = std::numeric_limits<double>::infinity();
  double mean_truncated_entropy = 0.0;
  double frac_sigma_at_min = 0.0;
  std::size_t states = 0;
};

EvalStats evaluate(SacAgent& agent, env::EnvKind kind, std::uint64_t seed, std::size_t episodes) {
  EvalStats st;
  env::ToyEnv env(kind, seed);
  Rng unused(0);
  std::vector<double> returns;
  std::size_t collapsed = 0;
  const double smin = agent.era_config().sigma_min;
  for (std::size_t e = 0; e < episodes; ++e) {
    auto obs = env.reset();
    double ret = 0.0;
    for (;;) {
      const auto params = agent.policy_params(ad::Tensor::row(obs))[0];
      const double hg = dist::gaussian_entropy(params);
      st.mean_gaussian_entropy += hg;
      st.min_gaussian_entropy = std::min(st.min_gaussian_entropy, hg);
      st.mean_truncated_entropy += dist::truncated_entropy(params);
      if (std::all_of(params.sigma.begin(), params.sigma.end(), [&](double s) { return s <= 2.0 * smin; })) ++collapsed;
      ++st.states;
      std::vector<double> a = params.mu;
      for (double& v : a) v = std::clamp(v, -1.0, 1.0);
      const auto r = env.step(a);
      ret += r.reward;
      obs = r.obs;
      if (r.done) break;
    }
    returns.push_back(ret);
  }
  for (double r : returns) st.mean_return += r / static_cast<double>(returns.size());
  for (double r : returns) st.std_return += (r - st.mean_return) * (r - st.mean_return);
  st.std_return = std::sqrt(st.std_return / static_cast<double>(returns.size()));
  st.mean_gaussian_entropy /= static_cast<double>(st.states);
  st.mean_truncated_entropy /= static_cast<double>(st.states);
  st.frac_sigma_at_min = static_cast<double>(collapsed) / static_cast<double>(st.states);
  return st;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::uint64_t out[1];
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  out[0] = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return out[0];
}

}  // namespace

nlohmann::json to_json(const SacConfig& c) {
  nlohmann::json j = {{"gamma", c.gamma},
                      {"tau", c.tau},
                      {"alpha", c.alpha},
                      {"batch_size", c.batch_size},
                      {"grad_steps", c.grad_steps},
                      {"warmup_steps", c.warmup_steps},
                      {"hidden", c.hidden},
                      {"layer_norm", c.layer_norm},
                      {"lr", c.lr},
                      {"buffer_capacity", c.buffer_capacity},
                      {"eval_every", c.eval_every},
                      {"eval_episodes", c.eval_episodes},
                      {"log_sigma_min", c.log_sigma_min},
                      {"log_sigma_max", c.log_sigma_max},
                      {"learned_delta", c.learned_delta},
                      {"delta", c.delta},
                      {"delta_lr", c.delta_lr}};
  if (c.target_entropy) j["target_entropy"] = *c.target_entropy;
  return j;
}

void SacAgent::save(const std::filesystem::path& path) const {
  std::vector<ad::Parameter> owned;  // renamed target copies and delta_hat
  for (const nn::Mlp* net : {&q1_target_, &q2_target_})
    for (const ad::Parameter* p : net->parameters()) owned.emplace_back("target." + p->name, p->value);
  owned.emplace_back("era.delta_hat", ad::Tensor(1, 1, delta_.delta_hat));
  std::vector<const ad::Parameter*> params;
  for (const nn::Mlp* net : {&actor_, &q1_, &q2_})
    for (const ad::Parameter* p : net->parameters()) params.push_back(p);
  for (const ad::Parameter& p : owned) params.push_back(&p);
  nn::save_checkpoint(path, params);
}

void SacAgent::load(const std::filesystem::path& path) {
  std::vector<ad::Parameter> owned;
  for (nn::Mlp* net : {&q1_target_, &q2_target_})
    for (const ad::Parameter* p : net->parameters()) owned.emplace_back("target." + p->name, p->value);
  owned.emplace_back("era.delta_hat", ad::Tensor(1, 1));
  auto params = concat(concat(actor_.parameters(), q1_.parameters()), q2_.parameters());
  for (ad::Parameter& p : owned) params.push_back(&p);
  nn::load_checkpoint(path, params);
  std::size_t i = 0;
  for (nn::Mlp* net : {&q1_target_, &q2_target_})
    for (ad::Parameter* p : net->parameters()) p->value = owned[i++].value;
  delta_.delta_hat = owned.back().value[0];
}

run::RunRecord train_sac(env::EnvKind kind, const SacConfig& cfg, Variant variant, std::uint64_t seed,
                         std::size_t total_steps, const std::filesystem::path& checkpoint) {
  env::ToyEnv env(kind, derive_seed(seed, 1));
  SacAgent agent(env.obs_dim(), env.act_dim(), cfg, variant, derive_seed(seed, 2));
  Rng rng(derive_seed(seed, 3));
  env::ReplayBuffer buffer(cfg.buffer_capacity);
  std::uniform_real_distribution<double> random_action(-1.0, 1.0);

  run::RunRecord rec;
  rec.kind = to_string(variant);
  rec.seed = seed;
  rec.config = to_json(cfg);
  rec.config["env"] = env::to_string(kind);
  rec.config["steps"] = total_steps;
  rec.config["target_entropy"] = agent.era_config().target_entropy;

  UpdateMetrics last;
  double min_update_entropy = std::numeric_limits<double>::infinity();
  auto obs = env.reset();
  for (std::size_t step = 1; step <= total_steps; ++step) {
    std::vector<double> a(env.act_dim());
    if (step <= cfg.warmup_steps) {
      for (double& v : a) v = random_action(rng);
    } else {
      a = agent.act(obs, false, rng);
    }
    auto r = env.step(a);
    buffer.add({obs, a, r.reward, r.obs, r.terminal});
    obs = r.done ? env.reset() : r.obs;

    if (step > cfg.warmup_steps && buffer.size() >= cfg.batch_size) {
      for (std::size_t g = 0; g < cfg.grad_steps; ++g) {
        const auto idx = buffer.sample_indices(cfg.batch_size, rng);
        last = agent.update(make_batch(buffer, idx), rng);
        min_update_entropy = std::min(min_update_entropy, last.min_gaussian_entropy);
      }
    }

    if (step % cfg.eval_every == 0 || step == total_steps) {
      const auto ev = evaluate(agent, kind, derive_seed(seed, 1000 + step), cfg.eval_episodes);
      const double floor = agent.entropy_floor();
      nlohmann::json p = {{"step", step},
                          {"return", ev.mean_return},
                          {"return_std", ev.std_return},
                          {"gaussian_entropy", ev.mean_gaussian_entropy},
                          {"min_gaussian_entropy", ev.min_gaussian_entropy},
                          {"truncated_entropy", ev.mean_truncated_entropy},
                          {"frac_sigma_at_min", ev.frac_sigma_at_min},
                          {"entropy_floor", floor},
                          {"min_entropy_slack", ev.min_gaussian_entropy - floor},
                          {"critic_loss", last.critic_loss},
                          {"actor_loss", last.actor_loss},
                          {"delta", agent.current_delta()},
                          {"logprob_evaluations", agent.logprob_evaluations()}};
      if (std::isfinite(min_update_entropy)) p["min_update_entropy_slack"] = min_update_entropy - floor;
      rec.points.push_back(std::move(p));
    }
  }
  if (!checkpoint.empty()) agent.save(checkpoint);
  return rec;
}

}  // namespace era::sac
