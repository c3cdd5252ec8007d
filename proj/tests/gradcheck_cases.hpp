#pragma once
// Finite-difference checks shared by the unit tests and the acceptance suite:
// every tape op plus the three end-to-end compositions.
#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "era/autodiff.hpp"
#include "era/continuous.hpp"
#include "era/discrete.hpp"
#include "era/llm.hpp"
#include "era/nn.hpp"

namespace era::testing {

struct GradCase {
  std::string name;
  ad::GradCheckResult result;
  bool composition = false;
};

inline ad::Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double lo = -1.5, double hi = 1.5) {
  std::uniform_real_distribution<double> u(lo, hi);
  ad::Tensor t(r, c);
  for (double& v : t.values()) v = u(rng);
  return t;
}

// Weighted sum so every output entry gets a distinct upstream gradient.
inline ad::Var reduce(ad::Tape& tape, ad::Var y) {
  ad::Tensor w(y.rows(), y.cols());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.7 * std::sin(1.0 + 1.7 * static_cast<double>(i));
  return ad::dot(y, tape.constant(w));
}

inline std::vector<GradCase> op_gradient_cases() {
  using namespace era::ad;
  using S = std::span<const Var>;
  Rng rng(21);
  const Tensor a = random_tensor(3, 4, rng), b = random_tensor(3, 4, rng), m = random_tensor(4, 2, rng);
  const Tensor row = random_tensor(1, 4, rng), col = random_tensor(3, 1, rng);
  const Tensor pos = random_tensor(3, 4, rng, 0.2, 2.0);
  // Entries kept away from kinks and clip bounds.
  const Tensor away(3, 4, {-1.3, -0.7, 0.6, 1.2, 0.45, -0.35, 1.7, -1.9, 0.8, -0.55, 0.25, -1.1});
  const std::vector<std::size_t> cidx{3, 0, 3}, ridx{2, 0, 2, 1};
  const Tensor lo(2, 2, {-3.0, -1.0, 0.5, -9.0}), hi(2, 2, {-2.0, 1.5, 4.0, -8.5});
  const Tensor mu(2, 3, {0.1, -0.6, 0.9, 1.4, -0.2, 0.0}), sg(2, 3, {0.3, 0.8, 0.05, 0.5, 2.0, 0.2});
  const Tensor eps(2, 3, {0.2, 0.5, 0.9, 0.05, 0.7, 0.999});

  std::vector<GradCase> out;
  auto add_case = [&](std::string name, const ScalarFn& f, const std::vector<Tensor>& in) {
    out.push_back({std::move(name), gradient_check(f, in), false});
  };
  add_case("matmul", [](Tape& t, S v) { return reduce(t, matmul(v[0], v[1])); }, {a, m});
  add_case("add", [](Tape& t, S v) { return reduce(t, add(v[0], v[1])); }, {a, b});
  add_case("sub", [](Tape& t, S v) { return reduce(t, sub(v[0], v[1])); }, {a, b});
  add_case("mul", [](Tape& t, S v) { return reduce(t, mul(v[0], v[1])); }, {a, b});
  add_case("add_row", [](Tape& t, S v) { return reduce(t, add_row(v[0], v[1])); }, {a, row});
  add_case("mul_row", [](Tape& t, S v) { return reduce(t, mul_row(v[0], v[1])); }, {a, row});
  add_case("add_col", [](Tape& t, S v) { return reduce(t, add_col(v[0], v[1])); }, {a, col});
  add_case("mul_col", [](Tape& t, S v) { return reduce(t, mul_col(v[0], v[1])); }, {a, col});
  add_case("scale", [](Tape& t, S v) { return reduce(t, scale(v[0], -2.5)); }, {a});
  add_case("add_scalar", [](Tape& t, S v) { return reduce(t, add_scalar(v[0], 0.7)); }, {a});
  add_case("neg", [](Tape& t, S v) { return reduce(t, neg(v[0])); }, {a});
  add_case("tanh", [](Tape& t, S v) { return reduce(t, ad::tanh(v[0])); }, {a});
  add_case("relu", [](Tape& t, S v) { return reduce(t, relu(v[0])); }, {away});
  add_case("exp", [](Tape& t, S v) { return reduce(t, ad::exp(v[0])); }, {a});
  add_case("log", [](Tape& t, S v) { return reduce(t, ad::log(v[0])); }, {pos});
  add_case("sqrt", [](Tape& t, S v) { return reduce(t, ad::sqrt(v[0])); }, {pos});
  add_case("square", [](Tape& t, S v) { return reduce(t, square(v[0])); }, {a});
  add_case("softplus", [](Tape& t, S v) { return reduce(t, ad::softplus(v[0])); }, {a});
  add_case("maximum", [](Tape& t, S v) { return reduce(t, maximum(v[0], 0.0)); }, {away});
  add_case("minimum", [](Tape& t, S v) { return reduce(t, minimum(v[0], 0.0)); }, {away});
  add_case("clip", [](Tape& t, S v) { return reduce(t, clip(v[0], -1.0, 1.0)); }, {away});
  add_case("min", [](Tape& t, S v) { return reduce(t, ad::min(v[0], v[1])); }, {away, a});
  add_case("softmax_rows", [](Tape& t, S v) { return reduce(t, softmax_rows(v[0])); }, {a});
  add_case("log_softmax_rows", [](Tape& t, S v) { return reduce(t, log_softmax_rows(v[0])); }, {a});
  add_case("log_sum_exp_rows", [](Tape& t, S v) { return reduce(t, log_sum_exp_rows(v[0])); }, {a});
  add_case("min_rows", [](Tape& t, S v) { return reduce(t, min_rows(v[0])); }, {away});
  add_case("sum_rows", [](Tape& t, S v) { return reduce(t, sum_rows(v[0])); }, {a});
  add_case("mean_rows", [](Tape& t, S v) { return reduce(t, mean_rows(v[0])); }, {a});
  add_case("sum", [](Tape&, S v) { return sum(v[0]); }, {a});
  add_case("mean", [](Tape&, S v) { return mean(v[0]); }, {a});
  add_case("dot", [](Tape&, S v) { return dot(v[0], v[1]); }, {a, b});
  add_case("concat_cols", [](Tape& t, S v) { return reduce(t, concat_cols(v[0], v[1])); }, {a, col});
  add_case("slice_cols", [](Tape& t, S v) { return reduce(t, slice_cols(v[0], 1, 2)); }, {a});
  add_case("gather_cols", [&](Tape& t, S v) { return reduce(t, gather_cols(v[0], cidx)); }, {a});
  add_case("gather_rows", [&](Tape& t, S v) { return reduce(t, gather_rows(v[0], ridx)); }, {a});
  add_case("layer_norm_rows", [](Tape& t, S v) { return reduce(t, layer_norm_rows(v[0])); }, {a});
  add_case("normal_cdf", [](Tape& t, S v) { return reduce(t, normal_cdf(v[0])); }, {a});
  add_case("log_normal_mass", [](Tape& t, S v) { return reduce(t, log_normal_mass(v[0], v[1])); }, {lo, hi});
  add_case("truncated_normal_sample",
           [&](Tape& t, S v) { return reduce(t, truncated_normal_sample(v[0], v[1], eps)); }, {mu, sg});
  add_case("operators",
           [](Tape& t, S v) { return reduce(t, (v[0] + v[1]) * v[0] - 2.0 * v[1] + 1.0 - (-v[0]) * 0.5); }, {a, b});
  add_case("era_log_sigma", [](Tape& t, S v) {
    cont::EraContinuousConfig cfg;
    cfg.dim = 4;
    cfg.target_entropy = -2.0;
    cfg.sigma_max = 2.0;
    return reduce(t, cont::era_log_sigma(v[0], cfg, 0.2));
  }, {a});
  add_case("truncated_log_prob_rows", [](Tape&, S v) {
    return sum(cont::truncated_log_prob_rows(v[0], v[1], v[2]));
  }, {mu, Tensor(2, 3, {-1.2, -0.2, -3.0, -0.7, 0.7, -1.6}), Tensor(2, 3, {0.5, -0.9, 0.85, 0.95, 0.1, -0.3})});
  for (auto inv : {disc::Inverse::exact, disc::Inverse::approx}) {
    add_case(inv == disc::Inverse::exact ? "era_logits_exact" : "era_logits_approx", [inv](Tape& t, S v) {
      const disc::EraDiscreteConfig cfg{1.0, 4.0, 4};
      // the detached row shift only cancels under a shift-invariant readout
      return reduce(t, log_softmax_rows(disc::era_logits(v[0], cfg, inv)));
    }, {a});
  }
  return out;
}

inline std::vector<GradCase> composition_gradient_cases() {
  using namespace era::ad;
  std::vector<GradCase> out;

  {  // Policy network -> ERA sigma head -> truncated-Gaussian log-density.
    Rng rng(31);
    nn::Mlp net("pi", {{3, 8, 4}, nn::Activation::tanh, true}, rng);
    cont::EraContinuousConfig cfg;
    cfg.dim = 2;
    cfg.target_entropy = -1.0;
    cfg.sigma_min = std::exp(-5.0);
    cfg.sigma_max = std::exp(2.0);
    const Tensor obs = random_tensor(5, 3, rng), act = random_tensor(5, 2, rng, -0.9, 0.9);
    const ScalarFn f = [&](Tape& t, std::span<const Var> v) {
      Var o = net.forward(t, v[0], false);
      Var mu = ad::tanh(slice_cols(o, 0, 2));
      Var ls = cont::era_log_sigma(slice_cols(o, 2, 2), cfg, 0.3);
      return mean(cont::truncated_log_prob_rows(mu, ls, t.constant(act)));
    };
    out.push_back({"continuous log-prob path", gradient_check(f, {obs}), true});
  }
  {  // Classifier -> ERA logits -> cross-entropy.
    Rng rng(32);
    nn::Mlp net("clf", {{4, 8, 5}, nn::Activation::relu, false}, rng);
    const disc::EraDiscreteConfig cfg{1.0, 4.0, 5};
    const Tensor x = random_tensor(6, 4, rng, -2.0, 2.0);
    const std::vector<std::size_t> y{0, 4, 2, 1, 3, 0};
    for (auto inv : {disc::Inverse::exact, disc::Inverse::approx}) {
      const ScalarFn f = [&, inv](Tape& t, std::span<const Var> v) {
        Var z = disc::era_logits(net.forward(t, v[0], false), cfg, inv);
        return neg(mean(gather_cols(log_softmax_rows(z), y)));
      };
      out.push_back({inv == disc::Inverse::exact ? "discrete cross-entropy path (exact)"
                                                 : "discrete cross-entropy path (approx)",
                     gradient_check(f, {x}), true});
    }
  }
  {  // Logits -> branch plan -> ERA objective, with and without top-k.
    Rng rng(33);
    const Tensor logits = random_tensor(6, 5, rng, -2.0, 2.0);
    const std::vector<std::size_t> tokens{0, 3, 4, 1, 1, 2};
    llm::EraLlmConfig cfg;
    cfg.omega_low = 1.45;
    cfg.omega_high = 1.5;
    const std::vector<double> adv{1.0, 1.0, 1.0, -0.5, -0.5, -0.5};
    const std::vector<std::uint8_t> mask(6, 1);
    const auto ents = llm::token_entropies(logits.values(), 5);
    const auto plan = llm::plan_tokens(2, 3, ents, adv, mask, cfg);
    const ScalarFn f = [&](Tape&, std::span<const Var> v) { return llm::era_objective(v[0], tokens, plan, cfg); };
    out.push_back({"LLM objective path", gradient_check(f, {logits}), true});
    cfg.top_k_logits = 3;
    out.push_back({"LLM objective path (top-k)", gradient_check(f, {logits}), true});
  }
  return out;
}

}  // namespace era::testing
