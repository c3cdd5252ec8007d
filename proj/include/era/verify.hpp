#pragma once

// Randomized property suites for the entropy bounds and identities. Each
// property reports the measured worst case next to its threshold so that
// callers (CLI, acceptance tests) can gate on either.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace era::verify {

struct PropertyResult {
  std::string name;
  bool pass = false;
  double measured = 0.0;   // worst case observed
  double threshold = 0.0;  // bound the measurement is compared against
  std::size_t trials = 0;
  double seconds = 0.0;
  std::string detail;
};

struct SuiteReport {
  std::string suite;
  std::vector<PropertyResult> properties;
  bool all_pass() const;
};

nlohmann::json to_json(const PropertyResult& r, const std::string& suite);

std::vector<std::string> suite_names();
/// "numerics", "continuous", "discrete", "llm" or "all". Throws ConfigError
/// for any other name.
std::vector<SuiteReport> run_suite(const std::string& name, std::uint64_t seed = 0);

// numerics
PropertyResult cdf_derivative(std::size_t trials, std::uint64_t seed);
PropertyResult cdf_monotone(std::size_t points);
PropertyResult log_sum_exp_shift(std::size_t trials, std::uint64_t seed);
PropertyResult quantile_roundtrip(std::size_t points);

// continuous
/// measured: min over draws of gaussian_entropy(era_activate) - H0' (>= -1e-9);
/// also fails if any sigma leaves [sigma_min, sigma_max].
PropertyResult prop_b1_bound(std::size_t trials, std::uint64_t seed);
/// measured: max |truncated_entropy - quadrature| over D = 1 draws.
PropertyResult truncated_entropy_quadrature(std::size_t trials, std::uint64_t seed);
/// measured: max |delta_tn_analytic - (gaussian - truncated)|.
PropertyResult delta_identity(std::size_t trials, std::uint64_t seed);
/// measured: min truncated entropy - H0 over draws whose delta covers the truncation loss.
PropertyResult final_policy_bound(std::size_t trials, std::uint64_t seed);
/// measured: max |era_activate(sigma_hat + c) - era_activate(sigma_hat)|.
PropertyResult continuous_shift_equivariance(std::size_t trials, std::uint64_t seed);

// discrete
/// measured: min entropy - H0 with the exact inverse over D in {3, 10, 100, 1000}.
PropertyResult prop_b2_exact(std::size_t trials, std::uint64_t seed);
/// measured: eps_approx = max(H0 - entropy) with the approximate inverse.
PropertyResult prop_b2_approx(std::size_t trials, std::uint64_t seed, double threshold = 0.05);
/// measured: max |h_inv_approx - h_inv_exact| on a log grid over [1e-6, 1/e].
PropertyResult h_inv_accuracy(std::size_t points);
/// measured: max of |h_inv_approx(1/e) + 1| and |h_inv_exact(1/e) + 1|.
PropertyResult h_inv_endpoint();
/// measured: max violation of 0 <= kappa <= u, sum kappa >= C, and the two kappa forms agreeing.
PropertyResult kappa_bounds(std::size_t trials, std::uint64_t seed);
/// measured: number of draws where argmax changes.
PropertyResult argmax_preserved(std::size_t trials, std::uint64_t seed);
PropertyResult discrete_shift_invariance(std::size_t trials, std::uint64_t seed);

// llm
/// measured: max |lhs - rhs| over sharpen / flatten draws, vocab <= 32.
PropertyResult b3_identity(std::size_t trials, std::uint64_t seed);
/// measured: max |lhs - pi A| in the identity branch.
PropertyResult b3_middle_branch(std::size_t trials, std::uint64_t seed);
/// measured: max entropy increase under sharpening / decrease under flattening.
PropertyResult sharpen_monotone(std::size_t trials, std::uint64_t seed);
/// measured: number of draws where the omega_low = 0, omega_high = inf
/// objective or gradient differs bitwise from vanilla policy gradient.
PropertyResult vanilla_equivalence(std::size_t trials, std::uint64_t seed);

}  // namespace era::verify
