#include <doctest.h>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "era/distributions.hpp"
#include "era/error.hpp"
#include "era/numerics.hpp"

using namespace era;
using namespace era::dist;
using doctest::Approx;

namespace {

GaussianPolicyParams gp(std::vector<double> mu, std::vector<double> sigma) {
  return GaussianPolicyParams(std::move(mu), std::move(sigma), 1e-8, 1e8);
}

// Independent oracle: -int p log p of the truncated density on [-1, 1] using
// Boost's normal distribution and adaptive Gauss-Kronrod quadrature.
double truncated_entropy_oracle(double mu, double sigma) {
  const boost::math::normal_distribution<double> n(mu, sigma);
  const double z = boost::math::cdf(n, 1.0) - boost::math::cdf(n, -1.0);
  auto f = [&](double a) {
    const double p = boost::math::pdf(n, a) / z;
    return p > 0.0 ? -p * std::log(p) : 0.0;
  };
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, -1.0, 1.0, 20, 1e-13);
}

}  // namespace

TEST_CASE("gaussian_entropy examples") {
  CHECK(gaussian_entropy(gp({0.0}, {1.0})) == Approx(1.4189385332).epsilon(1e-10));
  CHECK(gaussian_entropy(gp({0.0, 0.0}, {1.0, 1.0})) == Approx(2.8378770664).epsilon(1e-10));
  CHECK(gaussian_entropy(gp({0.0}, {0.1})) == Approx(-0.8836465598).epsilon(1e-9));
}

TEST_CASE("params validation") {
  CHECK_THROWS_AS(GaussianPolicyParams({0.0}, {1.0, 1.0}, 0.1, 1.0).validate(), ShapeError);
  CHECK_THROWS_AS(GaussianPolicyParams({0.0}, {2.0}, 0.1, 1.0).validate(), ConfigError);
  CHECK_THROWS_AS(GaussianPolicyParams({0.0}, {0.5}, 1.0, 0.1).validate(), ConfigError);
}

TEST_CASE("truncated_entropy against quadrature") {
  CHECK(truncated_entropy(gp({0.0}, {10.0})) == Approx(0.6931460702).epsilon(1e-9));
  CHECK(truncated_entropy(gp({0.0}, {10.0})) < std::numbers::ln2);
  CHECK(truncated_entropy(gp({0.0}, {0.1})) == Approx(-0.8836465598).epsilon(1e-9));
  for (auto [mu, s] : {std::pair{0.5, 0.5}, {0.9, 0.05}, {-3.0, 0.7}, {2.0, 3.0}, {0.0, 1e-3}}) {
    CHECK(std::abs(truncated_entropy(gp({mu}, {s})) - truncated_entropy_oracle(mu, s)) <= 1e-9);
  }
  const double sum = truncated_entropy(gp({0.5}, {0.5})) + truncated_entropy(gp({-0.2}, {2.0}));
  CHECK(truncated_entropy(gp({0.5, -0.2}, {0.5, 2.0})) == Approx(sum).epsilon(1e-14));
}

TEST_CASE("degenerate truncation mass is reported") {
  CHECK_THROWS_AS(TruncatedGaussianAux::from(gp({100.0}, {1e-3})), DegenerateMassError);
}

TEST_CASE("truncated sampling") {
  Rng rng(7);
  const auto a = truncated_sample(gp({0.0}, {1e-6}), rng);
  CHECK(std::abs(a[0]) <= 1e-4);

  const auto p = gp({0.5}, {0.5});
  const int n = 100000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = truncated_sample(p, rng)[0];
    REQUIRE(x >= -1.0);
    REQUIRE(x <= 1.0);
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  CHECK(truncated_mean(p)[0] == Approx(0.3586069446).epsilon(1e-9));
  CHECK(std::abs(mean - truncated_mean(p)[0]) <= 3.0 * std::sqrt(var / n));

  // Far in a tail the samples still stay inside the box.
  const auto tail = gp({6.0}, {0.3});
  for (int i = 0; i < 1000; ++i) {
    const double x = truncated_sample(tail, rng)[0];
    REQUIRE(x >= -1.0);
    REQUIRE(x <= 1.0);
  }
  const std::vector<double> u0{0.0}, u1{1.0};
  CHECK(truncated_from_uniform(tail, u0)[0] == Approx(-1.0));
  CHECK(truncated_from_uniform(tail, u1)[0] == Approx(1.0));
}

TEST_CASE("truncated_log_prob") {
  const std::vector<double> zero{0.0};
  CHECK(truncated_log_prob(gp({0.0}, {10.0}), zero) == Approx(-std::numbers::ln2).epsilon(1e-3));
  const auto p = gp({0.3}, {0.4});
  auto dens = [&](double a) {
    const std::vector<double> v{a};
    return std::exp(truncated_log_prob(p, v));
  };
  CHECK(boost::math::quadrature::gauss_kronrod<double, 61>::integrate(dens, -1.0, 1.0, 15, 1e-13) ==
        Approx(1.0).epsilon(1e-6));
  const std::vector<double> at_mu{0.3}, off{0.31}, box{1.0};
  CHECK(truncated_log_prob(p, at_mu) > truncated_log_prob(p, off));
  const auto outside = gp({1.7}, {0.4});
  CHECK(truncated_log_prob(outside, box) > truncated_log_prob(outside, at_mu));
}

TEST_CASE("tanh log-prob correction") {
  CHECK(log_one_minus_tanh_sq(0.0) == Approx(0.0));
  CHECK(std::isfinite(log_one_minus_tanh_sq(30.0)));
  CHECK(log_one_minus_tanh_sq(30.0) == Approx(2.0 * (std::numbers::ln2 - 30.0)).epsilon(1e-12));
  for (double u = -5.0; u <= 5.0; u += 0.25) {
    const double t = std::tanh(u);
    CHECK(std::abs(log_one_minus_tanh_sq(u) - std::log(1.0 - t * t)) <= 1e-8);
  }
  const std::vector<double> u{0.0};
  const auto p = gp({0.0}, {1.0});
  CHECK(tanh_gaussian_log_prob(p, u) == Approx(-numerics::kLogSqrt2Pi).epsilon(1e-14));
}

TEST_CASE("tanh_gaussian_entropy_mc") {
  Rng rng(3);
  const auto narrow = gp({0.0}, {1e-6});
  const auto e = tanh_gaussian_entropy_mc(narrow, 1000, rng);
  CHECK(e.mean == Approx(gaussian_entropy(narrow)).epsilon(1e-9));

  // H(tanh u) = H(u) + E[log(1 - tanh(u)^2)]; the expectation by quadrature.
  auto f = [](double u) { return numerics::normal_pdf(u) * log_one_minus_tanh_sq(u); };
  const double oracle =
      numerics::kLogSqrt2PiE + boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, -15.0, 15.0, 15, 1e-13);
  const auto unit = tanh_gaussian_entropy_mc(gp({0.0}, {1.0}), 1000000, rng);
  CHECK(std::abs(unit.mean - oracle) <= 3.0 * unit.std_error);
  CHECK(unit.mean <= gaussian_entropy(gp({0.0}, {1.0})));
}

TEST_CASE("categorical_entropy") {
  CHECK(categorical_entropy(std::vector<double>(4, 0.0)) == Approx(std::log(4.0)).epsilon(1e-15));
  std::vector<double> onehot(5, 0.0);
  onehot[0] = 40.0;
  CHECK(categorical_entropy(onehot) == Approx(0.0).epsilon(1e-12));
  const std::vector<double> z{std::log(3.0), 0.0};
  CHECK(categorical_entropy(CategoricalLogits{z}) ==
        Approx(-0.75 * std::log(0.75) - 0.25 * std::log(0.25)).epsilon(1e-14));
  const auto p = softmax(z);
  CHECK(p[0] == Approx(0.75));
}
