#include <doctest.h>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include "era/error.hpp"
#include "era/numerics.hpp"

using namespace era::numerics;
using doctest::Approx;

TEST_CASE("normal_pdf values and symmetry") {
  CHECK(normal_pdf(0.0) == Approx(0.3989422804).epsilon(1e-10));
  CHECK(normal_pdf(1.3) == normal_pdf(-1.3));
  CHECK(normal_pdf(2.0) == Approx(0.0539909665).epsilon(1e-9));
  CHECK(normal_log_pdf(2.0) == Approx(std::log(normal_pdf(2.0))).epsilon(1e-14));
}

TEST_CASE("normal_cdf against an independent implementation") {
  const boost::math::normal_distribution<double> n;
  CHECK(normal_cdf(0.0) == 0.5);
  CHECK(normal_cdf(1.0) == Approx(0.8413447461).epsilon(1e-10));
  for (double x = -37.0; x <= 8.0; x += 0.37) {
    CHECK(std::abs(normal_cdf(x) - boost::math::cdf(n, x)) <= 1e-12 * std::max(1.0, boost::math::cdf(n, x)) + 1e-300);
    CHECK(normal_cdf(x) + normal_cdf(-x) == Approx(1.0).epsilon(1e-15));
    const double sf = boost::math::cdf(boost::math::complement(n, x));
    CHECK(std::abs(normal_sf(x) - sf) <= 1e-12 * sf);
  }
}

TEST_CASE("normal_cdf is the integral of normal_pdf") {
  // Tail substitution x = 1 - t / (1 - t) maps (0, 1] onto (-inf, 1].
  auto f = [](double t) {
    if (t >= 1.0) return 0.0;
    const double x = 1.0 - t / (1.0 - t);
    return normal_pdf(x) / ((1.0 - t) * (1.0 - t));
  };
  const double q = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, 1.0, 15, 1e-14);
  CHECK(normal_cdf(1.0) == Approx(q).epsilon(1e-12));
}

TEST_CASE("normal_mass avoids cancellation in the tails") {
  const boost::math::normal_distribution<double> n;
  const double far = normal_mass(9.0, 10.0);
  const double oracle = boost::math::cdf(boost::math::complement(n, 9.0)) - boost::math::cdf(boost::math::complement(n, 10.0));
  CHECK(far == Approx(oracle).epsilon(1e-12));
  CHECK(normal_mass(-10.0, -9.0) == Approx(oracle).epsilon(1e-12));
  CHECK(normal_mass(-1.0, 1.0) == Approx(0.6826894921370859).epsilon(1e-13));
}

TEST_CASE("normal_quantile inverts normal_cdf") {
  const boost::math::normal_distribution<double> n;
  for (double p : {1e-12, 1e-8, 1e-3, 0.02, 0.3, 0.5, 0.77, 0.975, 1 - 1e-6}) {
    CHECK(std::abs(normal_cdf(normal_quantile(p)) - p) <= 1e-10);
    CHECK(normal_quantile(p) == Approx(boost::math::quantile(n, p)).epsilon(1e-9));
  }
  CHECK(normal_quantile_upper(1e-20) == Approx(-boost::math::quantile(n, 1e-20)).epsilon(1e-9));
}

TEST_CASE("softplus is stable") {
  CHECK(softplus(0.0) == Approx(std::numbers::ln2).epsilon(1e-15));
  CHECK(softplus(100.0) == Approx(100.0).epsilon(1e-15));
  const double tiny = softplus(-100.0);
  CHECK(tiny > 0.0);
  CHECK(tiny == Approx(std::exp(-100.0)).epsilon(1e-12));
}

TEST_CASE("log_sum_exp examples") {
  std::vector<double> a{0.0, 0.0}, b{1000.0, 1000.0}, c{std::log(3.0), 0.0};
  CHECK(log_sum_exp(a) == Approx(std::numbers::ln2).epsilon(1e-15));
  CHECK(log_sum_exp(b) == Approx(1000.0 + std::numbers::ln2).epsilon(1e-15));
  CHECK(log_sum_exp(c) == Approx(std::log(4.0)).epsilon(1e-15));
  CHECK_THROWS_AS(log_sum_exp(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("simpson_integrate") {
  CHECK(simpson_integrate([](double) { return 1.0; }, {0.0, 1.0, 2}) == Approx(1.0).epsilon(1e-15));
  CHECK(simpson_integrate([](double x) { return x * x; }, {0.0, 1.0, 2}) == Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(std::abs(simpson_integrate(normal_pdf, {-8.0, 8.0, 4096}) - 1.0) <= 1e-10);
  CHECK_THROWS_AS(simpson_integrate(normal_pdf, {0.0, 1.0, 3}), std::invalid_argument);
}

TEST_CASE("entropy_by_quadrature") {
  CHECK(entropy_by_quadrature([](double) { return 0.5; }, {-1.0, 1.0, 64}) == Approx(std::numbers::ln2).epsilon(1e-14));
  const double h = entropy_by_quadrature(normal_pdf, {-12.0, 12.0, 8192});
  CHECK(h == Approx(kLogSqrt2PiE).epsilon(1e-10));
}
