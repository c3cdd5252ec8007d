#include <doctest.h>

#include <algorithm>
#include <boost/math/special_functions/lambert_w.hpp>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

#include "era/autodiff.hpp"
#include "era/discrete.hpp"
#include "era/error.hpp"

using namespace era;
using namespace era::disc;
using doctest::Approx;

namespace {

// -y e^y = x with y <= -1 is y = W_{-1}(-x).
double lambert_oracle(double x) { return boost::math::lambert_wm1(-x); }

std::vector<double> onehot40(std::size_t d) {
  std::vector<double> z(d, 0.0);
  z[0] = 40.0;
  return z;
}

}  // namespace

TEST_CASE("config constants and validation") {
  const EraDiscreteConfig cfg{1.2, 4.0, 10};
  CHECK(cfg.u() == Approx(std::log(4.0) / 4.0).epsilon(1e-15));
  CHECK(cfg.c() == Approx(std::exp(0.2)).epsilon(1e-15));
  CHECK_NOTHROW(cfg.validate());
  CHECK_THROWS_AS((EraDiscreteConfig{1.2, 2.0, 10}.validate()), ConfigError);
  CHECK_THROWS_AS((EraDiscreteConfig{3.0, 4.0, 10}.validate()), ConfigError);
  CHECK_THROWS_AS((EraDiscreteConfig{0.0, 4.0, 1}.validate()), ConfigError);
  CHECK_THROWS_AS((EraDiscreteConfig{std::log(10.0), 4.0, 10}.validate()), ConfigError);
  CHECK_NOTHROW((EraDiscreteConfig{std::log(10.0), std::numbers::e, 10}.validate()));
}

TEST_CASE("kappa examples") {
  const EraDiscreteConfig cfg{1.2, 4.0, 10};
  const auto uniform = kappa(std::vector<double>(10, 0.3), cfg);
  for (double k : uniform) CHECK(k == Approx(cfg.c() / 10.0).epsilon(1e-14));

  const auto k = kappa(onehot40(10), cfg);
  CHECK(k[0] == Approx(0.3465735903).epsilon(1e-9));
  for (std::size_t i = 1; i < 10; ++i) CHECK(k[i] == Approx(0.0972032).epsilon(1e-6));
  CHECK(std::accumulate(k.begin(), k.end(), 0.0) == Approx(1.2214027582).epsilon(1e-9));

  Rng rng(2);
  std::normal_distribution<double> n(0.0, 4.0);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> z(10);
    for (double& v : z) v = n(rng);
    const auto a = kappa(z, cfg), b = kappa_reference(z, cfg);
    for (std::size_t i = 0; i < 10; ++i) {
      CHECK(a[i] <= cfg.u() * (1 + 1e-12));
      CHECK(a[i] >= 0.0);
      CHECK(a[i] == Approx(b[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("approximate inverse") {
  CHECK(h_inv_approx(std::exp(-1.0)) == Approx(-1.0).epsilon(1e-12));
  CHECK(h_inv_approx(0.1) == Approx(-3.59099).epsilon(1e-5));
  double prev = -1e300;
  for (double x = 1e-6; x <= std::exp(-1.0); x *= 1.1) {
    const double y = h_inv_approx(x);
    CHECK(y > prev);
    prev = y;
  }
  CHECK_THROWS_AS(h_inv_approx(0.5), DomainError);
  CHECK_THROWS_AS(h_inv_approx(-0.1), DomainError);
}

TEST_CASE("exact inverse against Lambert W") {
  CHECK(h_inv_exact(std::exp(-1.0)) == Approx(-1.0).epsilon(1e-12));
  CHECK(h_inv_exact(2.0 * std::exp(-2.0)) == Approx(-2.0).epsilon(1e-13));
  CHECK(h_inv_exact(0.1) == Approx(-3.57715).epsilon(1e-5));
  for (double x = 1e-12; x < 0.36; x *= 1.3) {
    CHECK(h_inv_exact(x) == Approx(lambert_oracle(x)).epsilon(1e-12));
    const double y = h_inv_exact(x);
    CHECK(-y * std::exp(y) == Approx(x).epsilon(1e-12));
  }
  CHECK(h_inv(0.1, Inverse::exact) == h_inv_exact(0.1));
  CHECK(h_inv(0.1, Inverse::approx) == h_inv_approx(0.1));
}

TEST_CASE("era_logits examples") {
  const EraDiscreteConfig cfg{1.2, 4.0, 10};
  const auto flat = era_logits(std::vector<double>(10, -2.0), cfg, Inverse::exact);
  for (double v : flat) CHECK(v == Approx(0.0).epsilon(1e-15));
  CHECK(dist::categorical_entropy(flat) == Approx(std::log(10.0)).epsilon(1e-14));

  const auto z = era_logits(dist::CategoricalLogits{onehot40(10)}, cfg, Inverse::exact);
  const double h = dist::categorical_entropy(z);
  CHECK(h >= 1.2);
  const auto k = kappa(onehot40(10), cfg);
  CHECK(h >= 1.0 + std::log(std::accumulate(k.begin(), k.end(), 0.0)) - 1e-12);
  CHECK(*std::min_element(z.z.begin(), z.z.end()) == 0.0);
}

TEST_CASE("era_logits preserves argmax and the entropy floor") {
  Rng rng(4);
  for (std::size_t d : {3u, 10u, 100u}) {
    const EraDiscreteConfig cfg{0.5 * std::log(static_cast<double>(d)), 4.0, d};
    REQUIRE_NOTHROW(cfg.validate());
    std::normal_distribution<double> n(0.0, 5.0);
    for (int t = 0; t < 300; ++t) {
      std::vector<double> z(d);
      for (double& v : z) v = n(rng);
      const auto ze = era_logits(z, cfg, Inverse::exact);
      const auto za = era_logits(z, cfg, Inverse::approx);
      CHECK(dist::categorical_entropy(ze) >= cfg.target_entropy - 1e-9);
      const auto am = std::max_element(z.begin(), z.end()) - z.begin();
      CHECK(std::max_element(ze.begin(), ze.end()) - ze.begin() == am);
      CHECK(std::max_element(za.begin(), za.end()) - za.begin() == am);
    }
  }
}

TEST_CASE("tape era_logits matches the scalar version") {
  const EraDiscreteConfig cfg{1.2, 4.0, 4};
  const std::vector<double> z{1.0, -2.0, 0.5, 3.0, 0.0, 0.0, 0.0, 0.1};
  for (auto inv : {Inverse::exact, Inverse::approx}) {
    ad::Tape tape;
    ad::Var out = era_logits(tape.constant(ad::Tensor(2, 4, z)), cfg, inv);
    for (std::size_t r = 0; r < 2; ++r) {
      const auto ref = era_logits(std::span<const double>(z).subspan(4 * r, 4), cfg, inv);
      for (std::size_t i = 0; i < 4; ++i) CHECK(out.value()(r, i) == Approx(ref[i]).epsilon(1e-12));
    }
  }
}
