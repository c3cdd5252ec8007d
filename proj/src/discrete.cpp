#include "era/discrete.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "era/error.hpp"

namespace era::disc {

namespace {

constexpr double kKappaFloor = 1e-12;
constexpr double kInvE = 0.36787944117144233;
// Slack on the 1/e endpoint so that kappa = log(e)/e computed in floating
// point is accepted.
constexpr double kInvETolerance = kInvE * (1.0 + 1e-12);

void check_domain(double x, const char* who) {
  if (!(x >= 0.0) || x > kInvETolerance) throw DomainError(std::string(who) + ": x must lie in (0, 1/e]");
}

// d/dx h^-1(x) for the derivative of the tape op. Infinite at x = 1/e; the
// floor keeps 0 * derivative finite when upstream weights vanish.
double h_inv_approx_deriv(double x) {
  const double xf = std::max(x, kKappaFloor);
  const double v = std::max(-1.0 - std::log(xf), 1e-12);
  return (1.0 / std::sqrt(2.0 * v) + 0.75) / xf;
}

double h_inv_exact_deriv(double x, double y) {
  // dy/dx = 1 / h'(y), h'(y) = -(1 + y) e^y, written as x (1 + y) / y.
  const double xf = std::max(x, kKappaFloor);
  const double one_plus_y = std::min(1.0 + y, -1e-6);
  return y / (xf * one_plus_y);
}

}  // namespace

double EraDiscreteConfig::u() const { return std::log(tau) / tau; }

double EraDiscreteConfig::c() const { return std::exp(target_entropy - 1.0); }

double EraDiscreteConfig::slope() const {
  const double d = static_cast<double>(classes);
  const double s = (u() - c() / d) / (1.0 - 1.0 / d);
  return std::abs(s) < 1e-15 ? 0.0 : s;
}

double EraDiscreteConfig::intercept() const { return (c() - slope()) / static_cast<double>(classes); }

void EraDiscreteConfig::validate() const {
  if (classes < 2) throw ConfigError("EraDiscreteConfig: need at least 2 classes");
  if (!(tau >= std::numbers::e * (1.0 - 1e-15))) throw ConfigError("EraDiscreteConfig: tau must be >= e");
  const double d = static_cast<double>(classes);
  if (!(target_entropy <= std::log(d) + 1e-12)) {
    throw ConfigError("EraDiscreteConfig: target_entropy exceeds log D = " + std::to_string(std::log(d)));
  }
  const double tol = 1e-12;
  if (c() < u() * (1.0 - tol)) {
    throw ConfigError("EraDiscreteConfig: exp(H0 - 1) = " + std::to_string(c()) + " is below log(tau)/tau = " +
                      std::to_string(u()));
  }
  if (c() > d * u() * (1.0 + tol)) {
    throw ConfigError("EraDiscreteConfig: exp(H0 - 1) = " + std::to_string(c()) + " exceeds D log(tau)/tau = " +
                      std::to_string(d * u()));
  }
}

std::vector<double> kappa(std::span<const double> z, const EraDiscreteConfig& cfg) {
  cfg.validate();
  if (z.size() != cfg.classes) throw ShapeError("kappa: expected " + std::to_string(cfg.classes) + " logits");
  const auto p = dist::softmax(z);
  const double s = cfg.slope(), b = cfg.intercept();
  std::vector<double> k(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) k[i] = std::max(s * p[i] + b, 0.0);
  return k;
}

std::vector<double> kappa_reference(std::span<const double> z, const EraDiscreteConfig& cfg) {
  cfg.validate();
  if (z.size() != cfg.classes) throw ShapeError("kappa_reference: expected " + std::to_string(cfg.classes) + " logits");
  const auto p = dist::softmax(z);
  const double d = static_cast<double>(cfg.classes);
  std::vector<double> k(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    k[i] = std::max(cfg.u() + (cfg.c() - d * cfg.u()) * (1.0 - p[i]) / (d - 1.0), 0.0);
  }
  return k;
}

double h_inv_approx(double x) {
  check_domain(x, "h_inv_approx");
  const double v = std::max(-1.0 - std::log(std::max(x, kKappaFloor)), 0.0);
  return -1.0 - std::sqrt(2.0 * v) - 0.75 * v;
}

double h_inv_exact(double x) {
  check_domain(x, "h_inv_exact");
  x = std::max(x, kKappaFloor);
  if (x >= kInvE) return -1.0;
  // g(y) = log(-y) + y - log x is increasing on y < -1 with g(-1) >= 0.
  const double lx = std::log(x);
  auto g = [lx](double y) { return std::log(-y) + y - lx; };
  double hi = -1.0;
  double lo = std::min(-2.0, 2.0 * lx);
  while (g(lo) > 0.0) lo *= 2.0;
  double y = std::clamp(h_inv_approx(x), lo, hi);
  for (int it = 0; it < 100; ++it) {
    const double gy = g(y);
    if (gy == 0.0) break;
    if (gy > 0.0) hi = y; else lo = y;
    double next = y - gy / (1.0 / y + 1.0);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - y) <= 4e-16 * std::abs(y) || hi - lo <= 4e-16 * std::abs(y)) {
      y = next;
      break;
    }
    y = next;
  }
  return y;
}

double h_inv(double x, Inverse inverse) { return inverse == Inverse::approx ? h_inv_approx(x) : h_inv_exact(x); }

std::vector<double> era_logits(std::span<const double> z, const EraDiscreteConfig& cfg, Inverse inverse) {
  auto k = kappa(z, cfg);
  std::vector<double> out(k.size());
  for (std::size_t i = 0; i < k.size(); ++i) out[i] = h_inv(std::max(k[i], kKappaFloor), inverse);
  const double m = *std::min_element(out.begin(), out.end());
  for (double& v : out) v -= m;
  return out;
}

dist::CategoricalLogits era_logits(const dist::CategoricalLogits& z, const EraDiscreteConfig& cfg, Inverse inverse) {
  return {era_logits(std::span<const double>(z.z), cfg, inverse)};
}

ad::Var era_logits(ad::Var z, const EraDiscreteConfig& cfg, Inverse inverse) {
  cfg.validate();
  if (z.cols() != cfg.classes) throw ShapeError("era_logits: expected " + std::to_string(cfg.classes) + " columns");
  ad::Var p = ad::softmax_rows(z);
  ad::Var k = ad::maximum(ad::add_scalar(ad::scale(p, cfg.slope()), cfg.intercept()), kKappaFloor);
  const ad::Tensor& kv = k.value();
  ad::Tensor y(kv.rows(), kv.cols());
  for (std::size_t i = 0; i < kv.size(); ++i) y[i] = h_inv(kv[i], inverse);
  const std::size_t ik = k.id();
  ad::Var h = z.tape()->record(std::move(y), {k}, [ik, inverse](ad::Tape& t, std::size_t self) {
    const ad::Tensor& g = t.grad(self);
    const ad::Tensor& xv = t.value(ik);
    const ad::Tensor& yv = t.value(self);
    ad::Tensor& gk = t.grad_buffer(ik);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (g[i] == 0.0) continue;
      const double d = inverse == Inverse::approx ? h_inv_approx_deriv(xv[i]) : h_inv_exact_deriv(xv[i], yv[i]);
      gk[i] += g[i] * d;
    }
  });
  return ad::add_col(h, ad::neg(ad::detach(ad::min_rows(h))));
}

}  // namespace era::disc
