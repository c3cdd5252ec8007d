#include "era/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "era/error.hpp"

namespace era::env {

EnvKind parse_env_kind(const std::string& name) {
  if (name == "pointmass" || name == "pointmass-reach-2d") return EnvKind::pointmass;
  if (name == "pendulum" || name == "pendulum-swingup") return EnvKind::pendulum;
  throw ConfigError("unknown env '" + name + "' (expected pointmass or pendulum)");
}

const char* to_string(EnvKind kind) { return kind == EnvKind::pointmass ? "pointmass" : "pendulum"; }

ToyEnv::ToyEnv(EnvKind kind, std::uint64_t seed) : kind_(kind), rng_(seed) { reset(); }

std::vector<double> ToyEnv::reset() {
  t_ = 0;
  if (kind_ == EnvKind::pointmass) {
    std::uniform_real_distribution<double> start(-1.0, 1.0), goal(-0.5, 0.5);
    x_[0] = start(rng_);
    x_[1] = start(rng_);
    goal_[0] = goal(rng_);
    goal_[1] = goal(rng_);
  } else {
    std::uniform_real_distribution<double> th(-std::numbers::pi, std::numbers::pi), thd(-1.0, 1.0);
    theta_ = th(rng_);
    theta_dot_ = thd(rng_);
  }
  return observation();
}

std::vector<double> ToyEnv::observation() const {
  if (kind_ == EnvKind::pointmass) return {x_[0], x_[1], goal_[0], goal_[1]};
  return {std::cos(theta_), std::sin(theta_), theta_dot_};
}

namespace {

double wrap_angle(double th) {
  return std::remainder(th, 2.0 * std::numbers::pi);  // [-pi, pi]
}

}  // namespace

StepResult ToyEnv::step(std::span<const double> action) {
  if (action.size() != act_dim()) throw ShapeError("ToyEnv::step: wrong action dimension");
  for (double a : action)
    if (!(a >= -1.0 && a <= 1.0)) throw DomainError("ToyEnv::step: action outside [-1, 1]");
  StepResult r;
  if (kind_ == EnvKind::pointmass) {
    x_[0] += 0.05 * action[0];
    x_[1] += 0.05 * action[1];
    r.reward = -std::hypot(x_[0] - goal_[0], x_[1] - goal_[1]);
  } else {
    // Gym-style pendulum: g = 10, m = l = 1, max torque 2, |theta_dot| <= 8.
    constexpr double g = 10.0, dt = 0.05, max_torque = 2.0;
    const double th = wrap_angle(theta_);
    r.reward = -(th * th + 0.1 * theta_dot_ * theta_dot_ + 0.001 * action[0] * action[0]);
    const double u = max_torque * action[0];
    theta_dot_ = std::clamp(theta_dot_ + (1.5 * g * std::sin(theta_) + 3.0 * u) * dt, -8.0, 8.0);
    theta_ += theta_dot_ * dt;
  }
  ++t_;
  r.done = t_ >= horizon_;
  r.terminal = false;
  r.obs = observation();
  return r;
}

void ToyEnv::set_pointmass(std::span<const double> position, std::span<const double> goal) {
  if (kind_ != EnvKind::pointmass || position.size() != 2 || goal.size() != 2) {
    throw std::invalid_argument("set_pointmass: not a pointmass env or wrong sizes");
  }
  x_[0] = position[0];
  x_[1] = position[1];
  goal_[0] = goal[0];
  goal_[1] = goal[1];
}

void ToyEnv::set_pendulum(double theta, double theta_dot) {
  if (kind_ != EnvKind::pendulum) throw std::invalid_argument("set_pendulum: not a pendulum env");
  theta_ = theta;
  theta_dot_ = theta_dot;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("ReplayBuffer: capacity must be positive");
  items_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::add(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
  } else {
    items_[cursor_] = std::move(t);
  }
  cursor_ = (cursor_ + 1) % capacity_;
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t n, Rng& rng) const {
  if (items_.empty()) throw std::logic_error("ReplayBuffer: empty");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

}  // namespace era::env
