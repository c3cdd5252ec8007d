#pragma once

// Desk-scale continuous-control environments and the replay buffer.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "era/distributions.hpp"

namespace era::env {

enum class EnvKind { pointmass, pendulum };

EnvKind parse_env_kind(const std::string& name);
const char* to_string(EnvKind kind);

struct StepResult {
  std::vector<double> obs;
  double reward = 0.0;
  /// Episode over (always by time limit for the built-in tasks).
  bool done = false;
  /// True termination; time-limit ends are not terminal and keep bootstrapping.
  bool terminal = false;
};

class ToyEnv {
 public:
  ToyEnv(EnvKind kind, std::uint64_t seed);

  std::vector<double> reset();
  /// Throws DomainError for actions outside [-1, 1]^act_dim.
  StepResult step(std::span<const double> action);

  EnvKind kind() const { return kind_; }
  std::size_t obs_dim() const { return kind_ == EnvKind::pointmass ? 4 : 3; }
  std::size_t act_dim() const { return kind_ == EnvKind::pointmass ? 2 : 1; }
  std::size_t horizon() const { return horizon_; }
  std::size_t steps() const { return t_; }
  std::vector<double> observation() const;

  // Direct state access for tests.
  void set_pointmass(std::span<const double> position, std::span<const double> goal);
  void set_pendulum(double theta, double theta_dot);

 private:
  EnvKind kind_;
  Rng rng_;
  std::size_t horizon_ = 200;
  std::size_t t_ = 0;
  double x_[2] = {0.0, 0.0};
  double goal_[2] = {0.0, 0.0};
  double theta_ = 0.0;
  double theta_dot_ = 0.0;
};

struct Transition {
  std::vector<double> state;
  std::vector<double> action;
  double reward = 0.0;
  std::vector<double> next_state;
  bool done = false;  // terminal: no bootstrap from next_state
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void add(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const { return items_.at(i); }
  /// Uniform indices with replacement.
  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t cursor_ = 0;
  std::vector<Transition> items_;
};

}  // namespace era::env
