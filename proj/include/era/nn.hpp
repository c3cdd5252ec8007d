#pragma once

// Small MLPs, Adam, Polyak averaging and parameter checkpoints.

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "era/autodiff.hpp"
#include "era/distributions.hpp"

namespace era::nn {

enum class Activation { relu, tanh };

struct MlpSpec {
  std::vector<std::size_t> widths;  // input, hidden..., output
  Activation activation = Activation::relu;
  /// LayerNorm (with learned gain and bias) after every hidden linear layer.
  bool layer_norm = false;
};

class Mlp {
 public:
  Mlp() = default;
  /// Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Mlp(std::string name, MlpSpec spec, Rng& rng);

  /// x: [batch, widths.front()] -> [batch, widths.back()]. Parameters enter the
  /// tape as trainable leaves unless trainable is false.
  ad::Var forward(ad::Tape& tape, ad::Var x, bool trainable = true);

  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;
  const MlpSpec& spec() const { return spec_; }
  void zero_grad();

 private:
  MlpSpec spec_;
  std::vector<ad::Parameter> params_;  // per layer: W, b[, gain, shift]
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<ad::Tensor> m;
  std::vector<ad::Tensor> v;
  long step = 0;
};

AdamState make_adam_state(const std::vector<ad::Parameter*>& params, AdamConfig config = {});

/// One bias-corrected Adam step using each parameter's accumulated grad.
void adam_step(const std::vector<ad::Parameter*>& params, AdamState& state);

class Adam {
 public:
  Adam() = default;
  Adam(std::vector<ad::Parameter*> params, AdamConfig config = {});
  void step() { adam_step(params_, state_); }
  void zero_grad();
  const AdamState& state() const { return state_; }

 private:
  std::vector<ad::Parameter*> params_;
  AdamState state_;
};

/// target <- tau * online + (1 - tau) * target, parameter by parameter.
void polyak_update(const std::vector<const ad::Parameter*>& online, const std::vector<ad::Parameter*>& target,
                   double tau);

// Checkpoint layout (all text lines end in '\n'):
//   era-kit-checkpoint 1
//   tensors <N>
//   <name> <rows> <cols>      (N lines, names without whitespace)
//   end
// followed by the tensors' values in header order, row-major, as raw
// little-endian IEEE-754 float64.
void save_checkpoint(const std::filesystem::path& path, const std::vector<const ad::Parameter*>& params);
std::vector<ad::Parameter> read_checkpoint(const std::filesystem::path& path);
/// Copies values into params, matching by name; shapes must agree.
void load_checkpoint(const std::filesystem::path& path, const std::vector<ad::Parameter*>& params);

}  // namespace era::nn
