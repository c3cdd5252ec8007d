#include "era/nn.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "era/error.hpp"

namespace era::nn {

namespace {

ad::Tensor uniform_tensor(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  ad::Tensor t(rows, cols);
  for (double& v : t.values()) v = u(rng);
  return t;
}

}  // namespace

Mlp::Mlp(std::string name, MlpSpec spec, Rng& rng) : spec_(std::move(spec)) {
  if (spec_.widths.size() < 2) throw ConfigError("Mlp: need at least input and output widths");
  for (std::size_t w : spec_.widths)
    if (w == 0) throw ConfigError("Mlp: zero width");
  const std::size_t layers = spec_.widths.size() - 1;
  params_.reserve(layers * 2 + (spec_.layer_norm ? (layers - 1) * 2 : 0));
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = spec_.widths[l];
    const std::size_t out = spec_.widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    const std::string p = name + "." + std::to_string(l);
    params_.emplace_back(p + ".w", uniform_tensor(in, out, bound, rng));
    params_.emplace_back(p + ".b", uniform_tensor(1, out, bound, rng));
    if (spec_.layer_norm && l + 1 < layers) {
      params_.emplace_back(p + ".ln_gain", ad::Tensor(1, out, 1.0));
      params_.emplace_back(p + ".ln_shift", ad::Tensor(1, out, 0.0));
    }
  }
}

ad::Var Mlp::forward(ad::Tape& tape, ad::Var x, bool trainable) {
  if (x.cols() != spec_.widths.front()) {
    throw ShapeError("Mlp::forward: expected " + std::to_string(spec_.widths.front()) + " input columns, got " +
                     std::to_string(x.cols()));
  }
  const std::size_t layers = spec_.widths.size() - 1;
  std::size_t i = 0;
  ad::Var h = x;
  for (std::size_t l = 0; l < layers; ++l) {
    ad::Var w = tape.parameter(params_[i++], trainable);
    ad::Var b = tape.parameter(params_[i++], trainable);
    h = ad::add_row(ad::matmul(h, w), b);
    if (l + 1 == layers) break;
    if (spec_.layer_norm) {
      ad::Var g = tape.parameter(params_[i++], trainable);
      ad::Var s = tape.parameter(params_[i++], trainable);
      h = ad::add_row(ad::mul_row(ad::layer_norm_rows(h), g), s);
    }
    h = spec_.activation == Activation::relu ? ad::relu(h) : ad::tanh(h);
  }
  return h;
}

std::vector<ad::Parameter*> Mlp::parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const ad::Parameter*> Mlp::parameters() const {
  std::vector<const ad::Parameter*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

void Mlp::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

AdamState make_adam_state(const std::vector<ad::Parameter*>& params, AdamConfig config) {
  AdamState s;
  s.config = config;
  for (const ad::Parameter* p : params) {
    s.m.emplace_back(p->value.rows(), p->value.cols());
    s.v.emplace_back(p->value.rows(), p->value.cols());
  }
  return s;
}

void adam_step(const std::vector<ad::Parameter*>& params, AdamState& state) {
  if (params.size() != state.m.size() || params.size() != state.v.size()) {
    throw ShapeError("adam_step: parameter count does not match optimizer state");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ad::Parameter& p = *params[i];
    if (!p.grad.same_shape(p.value) || !state.m[i].same_shape(p.value) || !state.v[i].same_shape(p.value)) {
      throw ShapeError("adam_step: shape mismatch for parameter " + p.name);
    }
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Parameter& p = *params[i];
    ad::Tensor& m = state.m[i];
    ad::Tensor& v = state.v[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
      p.value[j] -= c.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + c.eps);
    }
  }
}

Adam::Adam(std::vector<ad::Parameter*> params, AdamConfig config)
    : params_(std::move(params)), state_(make_adam_state(params_, config)) {}

void Adam::zero_grad() {
  for (ad::Parameter* p : params_) p->zero_grad();
}

void polyak_update(const std::vector<const ad::Parameter*>& online, const std::vector<ad::Parameter*>& target,
                   double tau) {
  if (online.size() != target.size()) throw ShapeError("polyak_update: parameter lists differ in length");
  for (std::size_t i = 0; i < online.size(); ++i) {
    const ad::Tensor& src = online[i]->value;
    ad::Tensor& dst = target[i]->value;
    if (!src.same_shape(dst)) throw ShapeError("polyak_update: shape mismatch for " + online[i]->name);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = tau * src[j] + (1.0 - tau) * dst[j];
  }
}

// --- checkpoints -----------------------------------------------------------

namespace {

constexpr const char* kMagic = "era-kit-checkpoint";

void write_le(std::ostream& os, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  char buf[8];
  std::memcpy(buf, &bits, 8);
  os.write(buf, 8);
}

double read_le(std::istream& is) {
  char buf[8];
  if (!is.read(buf, 8)) throw std::runtime_error("checkpoint: truncated data section");
  std::uint64_t bits;
  std::memcpy(&bits, buf, 8);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<const ad::Parameter*>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  os << kMagic << " 1\n" << "tensors " << params.size() << "\n";
  for (const ad::Parameter* p : params) {
    if (p->name.empty() || p->name.find_first_of(" \t\n") != std::string::npos) {
      throw std::invalid_argument("checkpoint: parameter name must be non-empty without whitespace");
    }
    os << p->name << ' ' << p->value.rows() << ' ' << p->value.cols() << '\n';
  }
  os << "end\n";
  for (const ad::Parameter* p : params)
    for (double v : p->value.values()) write_le(os, v);
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

std::vector<ad::Parameter> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::string line;
  auto next_line = [&] {
    if (!std::getline(is, line)) throw std::runtime_error("checkpoint: truncated header");
    return std::istringstream(line);
  };
  {
    auto ss = next_line();
    std::string magic;
    int version = 0;
    ss >> magic >> version;
    if (magic != kMagic || version != 1) throw std::runtime_error("checkpoint: bad magic or version");
  }
  std::size_t n = 0;
  {
    auto ss = next_line();
    std::string key;
    ss >> key >> n;
    if (key != "tensors" || !ss) throw std::runtime_error("checkpoint: expected 'tensors <N>'");
  }
  std::vector<ad::Parameter> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto ss = next_line();
    std::string name;
    std::size_t rows = 0, cols = 0;
    ss >> name >> rows >> cols;
    if (!ss) throw std::runtime_error("checkpoint: malformed tensor line '" + line + "'");
    out.emplace_back(name, ad::Tensor(rows, cols));
  }
  if (next_line().str() != "end") throw std::runtime_error("checkpoint: expected 'end'");
  for (auto& p : out)
    for (double& v : p.value.values()) v = read_le(is);
  return out;
}

void load_checkpoint(const std::filesystem::path& path, const std::vector<ad::Parameter*>& params) {
  std::map<std::string, ad::Parameter> stored;
  for (auto& p : read_checkpoint(path)) stored.emplace(p.name, std::move(p));
  for (ad::Parameter* p : params) {
    auto it = stored.find(p->name);
    if (it == stored.end()) throw std::runtime_error("checkpoint: missing tensor " + p->name);
    if (!it->second.value.same_shape(p->value)) throw ShapeError("checkpoint: shape mismatch for " + p->name);
    p->value = it->second.value;
  }
}

}  // namespace era::nn
