#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass. Values are Tensors of
// shape [rows, cols]; vectors are [1, n] or [n, 1] and scalars are [1, 1].
// Each tape supports exactly one backward() call.

#include <cstddef>
#include <functional>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace era::ad {

/// Storage with a fixed 64-byte alignment. Vectorized kernels take different
/// head/tail paths on differently aligned data, so without it results would
/// depend on heap layout.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlignment); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor row(std::span<const double> v);
  static Tensor column(std::span<const double> v);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<const double> row_span(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

  /// Value of a [1, 1] tensor.
  double item() const;
  void fill(double v);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double, AlignedAllocator<double>> data_;
};

/// A named trainable array together with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}
  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  /// Gradient of the loss w.r.t. this node; valid after Tape::backward.
  const Tensor& grad() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const { return value().item(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives gradient.
  Var constant(Tensor value);
  /// Leaf whose gradient is kept on the tape.
  Var variable(Tensor value);
  /// Leaf bound to a Parameter; backward() adds into parameter.grad when
  /// trainable is true.
  Var parameter(Parameter& p, bool trainable = true);

  /// Accumulate d(loss)/d(node) for every node reachable from a [1, 1] loss.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

  // Op-author interface.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient buffer of a node, allocated on first use.
  Tensor& grad_buffer(std::size_t id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Var push(Node node);
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Operations. Every op checks shapes and throws ShapeError on mismatch.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// a[r, c] + row[0, c]
Var add_row(Var a, Var row);
/// a[r, c] * row[0, c]
Var mul_row(Var a, Var row);
/// a[r, c] * col[r, 0]
Var mul_col(Var a, Var col);
/// a[r, c] + col[r, 0]
Var add_col(Var a, Var col);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);

Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
Var softplus(Var a);

/// max(a, lo) elementwise; no gradient where the bound is active.
Var maximum(Var a, double lo);
/// min(a, hi) elementwise; no gradient where the bound is active.
Var minimum(Var a, double hi);
Var clip(Var a, double lo, double hi);
/// Clipped value with identity gradient.
Var clip_straight_through(Var a, double lo, double hi);
/// Same value, no gradient flows to a.
Var detach(Var a);
/// Elementwise minimum of two tensors; gradient routed to the smaller one.
Var min(Var a, Var b);

Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
/// [r, c] -> [r, 1]
Var log_sum_exp_rows(Var a);
/// [r, c] -> [r, 1]
Var min_rows(Var a);
Var sum_rows(Var a);
Var mean_rows(Var a);

/// [r, c] -> [1, 1]
Var sum(Var a);
Var mean(Var a);
/// sum(a * b) -> [1, 1]
Var dot(Var a, Var b);

Var concat_cols(Var a, Var b);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
/// out[r, 0] = a[r, index[r]]
Var gather_cols(Var a, std::span<const std::size_t> index);
/// out[i, :] = a[index[i], :]
Var gather_rows(Var a, std::span<const std::size_t> index);

/// Per-row normalization to zero mean and unit variance (no affine).
Var layer_norm_rows(Var a, double eps = 1e-5);

Var normal_cdf(Var a);
/// log(Phi(beta) - Phi(alpha)) elementwise.
Var log_normal_mass(Var alpha, Var beta);
/// Inverse-CDF sample of N(mu, sigma^2) truncated to [-1, 1] at fixed
/// uniforms eps; gradients by implicit differentiation of the CDF.
Var truncated_normal_sample(Var mu, Var sigma, const Tensor& eps);

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator-(Var a);
Var operator*(Var a, double s);
Var operator*(double s, Var a);
Var operator+(Var a, double s);
Var operator-(Var a, double s);

// ---------------------------------------------------------------------------
// Central-difference gradient checking.

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

/// Compares backward() against central differences with step h on every
/// entry of every input. Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckResult gradient_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double h = 1e-5,
                               double floor = 1e-3);

}  // namespace era::ad
