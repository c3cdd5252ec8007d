#include "era/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "era/error.hpp"
#include "era/numerics.hpp"

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace era::ad {

namespace {

#ifdef __GLIBC__
// Every tape frees its whole arena at once; without a high trim threshold
// glibc hands the heap top back to the kernel after each update and the next
// tape faults it in again. Large tensors likewise stay off mmap.
const bool heap_retained = [] {
  return mallopt(M_TRIM_THRESHOLD, 256 << 20) == 1 && mallopt(M_MMAP_THRESHOLD, 64 << 20) == 1;
}();
#endif

}  // namespace

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap as_matrix(const Tensor& t) { return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())}; }
MutMap as_matrix(Tensor& t) { return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())}; }

std::string shape_str(const Tensor& t) { return "[" + std::to_string(t.rows()) + ", " + std::to_string(t.cols()) + "]"; }

void require_same_tape(Var a, Var b, const char* op) {
  if (a.tape() != b.tape() || a.tape() == nullptr) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
}

void require_same_shape(Var a, Var b, const char* op) {
  require_same_tape(a, b, op);
  if (!a.value().same_shape(b.value())) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " + shape_str(b.value()));
  }
}

// Elementwise op with derivative expressed through input x and output y.
template <typename F, typename DF>
Var unary(Var a, F f, DF df) {
  const Tensor& x = a.value();
  Tensor y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(y), {a}, [ia, df](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(ia);
    const Tensor& yv = t.value(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(xv[i], yv[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(data.begin(), data.end()) {
  if (data_.size() != rows * cols) throw ShapeError("Tensor: data length does not match shape");
}

Tensor Tensor::row(std::span<const double> v) { return Tensor(1, v.size(), std::vector<double>(v.begin(), v.end())); }

Tensor Tensor::column(std::span<const double> v) {
  return Tensor(v.size(), 1, std::vector<double>(v.begin(), v.end()));
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("Tensor::item: tensor is not [1, 1]");
  return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const { return tape_->value(id_); }

const Tensor& Var::grad() const { return tape_->grad_buffer(id_); }

Var Tape::push(Node node) {
  if (backward_done_) throw std::logic_error("Tape: cannot record after backward()");
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::parameter(Parameter& p, bool trainable) {
  Node n;
  n.value = p.value;
  n.requires_grad = trainable;
  n.param = trainable ? &p : nullptr;
  return push(std::move(n));
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (const Var& p : parents) {
    if (p.tape() != this) throw std::invalid_argument("Tape::record: parent recorded on another tape");
    n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size() || !n.grad.same_shape(n.value)) n.grad = Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (backward_done_) throw std::logic_error("Tape::backward: tape already consumed; record a new tape");
  if (loss.tape() != this) throw std::invalid_argument("Tape::backward: loss belongs to another tape");
  if (loss.value().size() != 1) throw ShapeError("Tape::backward: loss must be [1, 1], got " + shape_str(loss.value()));
  backward_done_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, i);
  }
  for (Node& n : nodes_) {
    if (n.param == nullptr || n.grad.size() == 0) continue;
    as_matrix(n.param->grad) += as_matrix(n.grad);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra and broadcasting

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.rows()) throw ShapeError("matmul: inner dimensions differ " + shape_str(x) + " x " + shape_str(y));
  Tensor out(x.rows(), y.cols());
  as_matrix(out).noalias() = as_matrix(x) * as_matrix(y);
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const auto g = as_matrix(t.grad(self));
    if (t.requires_grad(ia)) as_matrix(t.grad_buffer(ia)).noalias() += g * as_matrix(t.value(ib)).transpose();
    if (t.requires_grad(ib)) as_matrix(t.grad_buffer(ib)).noalias() += as_matrix(t.value(ia)).transpose() * g;
  });
}


Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  as_matrix(out) += as_matrix(b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const auto g = as_matrix(t.grad(self));
    if (t.requires_grad(ia)) as_matrix(t.grad_buffer(ia)) += g;
    if (t.requires_grad(ib)) as_matrix(t.grad_buffer(ib)) += g;
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  as_matrix(out) -= as_matrix(b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const auto g = as_matrix(t.grad(self));
    if (t.requires_grad(ia)) as_matrix(t.grad_buffer(ia)) += g;
    if (t.requires_grad(ib)) as_matrix(t.grad_buffer(ib)) -= g;
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  as_matrix(out).array() *= as_matrix(b.value()).array();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const auto g = as_matrix(t.grad(self)).array();
    if (t.requires_grad(ia)) as_matrix(t.grad_buffer(ia)).array() += g * as_matrix(t.value(ib)).array();
    if (t.requires_grad(ib)) as_matrix(t.grad_buffer(ib)).array() += g * as_matrix(t.value(ia)).array();
  });
}

Var add_row(Var a, Var row) {
  require_same_tape(a, row, "add_row");
  const Tensor& x = a.value();
  if (row.value().rows() != 1 || row.value().cols() != x.cols()) {
    throw ShapeError("add_row: expected [1, " + std::to_string(x.cols()) + "], got " + shape_str(row.value()));
  }
  Tensor out = x;
  as_matrix(out).rowwise() += as_matrix(row.value()).row(0);
  const std::size_t ia = a.id(), ir = row.id();
  return a.tape()->record(std::move(out), {a, row}, [ia, ir](Tape& t, std::size_t self) {
    const auto g = as_matrix(t.grad(self));
    if (t.requires_grad(ia)) as_matrix(t.grad_buffer(ia)) += g;
    if (t.requires_grad(ir)) as_matrix(t.grad_buffer(ir)) += g.colwise().sum();
  });
}

Var mul_row(Var a, Var row) {
  require_same_tape(a, row, "mul_row");
  const Tensor& x = a.value();
  if (row.value().rows() != 1 || row.value().cols() != x.cols()) {
    throw ShapeError("mul_row: expected [1, " + std::to_string(x.cols()) + "], got " + shape_str(row.value()));
  }
  Tensor out = x;
  as_matrix(out).array().rowwise() *= as_matrix(row.value()).row(0).array();
  const std::size_t ia = a.id(), ir = row.id();
  return a.tape()->record(std::move(out), {a, row}, [ia, ir](Tape& t, std::size_t self) {
    const auto g = as_matrix(t.grad(self)).array();
    if (t.requires_grad(ia)) as_matrix(t.grad_buffer(ia)).array() += g.rowwise() * as_matrix(t.value(ir)).row(0).array();
    if (t.requires_grad(ir)) {
      as_matrix(t.grad_buffer(ir)).row(0).array() += (g * as_matrix(t.value(ia)).array()).colwise().sum();
    }
  });
}

Var mul_col(Var a, Var col) {
  require_same_tape(a, col, "mul_col");
  const Tensor& x = a.value();
  if (col.value().cols() != 1 || col.value().rows() != x.rows()) {
    throw ShapeError("mul_col: expected [" + std::to_string(x.rows()) + ", 1], got " + shape_str(col.value()));
  }
  Tensor out = x;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) *= col.value()(r, 0);
  const std::size_t ia = a.id(), ic = col.id();
  return a.tape()->record(std::move(out), {a, col}, [ia, ic](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(ia);
    const Tensor& cv = t.value(ic);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_buffer(ia);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += g(r, c) * cv(r, 0);
    }
    if (t.requires_grad(ic)) {
      Tensor& gc = t.grad_buffer(ic);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gc(r, 0) += g(r, c) * xv(r, c);
    }
  });
}

Var add_col(Var a, Var col) {
  require_same_tape(a, col, "add_col");
  const Tensor& x = a.value();
  if (col.value().cols() != 1 || col.value().rows() != x.rows()) {
    throw ShapeError("add_col: expected [" + std::to_string(x.rows()) + ", 1], got " + shape_str(col.value()));
  }
  Tensor out = x;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) += col.value()(r, 0);
  const std::size_t ia = a.id(), ic = col.id();
  return a.tape()->record(std::move(out), {a, col}, [ia, ic](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) as_matrix(t.grad_buffer(ia)) += as_matrix(g);
    if (t.requires_grad(ic)) {
      Tensor& gc = t.grad_buffer(ic);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gc(r, 0) += g(r, c);
    }
  });
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt(Var a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var softplus(Var a) {
  return unary(
      a, [](double x) { return numerics::softplus(x); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var maximum(Var a, double lo) {
  return unary(a, [lo](double x) { return x > lo ? x : lo; }, [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

Var minimum(Var a, double hi) {
  return unary(a, [hi](double x) { return x < hi ? x : hi; }, [hi](double x, double) { return x < hi ? 1.0 : 0.0; });
}

Var clip(Var a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var clip_straight_through(Var a, double lo, double hi) {
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); }, [](double, double) { return 1.0; });
}

Var detach(Var a) { return a.tape()->constant(a.value()); }

Var min(Var a, Var b) {
  require_same_shape(a, b, "min");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::min(x[i], y[i]);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(ia);
    const Tensor& yv = t.value(ib);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const bool left = xv[i] <= yv[i];
      if (left && t.requires_grad(ia)) t.grad_buffer(ia)[i] += g[i];
      if (!left && t.requires_grad(ib)) t.grad_buffer(ib)[i] += g[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Row reductions

Var softmax_rows(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double lse = numerics::log_sum_exp(x.row_span(r));
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = std::exp(x(r, c) - lse);
  }
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double dotp = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) dotp += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += y(r, c) * (g(r, c) - dotp);
    }
  });
}

Var log_softmax_rows(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double lse = numerics::log_sum_exp(x.row_span(r));
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) - lse;
  }
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double gsum = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) gsum += g(r, c);
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += g(r, c) - std::exp(y(r, c)) * gsum;
    }
  });
}

Var log_sum_exp_rows(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) out(r, 0) = numerics::log_sum_exp(x.row_span(r));
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(ia);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < xv.rows(); ++r)
      for (std::size_t c = 0; c < xv.cols(); ++c) ga(r, c) += g(r, 0) * std::exp(xv(r, c) - y(r, 0));
  });
}

Var min_rows(Var a) {
  const Tensor& x = a.value();
  if (x.cols() == 0) throw ShapeError("min_rows: no columns");
  Tensor out(x.rows(), 1);
  std::vector<std::size_t> arg(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row_span(r);
    arg[r] = static_cast<std::size_t>(std::min_element(row.begin(), row.end()) - row.begin());
    out(r, 0) = row[arg[r]];
  }
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, arg](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < g.rows(); ++r) ga(r, arg[r]) += g(r, 0);
  });
}

Var sum_rows(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (double v : x.row_span(r)) s += v;
    out(r, 0) = s;
  }
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g(r, 0);
  });
}

Var mean_rows(Var a) { return scale(sum_rows(a), 1.0 / static_cast<double>(a.cols())); }

Var sum(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.values()) s += v;
  const std::size_t ia = a.id();
  return a.tape()->record(Tensor::scalar(s), {a}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    as_matrix(t.grad_buffer(ia)).array() += g;
  });
}

Var mean(Var a) {
  if (a.value().size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var dot(Var a, Var b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(Tensor::scalar(s), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    if (t.requires_grad(ia)) as_matrix(t.grad_buffer(ia)) += g * as_matrix(t.value(ib));
    if (t.requires_grad(ib)) as_matrix(t.grad_buffer(ib)) += g * as_matrix(t.value(ia));
  });
}

// ---------------------------------------------------------------------------
// Indexing

Var concat_cols(Var a, Var b) {
  require_same_tape(a, b, "concat_cols");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rows() != y.rows()) throw ShapeError("concat_cols: row counts differ " + shape_str(x) + " vs " + shape_str(y));
  Tensor out(x.rows(), x.cols() + y.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::copy(x.row_span(r).begin(), x.row_span(r).end(), out.row_span(r).begin());
    std::copy(y.row_span(r).begin(), y.row_span(r).end(), out.row_span(r).begin() + x.cols());
  }
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t split = x.cols();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib, split](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_buffer(ia);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < split; ++c) ga(r, c) += g(r, c);
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = split; c < g.cols(); ++c) gb(r, c - split) += g(r, c);
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& x = a.value();
  if (begin + count > x.cols()) throw ShapeError("slice_cols: range exceeds " + shape_str(x));
  Tensor out(x.rows(), count);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = x(r, begin + c);
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, begin](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, begin + c) += g(r, c);
  });
}

Var gather_cols(Var a, std::span<const std::size_t> index) {
  const Tensor& x = a.value();
  if (index.size() != x.rows()) throw ShapeError("gather_cols: need one index per row");
  Tensor out(x.rows(), 1);
  std::vector<std::size_t> idx(index.begin(), index.end());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    if (idx[r] >= x.cols()) throw ShapeError("gather_cols: index out of range");
    out(r, 0) = x(r, idx[r]);
  }
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, idx](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < g.rows(); ++r) ga(r, idx[r]) += g(r, 0);
  });
}

Var gather_rows(Var a, std::span<const std::size_t> index) {
  const Tensor& x = a.value();
  Tensor out(index.size(), x.cols());
  std::vector<std::size_t> idx(index.begin(), index.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= x.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy(x.row_span(idx[i]).begin(), x.row_span(idx[i]).end(), out.row_span(i).begin());
  }
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, idx](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(idx[i], c) += g(i, c);
  });
}

Var layer_norm_rows(Var a, double eps) {
  const Tensor& x = a.value();
  const std::size_t n = x.cols();
  Tensor out(x.rows(), n);
  Tensor inv_std(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double m = 0.0;
    for (double v : x.row_span(r)) m += v;
    m /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x.row_span(r)) var += (v - m) * (v - m);
    var /= static_cast<double>(n);
    inv_std(r, 0) = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) out(r, c) = (x(r, c) - m) * inv_std(r, 0);
  }
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, inv_std](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad_buffer(ia);
    const double inv_n = 1.0 / static_cast<double>(g.cols());
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double g_mean = 0.0;
      double gy_mean = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) {
        g_mean += g(r, c);
        gy_mean += g(r, c) * y(r, c);
      }
      g_mean *= inv_n;
      gy_mean *= inv_n;
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += inv_std(r, 0) * (g(r, c) - g_mean - y(r, c) * gy_mean);
    }
  });
}

// ---------------------------------------------------------------------------
// Normal-distribution ops

Var normal_cdf(Var a) {
  return unary(
      a, [](double x) { return numerics::normal_cdf(x); }, [](double x, double) { return numerics::normal_pdf(x); });
}

Var log_normal_mass(Var alpha, Var beta) {
  require_same_shape(alpha, beta, "log_normal_mass");
  const Tensor& a = alpha.value();
  const Tensor& b = beta.value();
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double z = numerics::normal_mass(a[i], b[i]);
    if (!(z > 0.0)) throw DegenerateMassError("log_normal_mass: mass underflows");
    out[i] = std::log(z);
  }
  const std::size_t ia = alpha.id(), ib = beta.id();
  return alpha.tape()->record(std::move(out), {alpha, beta}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    const Tensor& lz = t.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (t.requires_grad(ia)) t.grad_buffer(ia)[i] -= g[i] * std::exp(numerics::normal_log_pdf(av[i]) - lz[i]);
      if (t.requires_grad(ib)) t.grad_buffer(ib)[i] += g[i] * std::exp(numerics::normal_log_pdf(bv[i]) - lz[i]);
    }
  });
}

Var truncated_normal_sample(Var mu, Var sigma, const Tensor& eps) {
  require_same_shape(mu, sigma, "truncated_normal_sample");
  if (!eps.same_shape(mu.value())) throw ShapeError("truncated_normal_sample: eps shape differs from mu");
  const Tensor& m = mu.value();
  const Tensor& s = sigma.value();
  Tensor out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double a = (-1.0 - m[i]) / s[i];
    const double b = (1.0 - m[i]) / s[i];
    const double e = std::clamp(eps[i], 0.0, 1.0);
    double x;
    if (a > 0.0) {
      const double lo = numerics::normal_sf(b);
      const double hi = numerics::normal_sf(a);
      const double q = hi - e * (hi - lo);
      x = q <= 0.0 ? b : (q >= 1.0 ? a : numerics::normal_quantile_upper(q));
    } else {
      const double lo = numerics::normal_cdf(a);
      const double hi = numerics::normal_cdf(b);
      const double p = lo + e * (hi - lo);
      x = p <= 0.0 ? a : (p >= 1.0 ? b : numerics::normal_quantile(p));
    }
    out[i] = std::clamp(m[i] + s[i] * std::clamp(x, a, b), -1.0, 1.0);
  }
  const std::size_t im = mu.id(), is = sigma.id();
  return mu.tape()->record(std::move(out), {mu, sigma}, [im, is, eps](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& mv = t.value(im);
    const Tensor& sv = t.value(is);
    const Tensor& av = t.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double a = (-1.0 - mv[i]) / sv[i];
      const double b = (1.0 - mv[i]) / sv[i];
      const double xi = (av[i] - mv[i]) / sv[i];
      const double f = std::clamp(eps[i], 0.0, 1.0);
      // phi(bound) / phi(xi) without forming either density.
      const double ra = std::exp(0.5 * (xi * xi - a * a));
      const double rb = std::exp(0.5 * (xi * xi - b * b));
      const double d_mu = 1.0 - ((1.0 - f) * ra + f * rb);
      const double d_sigma = xi - ((1.0 - f) * a * ra + f * b * rb);
      if (t.requires_grad(im)) t.grad_buffer(im)[i] += g[i] * d_mu;
      if (t.requires_grad(is)) t.grad_buffer(is)[i] += g[i] * d_sigma;
    }
  });
}

// ---------------------------------------------------------------------------
// Operators

Var operator+(Var a, Var b) { return add(a, b); }
Var operator-(Var a, Var b) { return sub(a, b); }
Var operator*(Var a, Var b) { return mul(a, b); }
Var operator-(Var a) { return neg(a); }
Var operator*(Var a, double s) { return scale(a, s); }
Var operator*(double s, Var a) { return scale(a, s); }
Var operator+(Var a, double s) { return add_scalar(a, s); }
Var operator-(Var a, double s) { return add_scalar(a, -s); }

// ---------------------------------------------------------------------------
// Gradient checking

GradCheckResult gradient_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double h, double floor) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& in : inputs) vars.push_back(tape.variable(in));
    Var out = f(tape, vars);
    tape.backward(out);
    for (const Var& v : vars) analytic.push_back(v.grad());
  }
  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& in : xs) vars.push_back(tape.constant(in));
    return f(tape, vars).item();
  };
  GradCheckResult res;
  std::vector<Tensor> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k][i];
      work[k][i] = x0 + h;
      const double fp = eval(work);
      work[k][i] = x0 - h;
      const double fm = eval(work);
      work[k][i] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[k][i];
      const double abs_err = std::abs(a - numeric);
      res.max_abs_error = std::max(res.max_abs_error, abs_err);
      res.max_rel_error = std::max(res.max_rel_error, abs_err / std::max({std::abs(a), std::abs(numeric), floor}));
    }
  }
  return res;
}

}  // namespace era::ad
