#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "era/autodiff.hpp"
#include "era/continuous.hpp"
#include "era/discrete.hpp"
#include "era/error.hpp"
#include "era/llm.hpp"
#include "era/nn.hpp"
#include "gradcheck_cases.hpp"

using namespace era;
using namespace era::ad;
using doctest::Approx;

TEST_CASE("forward examples") {
  Tape tape;
  Var s = softmax_rows(tape.constant(Tensor(1, 2, {0.0, 0.0})));
  CHECK(s.value()[0] == 0.5);
  CHECK(s.value()[1] == 0.5);

  Tape t2;
  Var x = t2.variable(Tensor::scalar(3.0));
  t2.backward(square(x));
  CHECK(x.grad().item() == 6.0);

  Tape t3;
  Var v = t3.variable(Tensor(2, 5, 1.0));
  t3.backward(mean(v));
  for (double g : v.grad().values()) CHECK(g == Approx(0.1));
}

TEST_CASE("tape contracts") {
  Tape tape;
  Var x = tape.variable(Tensor(1, 3, {0.1, 0.2, 0.3}));
  Var d = detach(x);
  Var loss = add(sum(exp(d)), sum(square(x)));
  tape.backward(loss);
  CHECK(x.grad()[0] == Approx(0.2));
  CHECK_THROWS(tape.backward(loss));

  Tape t2;
  Var y = t2.variable(Tensor(1, 2, {1.0, 2.0}));
  Var only_detached = sum(exp(detach(y)));
  t2.backward(only_detached);
  for (double g : y.grad().values()) CHECK(g == 0.0);

  Tape t3;
  Var a = t3.variable(Tensor(2, 3));
  Var b = t3.variable(Tensor(2, 2));
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
  CHECK_THROWS(t3.backward(a));
}

TEST_CASE("composite log-softmax matches finite differences") {
  const ScalarFn f = [](Tape&, std::span<const Var> in) { return slice_cols(log_softmax_rows(in[0]), 0, 1); };
  const auto r = gradient_check(f, {Tensor(1, 4, {0.3, -1.2, 2.0, 0.1})});
  CHECK(r.max_rel_error <= 1e-5);
}

TEST_CASE("gradient checks on every op") {
  for (const auto& c : testing::op_gradient_cases()) {
    INFO(c.name << ": max rel error " << c.result.max_rel_error);
    CHECK(c.result.max_rel_error <= 1e-4);
  }
}

TEST_CASE("straight-through clip passes the gradient") {
  Tape tape;
  Var x = tape.variable(Tensor(1, 3, {-3.0, 0.2, 4.0}));
  Var y = clip_straight_through(x, -1.0, 1.0);
  CHECK(y.value()[0] == -1.0);
  CHECK(y.value()[2] == 1.0);
  tape.backward(sum(y));
  for (double g : x.grad().values()) CHECK(g == 1.0);
}

TEST_CASE("parameters receive gradients") {
  Parameter p("w", Tensor(1, 2, {1.0, 2.0}));
  {
    Tape tape;
    tape.backward(sum(square(tape.parameter(p))));
  }
  CHECK(p.grad[0] == 2.0);
  CHECK(p.grad[1] == 4.0);
  Parameter frozen("f", Tensor(1, 1, 1.0));
  Tape tape;
  tape.backward(sum(square(tape.parameter(frozen, false))));
  CHECK(frozen.grad[0] == 0.0);
}

TEST_CASE("end-to-end compositions") {
  for (const auto& c : testing::composition_gradient_cases()) {
    INFO(c.name << ": max rel error " << c.result.max_rel_error);
    CHECK(c.result.max_rel_error <= 1e-4);
  }
}
