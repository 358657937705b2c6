// Copyright 2026 The GMRL Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gmrl/autodiff.hpp"
#include "gmrl/gradcheck.hpp"
#include "gmrl/snapshot.hpp"
#include "gtest/gtest.h"

namespace gmrl {
namespace {

Var vec(Graph& g, std::initializer_list<double> v) {
  return g.constant(Tensor(Shape{static_cast<Index>(v.size())}, v));
}

std::vector<double> values(const Var& v) {
  return {v.value().data(), v.value().data() + v.value().size()};
}

TEST(ShapeTest, RejectsNonPositiveExtentsAndExcessRank) {
  EXPECT_THROW(Shape({3, 0}), ShapeError);
  EXPECT_THROW(Shape({1, 1, 1, 1, 1, 1}), ShapeError);
  EXPECT_EQ(Shape({2, 3, 4}).numel(), 24);
  EXPECT_EQ(Shape().numel(), 1);
  EXPECT_EQ(Shape({2, 3, 4}).strides(), (std::vector<Index>{12, 4, 1}));
}

TEST(PrimitiveTest, ConvIdentityTapReproducesInput) {
  Graph g;
  Tensor x(Shape{1, 8, 1, 1});
  for (Index t = 0; t < 8; ++t) x[t] = static_cast<double>(t) * 0.5 - 1.0;
  Var in = g.constant(x);
  Var k = g.constant(Tensor(Shape{2, 1, 1}, {0.0, 1.0}));
  Var out = dilated_causal_conv1d(in, k, 2);
  EXPECT_EQ(values(out), values(in));
}

TEST(PrimitiveTest, ConvShiftKernelPadsWithZero) {
  Graph g;
  Var in = g.constant(Tensor(Shape{1, 4, 1, 1}, {1, 2, 3, 4}));
  Var k = g.constant(Tensor(Shape{2, 1, 1}, {1.0, 0.0}));
  Var out = dilated_causal_conv1d(in, k, 1);
  EXPECT_EQ(values(out), (std::vector<double>{0, 1, 2, 3}));
}

TEST(PrimitiveTest, SoftmaxOfLogTwo) {
  Graph g;
  Var s = softmax(vec(g, {std::log(2.0), 0.0, 0.0}), 0);
  EXPECT_NEAR(s.value()[0], 0.5, 1e-15);
  EXPECT_NEAR(s.value()[1], 0.25, 1e-15);
  EXPECT_NEAR(s.value()[2], 0.25, 1e-15);
}

TEST(PrimitiveTest, ShapeMismatchNamesOperationAndShapes) {
  Graph g;
  Var a = g.constant(Tensor(Shape{2, 3}));
  Var b = g.constant(Tensor(Shape{3}));
  try {
    add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos);
    EXPECT_NE(msg.find("(2, 3)"), std::string::npos);
    EXPECT_NE(msg.find("(3)"), std::string::npos);
  }
}

TEST(BackwardTest, LinearSumGivesOnes) {
  ParameterSet ps;
  Parameter& p = ps.add("p", Shape{3}, InitSpec::constant(0.7));
  ps.initialize(1);
  Graph g;
  g.backward(sum_all(g.param(p)), ps);
  EXPECT_EQ(values(g.constant(p.grad)), (std::vector<double>{1, 1, 1}));
}

TEST(BackwardTest, QuadraticGivesTwiceValue) {
  ParameterSet ps;
  Parameter& p = ps.add("p", Shape{2}, InitSpec::zeros());
  p.value = Tensor(Shape{2}, {1.0, 2.0});
  Graph g;
  Var v = g.param(p);
  g.backward(sum_all(mul(v, v)), ps);
  EXPECT_DOUBLE_EQ(p.grad[0], 2.0);
  EXPECT_DOUBLE_EQ(p.grad[1], 4.0);
}

TEST(BackwardTest, NonScalarLossRejected) {
  ParameterSet ps;
  Parameter& p = ps.add("p", Shape{2}, InitSpec::zeros());
  Graph g;
  EXPECT_THROW(g.backward(exp(g.param(p))), ShapeError);
}

TEST(BackwardTest, GradientsZeroedEachCall) {
  ParameterSet ps;
  Parameter& p = ps.add("p", Shape{2}, InitSpec::constant(1.0));
  ps.initialize(0);
  for (int i = 0; i < 3; ++i) {
    Graph g;
    g.backward(sum_all(g.param(p)), ps);
  }
  EXPECT_DOUBLE_EQ(p.grad[0], 1.0);
}

TEST(GradCheckTest, QuadraticIsExactUpToRoundoff) {
  ParameterSet ps;
  Parameter& p = ps.add("p", Shape{4}, InitSpec::uniform(2.0));
  ps.initialize(3);
  auto fn = [&](Graph& g) { return sum_all(square(g.param(p))); };
  const GradCheckReport r = grad_check(fn, ps, {.delta = 1e-4, .tolerance = 1e-8});
  EXPECT_TRUE(r.passed()) << r.to_text();
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheckTest, UnusedParameterHasZeroGradient) {
  ParameterSet ps;
  Parameter& used = ps.add("used", Shape{2}, InitSpec::uniform(1.0));
  Parameter& unused = ps.add("unused", Shape{3}, InitSpec::uniform(1.0));
  ps.initialize(5);
  auto fn = [&](Graph& g) { return sum_all(tanh(g.param(used))); };
  const GradCheckReport r = grad_check(fn, ps, {});
  EXPECT_TRUE(r.passed());
  EXPECT_EQ(r.parameters[1].max_rel_error, 0.0);
  EXPECT_EQ(r.parameters[1].numeric, 0.0);
  for (Index i = 0; i < 3; ++i) EXPECT_EQ(unused.grad[i], 0.0);
}

TEST(GradCheckTest, DetectsNonDeterministicLoss) {
  ParameterSet ps;
  Parameter& p = ps.add("p", Shape{1}, InitSpec::constant(1.0));
  ps.initialize(0);
  int calls = 0;
  auto fn = [&](Graph& g) {
    ++calls;
    return add_scalar(sum_all(g.param(p)), 1e-3 * calls);
  };
  EXPECT_THROW(grad_check(fn, ps, {}), NumericError);
}

TEST(GradCheckTest, SkipsEntriesThatCrossADiscreteBoundary) {
  // Loss switches branch at x = 1; entry 0 sits within delta of the switch.
  ParameterSet ps;
  Parameter& p = ps.add("p", Shape{2}, InitSpec::zeros());
  p.value = Tensor(Shape{2}, {1.0 + 5e-5, 3.0});
  std::uint64_t state = 0;
  auto fn = [&](Graph& g) {
    Var v = g.param(p);
    state = v.value()[0] > 1.0;
    return state ? scale(sum_all(square(v)), 10.0) : sum_all(square(v));
  };
  const GradCheckReport unguarded = grad_check(fn, ps, {});
  EXPECT_FALSE(unguarded.passed());
  GradCheckOptions opts;
  opts.discrete_state = [&] { return state; };
  const GradCheckReport guarded = grad_check(fn, ps, opts);
  EXPECT_TRUE(guarded.passed()) << guarded.to_text();
  EXPECT_EQ(guarded.parameters[0].entries_skipped, 1);
  EXPECT_EQ(guarded.parameters[0].entries_checked, 1);
}

// ---- finite-difference property over every primitive -------------------------

class PrimitiveFdTest : public ::testing::Test {
 protected:
  std::mt19937_64 rng{20261016};

  Index extent() { return std::uniform_int_distribution<Index>(1, 4)(rng); }

  Shape random_shape(std::size_t min_rank, std::size_t max_rank) {
    const std::size_t rank = std::uniform_int_distribution<std::size_t>(min_rank, max_rank)(rng);
    std::vector<Index> d(rank);
    for (auto& e : d) e = extent();
    return Shape(d);
  }

  // Fills a parameter with values in [-2, 2], optionally kept away from zero.
  void fill(Parameter& p, double min_abs = 0.0) {
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (Index i = 0; i < p.value.size(); ++i) {
      double v;
      do v = u(rng);
      while (std::abs(v) < min_abs);
      p.value[i] = v;
    }
  }

  // Checks the primitive `op` applied to the parameters in `ps` by
  // contracting its output against a fixed random tensor.
  void check(ParameterSet& ps, const std::function<Var(Graph&, std::vector<Var>&)>& op,
             const char* name) {
    Tensor weights;
    bool first = true;
    auto fn = [&](Graph& g) {
      std::vector<Var> in;
      for (std::size_t i = 0; i < ps.size(); ++i) in.push_back(g.param(ps[i]));
      Var out = op(g, in);
      if (first) {
        weights = Tensor(out.shape());
        std::uniform_real_distribution<double> u(-2.0, 2.0);
        for (Index i = 0; i < weights.size(); ++i) weights[i] = u(rng);
        first = false;
      }
      return sum_all(mul(out, g.constant(weights)));
    };
    const GradCheckReport r =
        grad_check(fn, ps, {.delta = 1e-4, .tolerance = 1e-6, .abs_floor = 1e-2});
    EXPECT_TRUE(r.passed()) << name << "\n" << r.to_text();
  }

  template <typename Build>
  void repeat(Build build, int cases = 100) {
    for (int c = 0; c < cases; ++c) build();
  }
};

TEST_F(PrimitiveFdTest, Elementwise) {
  using Op = std::function<Var(Var, Var)>;
  const std::vector<std::pair<const char*, Op>> binary = {
      {"add", [](Var a, Var b) { return add(a, b); }},
      {"sub", [](Var a, Var b) { return sub(a, b); }},
      {"mul", [](Var a, Var b) { return mul(a, b); }},
      {"div", [](Var a, Var b) { return div(a, b); }},
  };
  for (const auto& [name, op] : binary) {
    repeat([&] {
      ParameterSet ps;
      const Shape s = random_shape(1, 3);
      fill(ps.add("a", s, {}));
      fill(ps.add("b", s, {}), 0.5);
      check(ps, [&](Graph&, std::vector<Var>& in) { return op(in[0], in[1]); }, name);
    });
  }
  using Un = std::function<Var(Var)>;
  const std::vector<std::tuple<const char*, Un, double>> unary_ops = {
      {"scale", [](Var x) { return scale(x, -1.7); }, 0.0},
      {"add_scalar", [](Var x) { return add_scalar(x, 0.3); }, 0.0},
      {"exp", [](Var x) { return exp(x); }, 0.0},
      {"log", [](Var x) { return log(square(x)); }, 0.3},
      {"log_clamped", [](Var x) { return log_clamped(square(x), 1e-12); }, 0.3},
      {"tanh", [](Var x) { return tanh(x); }, 0.0},
      {"sigmoid", [](Var x) { return sigmoid(x); }, 0.0},
      {"relu", [](Var x) { return relu(x); }, 1e-2},
      {"square", [](Var x) { return square(x); }, 0.0},
  };
  for (const auto& [name, op, min_abs] : unary_ops) {
    repeat([&, op = op, min_abs = min_abs, name = name] {
      ParameterSet ps;
      fill(ps.add("x", random_shape(1, 3), {}), min_abs);
      check(ps, [&](Graph&, std::vector<Var>& in) { return op(in[0]); }, name);
    });
  }
}

TEST_F(PrimitiveFdTest, SoftmaxFamily) {
  repeat([&] {
    ParameterSet ps;
    const Shape s = random_shape(1, 3);
    const std::size_t axis = std::uniform_int_distribution<std::size_t>(0, s.rank() - 1)(rng);
    fill(ps.add("x", s, {}));
    check(ps, [&](Graph&, std::vector<Var>& in) { return softmax(in[0], axis); }, "softmax");
    check(ps, [&](Graph&, std::vector<Var>& in) { return log_softmax(in[0], axis); },
          "log_softmax");
  });
}

TEST_F(PrimitiveFdTest, LinearMaps) {
  repeat([&] {
    ParameterSet ps;
    const Index m = extent(), k = extent(), n = extent();
    const bool tb = std::bernoulli_distribution(0.5)(rng);
    fill(ps.add("a", Shape{m, k}, {}));
    fill(ps.add("b", tb ? Shape{n, k} : Shape{k, n}, {}));
    check(ps, [&](Graph&, std::vector<Var>& in) { return matmul(in[0], in[1], tb); }, "matmul");
  });
  repeat([&] {
    ParameterSet ps;
    const Index in_f = extent(), out_f = extent();
    fill(ps.add("x", Shape{extent(), extent(), in_f}, {}));
    fill(ps.add("w", Shape{in_f, out_f}, {}));
    fill(ps.add("b", Shape{out_f}, {}));
    check(ps, [&](Graph&, std::vector<Var>& in) { return linear(in[0], in[1], in[2]); },
          "linear");
  });
  repeat([&] {
    ParameterSet ps;
    const Index b = extent(), n = extent(), c = extent(), k = extent();
    fill(ps.add("x", Shape{b, n, c}, {}));
    fill(ps.add("w", Shape{k, c, n}, {}));
    check(ps, [&](Graph&, std::vector<Var>& in) { return channel_linear(in[0], in[1]); },
          "channel_linear");
  });
}

TEST_F(PrimitiveFdTest, Structural) {
  repeat([&] {
    ParameterSet ps;
    const Shape s = random_shape(1, 4);
    const std::size_t axis = std::uniform_int_distribution<std::size_t>(0, s.rank() - 1)(rng);
    std::vector<Index> d2 = s.dims();
    d2[axis] = extent();
    fill(ps.add("a", s, {}));
    fill(ps.add("b", Shape(d2), {}));
    check(ps, [&](Graph&, std::vector<Var>& in) { return concat({in[0], in[1]}, axis); },
          "concat");
    const Index len = std::uniform_int_distribution<Index>(1, d2[axis])(rng);
    const Index start = std::uniform_int_distribution<Index>(0, d2[axis] - len)(rng);
    check(ps, [&](Graph&, std::vector<Var>& in) { return slice(in[1], axis, start, len); },
          "slice");
  });
  repeat([&] {
    ParameterSet ps;
    const Shape s = random_shape(1, 4);
    std::vector<std::size_t> axes;
    for (std::size_t a = 0; a < s.rank(); ++a)
      if (std::bernoulli_distribution(0.5)(rng)) axes.push_back(a);
    fill(ps.add("x", s, {}));
    check(ps, [&](Graph&, std::vector<Var>& in) { return sum(in[0], axes); }, "sum");
    check(ps, [&](Graph&, std::vector<Var>& in) { return mean(in[0], axes); }, "mean");
  });
  repeat([&] {
    ParameterSet ps;
    const Shape s = random_shape(1, 3);
    fill(ps.add("x", s, {}));
    const Index n = extent() * 2;
    std::vector<Index> idx(static_cast<std::size_t>(n));
    for (auto& i : idx) i = std::uniform_int_distribution<Index>(0, s.numel() - 1)(rng);
    check(ps, [&](Graph&, std::vector<Var>& in) { return gather(in[0], idx, Shape{n}); },
          "gather");
  });
  repeat([&] {
    ParameterSet ps;
    const Shape s = random_shape(1, 3);
    // place the input axes at random distinct positions of a rank+1..4 output
    const std::size_t out_rank =
        std::uniform_int_distribution<std::size_t>(s.rank(), std::min<std::size_t>(4, s.rank() + 2))(rng);
    std::vector<std::size_t> slots(out_rank);
    std::iota(slots.begin(), slots.end(), std::size_t{0});
    std::shuffle(slots.begin(), slots.end(), rng);
    std::vector<Index> od(out_rank);
    for (auto& e : od) e = extent();
    std::vector<std::size_t> axes(slots.begin(), slots.begin() + static_cast<long>(s.rank()));
    for (std::size_t i = 0; i < s.rank(); ++i) od[axes[i]] = s[i];
    fill(ps.add("x", s, {}));
    check(ps, [&](Graph&, std::vector<Var>& in) { return broadcast(in[0], Shape(od), axes); },
          "broadcast");
    std::vector<std::size_t> order(s.rank());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    check(ps, [&](Graph&, std::vector<Var>& in) { return permute(in[0], order); }, "permute");
    check(ps, [&](Graph&, std::vector<Var>& in) { return reshape(in[0], Shape{s.numel()}); },
          "reshape");
  });
}

TEST_F(PrimitiveFdTest, DilatedCausalConv) {
  repeat([&] {
    ParameterSet ps;
    const Index cin = extent(), cout = extent();
    const Index taps = std::uniform_int_distribution<Index>(1, 3)(rng);
    const Index dilation = std::uniform_int_distribution<Index>(1, 4)(rng);
    fill(ps.add("x", Shape{extent(), extent() + 3, extent(), cin}, {}));
    fill(ps.add("k", Shape{taps, cin, cout}, {}));
    check(ps, [&](Graph&, std::vector<Var>& in) {
      return dilated_causal_conv1d(in[0], in[1], dilation);
    }, "dilated_causal_conv1d");
  });
}

// ---- invariants --------------------------------------------------------------

TEST_F(PrimitiveFdTest, SoftmaxRowsAreDistributions) {
  repeat([&] {
    Graph g;
    const Shape s = random_shape(1, 4);
    Tensor x(s);
    std::uniform_real_distribution<double> u(-30.0, 30.0);
    for (Index i = 0; i < x.size(); ++i) x[i] = u(rng);
    const std::size_t axis = std::uniform_int_distribution<std::size_t>(0, s.rank() - 1)(rng);
    Var y = softmax(g.constant(x), axis);
    Var total = sum(y, {axis});
    for (Index i = 0; i < y.value().size(); ++i) {
      EXPECT_GE(y.value()[i], 0.0);
      EXPECT_LE(y.value()[i], 1.0);
    }
    for (Index i = 0; i < total.value().size(); ++i) EXPECT_NEAR(total.value()[i], 1.0, 1e-12);
  });
}

TEST_F(PrimitiveFdTest, ConvIsCausal) {
  repeat([&] {
    Graph g;
    const Index steps = extent() + 4;
    const Index dilation = std::uniform_int_distribution<Index>(1, 4)(rng);
    Tensor x(Shape{2, steps, 3, 2});
    Tensor k(Shape{2, 2, 3});
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (Index i = 0; i < x.size(); ++i) x[i] = u(rng);
    for (Index i = 0; i < k.size(); ++i) k[i] = u(rng);
    const Index t = std::uniform_int_distribution<Index>(0, steps - 1)(rng);
    Tensor xp = x;
    for (Index b = 0; b < 2; ++b)
      for (Index p = 0; p < 3; ++p) xp.at({b, t, p, 1}) += 1.0;
    Var y0 = dilated_causal_conv1d(g.constant(x), g.constant(k), dilation);
    Var y1 = dilated_causal_conv1d(g.constant(xp), g.constant(k), dilation);
    for (Index b = 0; b < 2; ++b)
      for (Index tt = 0; tt < t; ++tt)
        for (Index p = 0; p < 3; ++p)
          for (Index c = 0; c < 3; ++c)
            EXPECT_EQ(y0.value().at({b, tt, p, c}), y1.value().at({b, tt, p, c}));
  });
}

TEST_F(PrimitiveFdTest, ConcatThenSplitIsExact) {
  repeat([&] {
    Graph g;
    const Shape s = random_shape(1, 4);
    const std::size_t axis = std::uniform_int_distribution<std::size_t>(0, s.rank() - 1)(rng);
    std::vector<Index> d2 = s.dims();
    d2[axis] = extent();
    Tensor a(s), b{Shape(d2)};
    std::normal_distribution<double> n;
    for (Index i = 0; i < a.size(); ++i) a[i] = n(rng);
    for (Index i = 0; i < b.size(); ++i) b[i] = n(rng);
    Var c = concat({g.constant(a), g.constant(b)}, axis);
    auto parts = split(c, axis, {s[axis], d2[axis]});
    EXPECT_EQ(values(parts[0]), values(g.constant(a)));
    EXPECT_EQ(values(parts[1]), values(g.constant(b)));
  });
}

TEST(SnapshotTest, RoundTripIsBitExact) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  std::vector<NamedTensor> entries;
  entries.push_back({"scalar", Tensor::scalar(-0.0)});
  Tensor t(Shape{2, 3, 1, 2});
  for (Index i = 0; i < t.size(); ++i) t[i] = n(rng) * 1e300;
  entries.push_back({"layer.0/w", t});
  std::stringstream buf;
  write_archive(buf, entries);
  const auto back = read_archive(buf);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].name, "layer.0/w");
  EXPECT_EQ(back[1].tensor.shape(), t.shape());
  for (Index i = 0; i < t.size(); ++i) EXPECT_EQ(back[1].tensor[i], t[i]);
  EXPECT_TRUE(std::signbit(back[0].tensor[0]));
}

TEST(SnapshotTest, RejectsForeignBytes) {
  std::stringstream buf("NOTATENSORFILE");
  EXPECT_THROW(read_archive(buf), FormatError);
}

}  // namespace
}  // namespace gmrl
