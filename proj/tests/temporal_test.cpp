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


#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "gmrl/gradcheck.hpp"
#include "gmrl/temporal.hpp"
#include "gtest/gtest.h"

namespace gmrl {
namespace {

Tensor random_tensor(const Shape& s, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(s);
  for (Index i = 0; i < t.size(); ++i) t[i] = n(rng);
  return t;
}

// Loop-level reference: y[b,t,p,o] = sum_j sum_c k[j,c,o] * x[b, t - d(K-1-j), p, c].
Tensor conv_oracle(const Tensor& x, const Tensor& k, Index d) {
  const Index b = x.dim(0), t = x.dim(1), p = x.dim(2), cin = x.dim(3);
  const Index ks = k.dim(0), cout = k.dim(2);
  Tensor y(Shape{b, t, p, cout});
  for (Index bi = 0; bi < b; ++bi)
    for (Index ti = 0; ti < t; ++ti)
      for (Index pi = 0; pi < p; ++pi)
        for (Index o = 0; o < cout; ++o) {
          double acc = 0.0;
          for (Index j = 0; j < ks; ++j) {
            const Index src = ti - d * (ks - 1 - j);
            if (src < 0) continue;
            for (Index c = 0; c < cin; ++c) acc += k.at({j, c, o}) * x.at({bi, src, pi, c});
          }
          y.at({bi, ti, pi, o}) = acc;
        }
  return y;
}

Tensor te_oracle(const Tensor& x, const Tensor& wf, const Tensor& wg, const Tensor& wo,
                 const Tensor& bo, Index d) {
  const Tensor f = conv_oracle(x, wf, d), gt = conv_oracle(x, wg, d);
  const Index c = wo.dim(0), rows = f.size() / c;
  Tensor y(f.shape());
  for (Index r = 0; r < rows; ++r)
    for (Index o = 0; o < c; ++o) {
      double acc = bo[o];
      for (Index i = 0; i < c; ++i) {
        const double z = std::tanh(f[r * c + i]) / (1.0 + std::exp(-gt[r * c + i]));
        acc += z * wo.at({i, o});
      }
      y[r * c + o] = acc;
    }
  return y;
}

struct TeFixture {
  ParameterSet params;
  std::unique_ptr<TeLayer> layer;
  TeFixture(Index c, Index d, std::uint64_t seed = 1) {
    layer = std::make_unique<TeLayer>(params, "te", TeConfig{c, 2, d});
    params.initialize(seed);
  }
  Tensor& value(const char* id) { return params.get(std::string("te.") + id).value; }
};

TEST(TeLayerTest, MatchesLoopOracle) {
  TeFixture f(3, 2);
  std::mt19937_64 rng(1);
  f.value("b_out") = random_tensor(Shape{3}, rng);
  Tensor x = random_tensor(Shape{2, 7, 3, 6}, rng);
  Graph g;
  TeOutput out = f.layer->forward(g.constant(x));
  const Tensor want = te_oracle(x, f.value("w_filter"), f.value("w_gate"), f.value("w_out"),
                                f.value("b_out"), 2);
  ASSERT_EQ(out.out.shape(), (Shape{2, 7, 3, 3}));
  for (Index i = 0; i < want.size(); ++i) EXPECT_NEAR(out.out.value()[i], want[i], 1e-12);
}

TEST(TeLayerTest, ZeroGateKernelHalvesFilterPath) {
  TeFixture f(2, 4);
  f.value("w_gate").array() = 0.0;
  std::mt19937_64 rng(2);
  Tensor x = random_tensor(Shape{1, 9, 2, 4}, rng);
  Graph g;
  TeOutput out = f.layer->forward(g.constant(x));
  for (Index i = 0; i < out.gate.value().size(); ++i) EXPECT_EQ(out.gate.value()[i], 0.5);
  const Tensor want = te_oracle(x, f.value("w_filter"), f.value("w_gate"), f.value("w_out"),
                                f.value("b_out"), 4);
  for (Index i = 0; i < want.size(); ++i) EXPECT_NEAR(out.out.value()[i], want[i], 1e-12);
}

TEST(TeLayerTest, ZeroKernelsGiveZeroOutput) {
  TeFixture f(3, 2);
  f.value("w_filter").array() = 0.0;
  std::mt19937_64 rng(3);
  Graph g;
  TeOutput out = f.layer->forward(g.constant(random_tensor(Shape{2, 5, 2, 6}, rng)));
  for (Index i = 0; i < out.out.value().size(); ++i) EXPECT_EQ(out.out.value()[i], 0.0);
}

TEST(TeLayerTest, GateStaysInsideOpenUnitInterval) {
  TeFixture f(4, 8);
  std::mt19937_64 rng(4);
  Graph g;
  TeOutput out = f.layer->forward(g.constant(random_tensor(Shape{2, 20, 3, 8}, rng)));
  EXPECT_GT(out.gate.value().array().minCoeff(), 0.0);
  EXPECT_LT(out.gate.value().array().maxCoeff(), 1.0);
}

TEST(TeLayerTest, PerturbingTimeLeavesEarlierOutputsBitIdentical) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    TeFixture f(3, 1 << (1 + trial % 4), 10 + trial);
    Tensor x = random_tensor(Shape{2, 12, 2, 6}, rng);
    const Index t = static_cast<Index>(trial % 12);
    Tensor y = x;
    for (Index bi = 0; bi < 2; ++bi)
      for (Index p = 0; p < 2; ++p)
        for (Index c = 0; c < 6; ++c) y.at({bi, t, p, c}) += 3.0;
    Graph g;
    const Tensor a = f.layer->forward(g.constant(x)).out.value();
    const Tensor b = f.layer->forward(g.constant(y)).out.value();
    const Index per_step = 2 * 3;
    for (Index bi = 0; bi < 2; ++bi)
      for (Index ti = 0; ti < t; ++ti)
        for (Index j = 0; j < per_step; ++j) {
          const Index flat = (bi * 12 + ti) * per_step + j;
          ASSERT_EQ(a[flat], b[flat]) << "t=" << t << " ti=" << ti;
        }
  }
}

TEST(TeLayerTest, RejectsWrongChannelCount) {
  TeFixture f(3, 2);
  Graph g;
  EXPECT_THROW(f.layer->forward(g.constant(Tensor(Shape{1, 4, 1, 3}))), ShapeError);
}

TEST(TeLayerTest, GradientsMatchFiniteDifferences) {
  TeFixture f(2, 2, 6);
  std::mt19937_64 rng(6);
  f.value("b_out") = random_tensor(Shape{2}, rng);
  Parameter& x = f.params.add("x", Shape{2, 6, 2, 4}, InitSpec::zeros());
  x.value = random_tensor(x.value.shape(), rng);
  Parameter& probe = f.params.add("probe", Shape{2, 6, 2, 2}, InitSpec::zeros());
  probe.value = random_tensor(probe.value.shape(), rng);
  LossFn fn = [&](Graph& g) { return sum_all(mul(f.layer->forward(g.param(x)).out, g.param(probe))); };
  GradCheckOptions opts;
  opts.tolerance = 1e-6;
  const GradCheckReport report = grad_check(fn, f.params, opts);
  EXPECT_TRUE(report.passed()) << report.to_text();
}

TEST(ReceptiveFieldTest, FormulaValues) {
  const std::vector<Index> dil{2, 4, 8, 16};
  const std::vector<Index> expected{3, 7, 15, 31};
  for (std::size_t depth = 1; depth <= 4; ++depth) {
    Index sum = 0;
    for (std::size_t i = 0; i < depth; ++i) sum += dil[i];
    EXPECT_EQ(receptive_field(2, dil, depth), 1 + sum);
    EXPECT_EQ(receptive_field(2, dil, depth), expected[depth - 1]);
  }
  EXPECT_EQ(receptive_field(1, dil, 4), 1);
  EXPECT_THROW(receptive_field(2, dil, 5), ShapeError);
}

// Empirical field: span back to the earliest input step whose perturbation
// moves the last output. Kernel-2 taps reach only sums of dilations, so the
// influencing steps are sparse inside that span.
TEST(ReceptiveFieldTest, MatchesPerturbationOfStackedLayers) {
  const std::vector<Index> dil{2, 4, 8, 16};
  const Index c = 2, t = 40;
  ParameterSet params;
  std::vector<TeLayer> layers;
  for (std::size_t i = 0; i < dil.size(); ++i) {
    layers.emplace_back(params, "te" + std::to_string(i), TeConfig{c, 2, dil[i]});
  }
  params.initialize(7);
  std::mt19937_64 rng(8);
  const Tensor x = random_tensor(Shape{1, t, 1, 2 * c}, rng);
  auto last_outputs = [&](const Tensor& in, std::size_t depth) {
    Graph g;
    Var h = g.constant(in);
    Var out;
    for (std::size_t i = 0; i < depth; ++i) {
      out = layers[i].forward(h).out;
      h = concat({out, out}, 3);
    }
    return slice(out, 1, t - 1, 1).value();
  };
  for (std::size_t depth = 1; depth <= dil.size(); ++depth) {
    const Tensor base = last_outputs(x, depth);
    Index earliest = t;
    Index influencing = 0;
    for (Index ti = 0; ti < t; ++ti) {
      Tensor y = x;
      for (Index ci = 0; ci < 2 * c; ++ci) y.at({0, ti, 0, ci}) += 1.0;
      if (!(last_outputs(y, depth).array() == base.array()).all()) {
        earliest = std::min(earliest, ti);
        ++influencing;
      }
    }
    EXPECT_EQ(t - earliest, receptive_field(2, dil, depth)) << "depth " << depth;
    EXPECT_EQ(influencing, Index{1} << depth);
  }
}

}  // namespace
}  // namespace gmrl
