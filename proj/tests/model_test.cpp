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
#include <filesystem>
#include <random>
#include <vector>

#include "gmrl/gradcheck.hpp"
#include "gmrl/model.hpp"
#include "gmrl/snapshot.hpp"
#include "gtest/gtest.h"

namespace gmrl {
namespace {

Tensor random_tensor(const Shape& s, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(s);
  for (Index i = 0; i < t.size(); ++i) t[i] = n(rng);
  return t;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.input_len = 8;
  c.horizon = 2;
  c.locations = 3;
  c.sources = 2;
  c.layers = 2;
  c.components = 3;
  c.embed_dim = 4;
  c.channels = 8;
  c.memory_slots = 2;
  c.memory_dim = 6;
  c.dilations = {2, 4};
  return c;
}

Tensor& param(GmrlModel& m, const std::string& id) { return m.params().get(id).value; }

TEST(ModelConfigTest, RejectsChannelsNotAboveEmbedding) {
  ModelConfig c = tiny_config();
  c.channels = 4;
  EXPECT_THROW(GmrlModel{c}, ConfigError);
  c.channels = 0;  // 2 * d_z
  EXPECT_EQ(c.d_k(), 8);
  EXPECT_NO_THROW(GmrlModel{c});
}

TEST(ModelConfigTest, RejectsTooFewDilationsAndNegativeLambda) {
  ModelConfig c = tiny_config();
  c.layers = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.lambda = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelConfigTest, JsonRoundTripAndUnknownKeys) {
  ModelConfig c = tiny_config();
  c.kl_mode = KlMode::kPerSample;
  c.skip_fusion = SkipFusion::kConcatProject;
  c.cluster_mode = ClusterMode::kNearestCenter;
  const ModelConfig back = ModelConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  nlohmann::json j = c.to_json();
  j["hidden"] = 3;
  EXPECT_THROW(ModelConfig::from_json(j), ConfigError);
  j = c.to_json();
  j["kl_mode"] = "sometimes";
  EXPECT_THROW(ModelConfig::from_json(j), ConfigError);
}

TEST(BuildInputTest, ZeroEmbeddingCarriesValuesInFirstChannel) {
  GmrlModel m(tiny_config());
  m.initialize(1);
  param(m, "ttse.value_w").array() = 0.0;
  param(m, "ttse.value_w")[0] = 1.0;
  for (const char* id : {"ttse.time", "ttse.location", "ttse.source"}) param(m, id).array() = 0.0;
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor(Shape{2, 8, 3, 2}, rng);
  Graph g;
  const Tensor h = m.build_input(g, x).value();
  ASSERT_EQ(h.shape(), (Shape{2, 8, 3, 2, 8}));
  for (Index i = 0; i < x.size(); ++i) {
    EXPECT_EQ(h[i * 8], x[i]);
    for (Index c = 1; c < 8; ++c) EXPECT_EQ(h[i * 8 + c], 0.0);
  }
}

TEST(BuildInputTest, EmbeddingIsAdditiveAcrossTables) {
  GmrlModel m(tiny_config());
  m.initialize(3);
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor(Shape{1, 8, 3, 2}, rng);
  Graph g;
  const Tensor before = m.build_input(g, x).value();
  const Tensor& et = param(m, "ttse.time");
  const Tensor& el = param(m, "ttse.location");
  const Tensor& es = param(m, "ttse.source");
  for (Index t = 0; t < 8; ++t)
    for (Index l = 0; l < 3; ++l)
      for (Index s = 0; s < 2; ++s)
        for (Index z = 0; z < 4; ++z) {
          EXPECT_NEAR(before.at({0, t, l, s, 4 + z}), et.at({t, z}) + el.at({l, z}) + es.at({s, z}),
                      1e-15);
        }
  const std::vector<double> shift{0.5, -1.0, 2.0, 0.25};
  for (Index l = 0; l < 3; ++l)
    for (Index z = 0; z < 4; ++z) param(m, "ttse.location").at({l, z}) += shift[z];
  Graph g2;
  const Tensor after = m.build_input(g2, x).value();
  for (Index i = 0; i < after.size(); ++i) {
    const Index ch = i % 8;
    EXPECT_NEAR(after[i] - before[i], ch < 4 ? 0.0 : shift[ch - 4], 1e-14);
  }
}

TEST(BuildInputTest, ChannelCountIndependentOfGrid) {
  for (Index t : {1, 5}) {
    for (Index l : {1, 4}) {
      ModelConfig c = tiny_config();
      c.input_len = t;
      c.locations = l;
      c.sources = 3;
      GmrlModel m(c);
      m.initialize(5);
      Graph g;
      EXPECT_EQ(m.build_input(g, Tensor(Shape{2, t, l, 3})).shape(), (Shape{2, t, l, 3, 8}));
    }
  }
}

TEST(ForwardTest, PredictionShapeFollowsHorizon) {
  for (Index o : {1, 2, 3}) {
    ModelConfig c = tiny_config();
    c.horizon = o;
    GmrlModel m(c);
    m.initialize(6);
    std::mt19937_64 rng(7);
    EXPECT_EQ(m.predict(random_tensor(Shape{2, 8, 3, 2}, rng)).shape(), (Shape{2, o, 3, 2}));
  }
}

TEST(ForwardTest, ZeroHeadWeightsEmitOutputBias) {
  GmrlModel m(tiny_config());
  m.initialize(8);
  param(m, "head.w1").array() = 0.0;
  param(m, "head.b1").array() = 0.0;
  param(m, "head.w2").array() = 0.0;
  param(m, "head.b2") = Tensor(Shape{2}, {0.75, -2.5});
  std::mt19937_64 rng(9);
  const Tensor y = m.predict(random_tensor(Shape{2, 8, 3, 2}, rng));
  for (Index b = 0; b < 2; ++b)
    for (Index o = 0; o < 2; ++o)
      for (Index p = 0; p < 6; ++p) EXPECT_EQ(y[(b * 2 + o) * 6 + p], o == 0 ? 0.75 : -2.5);
}

TEST(ForwardTest, ShapeTraceCoversEveryRepresentation) {
  ModelConfig c = tiny_config();
  GmrlModel m(c);
  m.initialize(10);
  Graph g;
  const ForwardResult r = m.forward(g, Tensor(Shape{2, 8, 3, 2}));
  const std::vector<std::pair<std::string, Shape>> want{
      {"X", Shape{8, 3, 2}},          {"E", Shape{8, 3, 2, 4}},       {"H", Shape{8, 3, 2, 8}},
      {"H_hat@1", Shape{8, 3, 2, 8}}, {"H_gm@1", Shape{8, 3, 2, 16}}, {"H_te@1", Shape{8, 3, 2, 8}},
      {"H_hat@2", Shape{8, 3, 2, 8}}, {"H_gm@2", Shape{8, 3, 2, 16}}, {"H_te@2", Shape{8, 3, 2, 8}},
      {"H_sc", Shape{3, 2, 8}},       {"H_aug", Shape{3, 2, 14}},     {"Y_hat", Shape{2, 3, 2}}};
  ASSERT_EQ(r.trace.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    EXPECT_EQ(r.trace[i].first, want[i].first);
    EXPECT_EQ(r.trace[i].second, want[i].second) << want[i].first;
  }
}

TEST(ForwardTest, ClusterTotalIsLayerMean) {
  GmrlModel m(tiny_config());
  m.initialize(11);
  std::mt19937_64 rng(12);
  Graph g;
  const ForwardResult r = m.forward(g, random_tensor(Shape{2, 8, 3, 2}, rng));
  ASSERT_EQ(r.mixture.size(), 2u);
  const double mean =
      0.5 * (r.mixture[0].loss.total.value().item() + r.mixture[1].loss.total.value().item());
  EXPECT_NEAR(r.cluster_total.value().item(), mean, 1e-14);
  EXPECT_NEAR(r.cluster_total.value().item(),
              r.cluster_kl.value().item() + r.cluster_nll.value().item(), 1e-12);
}

TEST(ForwardTest, WithoutExtractorEncoderSeesDuplicatedInput) {
  ModelConfig c = tiny_config();
  c.use_gmre = false;
  GmrlModel m(c);
  m.initialize(13);
  EXPECT_FALSE(m.params().contains("layer0.gmre.w_alpha"));
  std::mt19937_64 rng(14);
  const Tensor x = random_tensor(Shape{2, 8, 3, 2}, rng);
  Graph g;
  const ForwardResult r = m.forward(g, x);
  EXPECT_EQ(r.cluster_total.value().item(), 0.0);
  for (const auto& [name, shape] : r.trace) EXPECT_EQ(name.rfind("H_hat", 0), std::string::npos);

  ParameterSet ref_params;
  TeLayer ref(ref_params, "te", TeConfig{8, 2, 2});
  for (const char* id : {"w_filter", "w_gate", "w_out", "b_out"}) {
    ref_params.get(std::string("te.") + id).value = param(m, std::string("layer0.te.") + id);
  }
  Graph g2;
  Var h = reshape(m.build_input(g2, x), Shape{2, 8, 6, 8});
  const Tensor want = ref.forward(concat({h, h}, 3)).out.value();
  const Tensor& got = r.temporal[0].value();
  ASSERT_EQ(got.size(), want.size());
  for (Index i = 0; i < want.size(); ++i) EXPECT_EQ(got[i], want[i]);
}

TEST(ForwardTest, AblationConfigsRunFromConfigAlone) {
  std::mt19937_64 rng(15);
  const Tensor x = random_tensor(Shape{2, 8, 3, 2}, rng);
  const Tensor y = random_tensor(Shape{2, 2, 3, 2}, rng);
  std::vector<ModelConfig> configs(5, tiny_config());
  configs[1].use_gmre = false;
  configs[2].cluster_mode = ClusterMode::kNearestCenter;
  configs[3].use_hra = false;
  configs[4].lambda = 0.0;
  for (const ModelConfig& c : configs) {
    GmrlModel m(c);
    m.initialize(16);
    Graph g;
    auto [r, loss] = m.loss(g, x, y);
    EXPECT_TRUE(std::isfinite(loss.total.value().item()));
    g.backward(loss.total, m.params());
  }
  GmrlModel no_hra(configs[3]);
  EXPECT_EQ(no_hra.params().get("head.w1").value.shape(), (Shape{8, 8}));
  no_hra.initialize(1);
  Graph g;
  const ForwardResult r = no_hra.forward(g, x);
  ASSERT_EQ(r.augmented.value().size(), r.skip.value().size());
  for (Index i = 0; i < r.skip.value().size(); ++i) EXPECT_EQ(r.augmented.value()[i], r.skip.value()[i]);
}

TEST(ForwardTest, SameSeedGivesIdenticalOutputs) {
  std::mt19937_64 rng(17);
  const Tensor x = random_tensor(Shape{2, 8, 3, 2}, rng);
  GmrlModel a(tiny_config()), b(tiny_config());
  a.initialize(42);
  b.initialize(42);
  const Tensor ya = a.predict(x), yb = b.predict(x);
  for (Index i = 0; i < ya.size(); ++i) EXPECT_EQ(ya[i], yb[i]);
}

TEST(TotalLossTest, RegressionTermExamples) {
  Graph g;
  Var cluster = g.constant(Tensor::scalar(3.0));
  Tensor y = Tensor::constant(Shape{1, 1, 2, 3}, 2.0);
  Var yv = g.constant(y);
  EXPECT_EQ(total_loss(yv, yv, cluster, 0.0).total.value().item(), 0.0);
  Tensor off = y;
  off.array() += 1.0;
  const LossParts unit = total_loss(g.constant(off), yv, cluster, 0.0);
  EXPECT_EQ(unit.regression.value().item(), 6.0);
  EXPECT_EQ(unit.total.value().item(), 6.0);
  EXPECT_DOUBLE_EQ(total_loss(g.constant(off), yv, cluster, 0.5).total.value().item(), 6.0 + 1.5);
  EXPECT_THROW(total_loss(yv, yv, cluster, -1.0), ConfigError);
}

TEST(TotalLossTest, RegressionIsAveragedOverBatch) {
  Graph g;
  Tensor a(Shape{2, 1, 1, 1}, {1.0, 2.0}), b(Shape{2, 1, 1, 1}, {0.0, 0.0});
  EXPECT_DOUBLE_EQ(total_loss(g.constant(a), g.constant(b), g.constant(Tensor::scalar(0.0)), 0.5)
                       .regression.value()
                       .item(),
                   (1.0 + 4.0) / 2.0);
}

TEST(MetricsTest, HandComputedResiduals) {
  MetricAccumulator zero({"a"}, 1);
  Tensor y(Shape{2, 1, 1, 1}, {1.0, 5.0});
  zero.add(y, y);
  EXPECT_EQ(zero.report("x").mae(), 0.0);
  EXPECT_EQ(zero.report("x").rmse(), 0.0);

  MetricAccumulator constant({"a"}, 1);
  Tensor shifted(Shape{2, 1, 1, 1}, {3.0, 7.0});
  constant.add(shifted, y);
  EXPECT_DOUBLE_EQ(constant.report("x").mae(), 2.0);
  EXPECT_DOUBLE_EQ(constant.report("x").rmse(), 2.0);

  MetricAccumulator mixed({"a"}, 1);
  mixed.add(Tensor(Shape{2, 1, 1, 1}, {1.0, 7.0}), y);
  EXPECT_DOUBLE_EQ(mixed.report("x").mae(), (0.0 + 2.0) / 2.0);
  EXPECT_DOUBLE_EQ(mixed.report("x").rmse(), std::sqrt((0.0 + 4.0) / 2.0));
  EXPECT_THROW(MetricAccumulator({"a"}, 1).report("x"), std::invalid_argument);
}

TEST(MetricsTest, ReportHasOneCellPerSourceAndHorizon) {
  std::mt19937_64 rng(18);
  MetricAccumulator acc({"taxi", "bike"}, 3);
  acc.add(random_tensor(Shape{4, 3, 5, 2}, rng), random_tensor(Shape{4, 3, 5, 2}, rng));
  const ForecastReport r = acc.report("run");
  EXPECT_EQ(r.cells.size(), 2u * 3u);
  EXPECT_EQ(r.horizons.size(), 3u);
  for (const MetricCell& c : r.cells) EXPECT_LE(c.mae, c.rmse);
  EXPECT_EQ(r.cell("bike", 3).count, 4 * 5);
  EXPECT_EQ(r.to_json()["cells"].size(), 6u);
  EXPECT_NE(r.to_text().find("taxi"), std::string::npos);
}

TEST(EvaluateTest, ScoresDenormalisedValues) {
  ModelConfig c = tiny_config();
  GmrlModel m(c);
  m.initialize(19);
  param(m, "head.w1").array() = 0.0;
  param(m, "head.b1").array() = 0.0;
  param(m, "head.w2").array() = 0.0;
  param(m, "head.b2").array() = 0.0;  // normalised forecast 0 -> denormalised mean
  NormStats stats;
  stats.mean = 10.0;
  stats.std = 2.0;
  std::vector<WindowedSample> samples(3);
  for (auto& s : samples) {
    s.x = Tensor(Shape{8, 3, 2});
    s.y = Tensor::constant(Shape{2, 3, 2}, 1.0);  // denormalised 12
  }
  const ForecastReport r = evaluate(m, samples, stats, {"a", "b"}, 2);
  EXPECT_DOUBLE_EQ(r.mae(), 2.0);
  EXPECT_DOUBLE_EQ(r.rmse(), 2.0);
  EXPECT_THROW(evaluate(m, {}, stats, {"a", "b"}, 2), std::invalid_argument);
}

TEST(CheckpointTest, RoundTripsAndRejectsMismatch) {
  const auto dir = std::filesystem::temp_directory_path() / "gmrl_model_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "ckpt.bin";
  GmrlModel a(tiny_config());
  a.initialize(20);
  save_checkpoint(path, a, {{"seed", 20}});
  const nlohmann::json manifest = read_manifest(path);
  EXPECT_EQ(manifest["seed"], 20);
  EXPECT_EQ(manifest["model"], tiny_config().to_json());
  EXPECT_EQ(manifest["parameters"].size(), a.params().size());

  GmrlModel b(tiny_config());
  b.initialize(21);
  load_parameters(path, b);
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    EXPECT_TRUE((a.params()[i].value.array() == b.params()[i].value.array()).all());
  }
  ModelConfig other = tiny_config();
  other.memory_dim = 5;
  GmrlModel c(other);
  EXPECT_THROW(load_parameters(path, c), FormatError);
  std::filesystem::remove_all(dir);
}

TEST(ModelGradientTest, SampledEntriesMatchFiniteDifferences) {
  for (SkipFusion fusion : {SkipFusion::kSum, SkipFusion::kConcatProject}) {
    ModelConfig c = tiny_config();
    c.skip_fusion = fusion;
    GmrlModel m(c);
    m.initialize(30);
    std::mt19937_64 rng(22);
    const Tensor x = random_tensor(Shape{2, 8, 3, 2}, rng);
    const Tensor y = random_tensor(Shape{2, 2, 3, 2}, rng);
    std::uint64_t state = 0;
    LossFn fn = [&](Graph& g) {
      auto [r, loss] = m.loss(g, x, y);
      state = r.discrete_state;
      return loss.total;
    };
    GradCheckOptions opts;
    opts.max_entries_per_parameter = 12;
    opts.discrete_state = [&] { return state; };
    const GradCheckReport report = grad_check(fn, m.params(), opts);
    EXPECT_TRUE(report.passed()) << report.to_text();
    for (const ParameterCheck& p : report.parameters) EXPECT_GT(p.entries_checked, 0) << p.id;
  }
}

}  // namespace
}  // namespace gmrl
