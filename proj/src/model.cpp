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


#include "gmrl/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "gmrl/snapshot.hpp"

namespace gmrl {
namespace {

Shape drop_batch(const Shape& s) {
  std::vector<Index> dims = s.dims();
  dims.erase(dims.begin());
  return Shape(dims);
}

class Fnv1a {
 public:
  void mix(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h_ ^= (v >> (8 * i)) & 0xffu;
      h_ *= 0x100000001b3ull;
    }
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ull;
};

double min_abs(const Tensor& t) { return t.size() == 0 ? 0.0 : t.array().abs().minCoeff(); }

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

constexpr EnumName<ClusterMode> kClusterModes[] = {
    {ClusterMode::kGaussianPosterior, "gaussian"}, {ClusterMode::kNearestCenter, "nearest_center"}};
constexpr EnumName<KlMode> kKlModes[] = {{KlMode::kBatchAverage, "batch"},
                                         {KlMode::kPerSample, "per_sample"}};
constexpr EnumName<SkipFusion> kSkipModes[] = {{SkipFusion::kSum, "sum"},
                                               {SkipFusion::kConcatProject, "concat"}};

template <typename E, std::size_t N>
const char* enum_to_name(const EnumName<E> (&table)[N], E v) {
  for (const auto& e : table) {
    if (e.value == v) return e.name;
  }
  return "?";
}

template <typename E, std::size_t N>
E enum_from_name(const EnumName<E> (&table)[N], const std::string& key, const std::string& s) {
  std::string choices;
  for (const auto& e : table) {
    if (s == e.name) return e.value;
    choices += choices.empty() ? e.name : std::string(", ") + e.name;
  }
  throw ConfigError("model." + key + ": unknown value '" + s + "' (expected one of " + choices + ")");
}

}  // namespace

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("model." + msg);
  };
  require(input_len >= 1, "input_len must be >= 1");
  require(horizon >= 1, "horizon must be >= 1");
  require(locations >= 1 && sources >= 1, "locations and sources must be >= 1");
  require(layers >= 1, "layers must be >= 1");
  require(static_cast<std::size_t>(layers) <= dilations.size(),
          "dilations lists " + std::to_string(dilations.size()) + " rates for " +
              std::to_string(layers) + " layers");
  for (Index d : dilations) require(d >= 1, "dilations must be >= 1");
  require(components >= 1, "components must be >= 1");
  require(embed_dim >= 1, "embed_dim must be >= 1");
  require(d_k() > embed_dim, "channels (" + std::to_string(d_k()) +
                                 ") must exceed embed_dim (" + std::to_string(embed_dim) +
                                 ") to leave room for the value block");
  require(memory_slots >= 1 && memory_dim >= 1, "memory_slots and memory_dim must be >= 1");
  require(kernel_size >= 1, "kernel_size must be >= 1");
  require(epsilon > 0.0, "epsilon must be positive");
  require(lambda >= 0.0 && std::isfinite(lambda), "lambda must be a finite value >= 0");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"input_len", input_len},
          {"horizon", horizon},
          {"locations", locations},
          {"sources", sources},
          {"layers", layers},
          {"components", components},
          {"embed_dim", embed_dim},
          {"channels", d_k()},
          {"memory_slots", memory_slots},
          {"memory_dim", memory_dim},
          {"kernel_size", kernel_size},
          {"dilations", dilations},
          {"epsilon", epsilon},
          {"lambda", lambda},
          {"use_gmre", use_gmre},
          {"use_hra", use_hra},
          {"cluster_mode", enum_to_name(kClusterModes, cluster_mode)},
          {"kl_mode", enum_to_name(kKlModes, kl_mode)},
          {"skip_fusion", enum_to_name(kSkipModes, skip_fusion)},
          {"hra_per_position_query", hra_per_position_query}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model: expected an object");
  ModelConfig c;
  const nlohmann::json known = c.to_json();
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("model." + key + ": unknown key");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("input_len", c.input_len);
    get("horizon", c.horizon);
    get("locations", c.locations);
    get("sources", c.sources);
    get("layers", c.layers);
    get("components", c.components);
    get("embed_dim", c.embed_dim);
    get("channels", c.channels);
    get("memory_slots", c.memory_slots);
    get("memory_dim", c.memory_dim);
    get("kernel_size", c.kernel_size);
    get("dilations", c.dilations);
    get("epsilon", c.epsilon);
    get("lambda", c.lambda);
    get("use_gmre", c.use_gmre);
    get("use_hra", c.use_hra);
    get("hra_per_position_query", c.hra_per_position_query);
    if (j.contains("cluster_mode")) {
      c.cluster_mode = enum_from_name(kClusterModes, "cluster_mode", j["cluster_mode"].get<std::string>());
    }
    if (j.contains("kl_mode")) c.kl_mode = enum_from_name(kKlModes, "kl_mode", j["kl_mode"].get<std::string>());
    if (j.contains("skip_fusion")) {
      c.skip_fusion = enum_from_name(kSkipModes, "skip_fusion", j["skip_fusion"].get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  return c;
}

LossParts total_loss(Var prediction, Var target, Var cluster, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0, got " + std::to_string(lambda));
  if (!(prediction.shape() == target.shape())) {
    throw ShapeError("total_loss: prediction " + prediction.shape().str() + " vs target " +
                     target.shape().str());
  }
  const double batch = static_cast<double>(prediction.shape()[0]);
  LossParts out;
  out.regression = scale(sum_all(square(sub(target, prediction))), 1.0 / batch);
  out.total = lambda == 0.0 ? out.regression : add(out.regression, scale(cluster, lambda));
  return out;
}

GmrlModel::GmrlModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  const ModelConfig& c = config_;
  const Index dk = c.d_k(), dz = c.embed_dim, value_dim = dk - dz;
  const Index positions = c.input_len * c.locations * c.sources;

  value_w_ = &params_.add("ttse.value_w", Shape{1, value_dim}, InitSpec::uniform(1.0));
  value_b_ = &params_.add("ttse.value_b", Shape{value_dim}, InitSpec::zeros());
  emb_time_ = &params_.add("ttse.time", Shape{c.input_len, dz}, InitSpec::uniform_scaled(dz));
  emb_location_ = &params_.add("ttse.location", Shape{c.locations, dz}, InitSpec::uniform_scaled(dz));
  emb_source_ = &params_.add("ttse.source", Shape{c.sources, dz}, InitSpec::uniform_scaled(dz));

  gmre_.reserve(static_cast<std::size_t>(c.layers));
  te_.reserve(static_cast<std::size_t>(c.layers));
  for (Index l = 0; l < c.layers; ++l) {
    const std::string prefix = "layer" + std::to_string(l);
    if (c.use_gmre) {
      GmreConfig g{c.components, dk, positions, c.epsilon, c.kl_mode, c.cluster_mode};
      gmre_.emplace_back(params_, prefix + ".gmre", g);
    }
    te_.emplace_back(params_, prefix + ".te", TeConfig{dk, c.kernel_size, c.dilations[l]});
    if (c.skip_fusion == SkipFusion::kSum) {
      skip_w_.push_back(&params_.add(prefix + ".skip_w", Shape{dk, dk}, InitSpec::uniform_scaled(dk)));
      skip_b_.push_back(&params_.add(prefix + ".skip_b", Shape{dk}, InitSpec::zeros()));
    }
  }
  if (c.skip_fusion == SkipFusion::kConcatProject) {
    const Index in = c.layers * dk;
    skip_w_.push_back(&params_.add("skip.w", Shape{in, dk}, InitSpec::uniform_scaled(in)));
    skip_b_.push_back(&params_.add("skip.b", Shape{dk}, InitSpec::zeros()));
  }
  Index head_in = dk;
  if (c.use_hra) {
    hra_ = std::make_unique<HraLayer>(
        params_, "hra",
        HraConfig{c.locations, c.sources, dk, c.memory_slots, c.memory_dim, c.hra_per_position_query});
    head_in += c.memory_dim;
  }
  out1_w_ = &params_.add("head.w1", Shape{head_in, dk}, InitSpec::uniform_scaled(head_in));
  out1_b_ = &params_.add("head.b1", Shape{dk}, InitSpec::zeros());
  out2_w_ = &params_.add("head.w2", Shape{dk, c.horizon}, InitSpec::uniform_scaled(dk));
  out2_b_ = &params_.add("head.b2", Shape{c.horizon}, InitSpec::zeros());
}

Var GmrlModel::build_input(Graph& g, const Tensor& x) const {
  const ModelConfig& c = config_;
  const Shape s = x.shape();
  if (s.rank() != 4 || s[1] != c.input_len || s[2] != c.locations || s[3] != c.sources) {
    throw ShapeError("build_input: expected (B, " + std::to_string(c.input_len) + ", " +
                     std::to_string(c.locations) + ", " + std::to_string(c.sources) + "), got " +
                     s.str());
  }
  const Index b = s[0];
  Var fx = linear(g.constant(x.reshaped(Shape{b, s[1], s[2], s[3], 1})), g.param(*value_w_),
                  g.param(*value_b_));
  const Shape e_shape{b, c.input_len, c.locations, c.sources, c.embed_dim};
  Var e = add(add(broadcast(g.param(*emb_time_), e_shape, {1, 4}),
                  broadcast(g.param(*emb_location_), e_shape, {2, 4})),
              broadcast(g.param(*emb_source_), e_shape, {3, 4}));
  return concat({fx, e}, 4);
}

ForwardResult GmrlModel::forward(Graph& g, const Tensor& x) const {
  const ModelConfig& c = config_;
  const Index dk = c.d_k(), t = c.input_len, l = c.locations, s = c.sources;
  const Index b = x.shape().rank() > 0 ? x.dim(0) : 0;
  const Index n = t * l * s;
  ForwardResult r;
  r.trace.emplace_back("X", drop_batch(x.shape()));

  Var h = build_input(g, x);
  r.trace.emplace_back("E", Shape{t, l, s, c.embed_dim});
  r.trace.emplace_back("H", drop_batch(h.shape()));

  std::vector<Var> lasts;
  std::vector<Var> kl_terms, nll_terms, total_terms;
  r.min_assignment_margin = std::numeric_limits<double>::infinity();
  Var layer_in = reshape(h, Shape{b, n, dk});
  for (Index li = 0; li < c.layers; ++li) {
    const std::string tag = "@" + std::to_string(li + 1);
    Var h_gm;
    if (c.use_gmre) {
      GmOutput gm = gmre_[li].forward(layer_in);
      r.trace.emplace_back("H_hat" + tag, Shape{t, l, s, dk});
      h_gm = gm.h_gm;
      kl_terms.push_back(gm.loss.kl);
      nll_terms.push_back(gm.loss.nll);
      total_terms.push_back(gm.loss.total);
      r.min_assignment_margin = std::min(r.min_assignment_margin, gm.posterior.min_margin);
      r.mixture.push_back(std::move(gm));
    } else {
      h_gm = concat({layer_in, layer_in}, 2);
    }
    r.trace.emplace_back("H_gm" + tag, Shape{t, l, s, 2 * dk});
    Var te = te_[li].forward(reshape(h_gm, Shape{b, t, l * s, 2 * dk})).out;
    r.trace.emplace_back("H_te" + tag, Shape{t, l, s, dk});
    r.temporal.push_back(te);
    Var last = reshape(slice(te, 1, t - 1, 1), Shape{b, l, s, dk});
    if (c.skip_fusion == SkipFusion::kSum) {
      Var proj = linear(last, g.param(*skip_w_[li]), g.param(*skip_b_[li]));
      r.skip = r.skip.valid() ? add(r.skip, proj) : proj;
    } else {
      lasts.push_back(last);
    }
    layer_in = reshape(te, Shape{b, n, dk});
  }
  if (c.skip_fusion == SkipFusion::kConcatProject) {
    r.skip = linear(concat(lasts, 3), g.param(*skip_w_[0]), g.param(*skip_b_[0]));
  }
  r.trace.emplace_back("H_sc", drop_batch(r.skip.shape()));

  if (c.use_hra) {
    r.memory = hra_->forward(r.skip);
    r.augmented = r.memory.augmented;
  } else {
    r.augmented = r.skip;
  }
  r.trace.emplace_back("H_aug", drop_batch(r.augmented.shape()));

  Var z1 = linear(relu(r.augmented), g.param(*out1_w_), g.param(*out1_b_));
  Var z2 = linear(relu(z1), g.param(*out2_w_), g.param(*out2_b_));
  r.prediction = permute(z2, {0, 3, 1, 2});
  r.trace.emplace_back("Y_hat", drop_batch(r.prediction.shape()));
  r.min_relu_margin = std::min(min_abs(r.augmented.value()), min_abs(z1.value()));
  Fnv1a fp;
  for (const GmOutput& gm : r.mixture) {
    for (Index a : gm.posterior.assign) fp.mix(static_cast<std::uint64_t>(a));
  }
  for (const Tensor* t : {&r.augmented.value(), &z1.value()}) {
    for (Index i = 0; i < t->size(); ++i) fp.mix((*t)[i] > 0.0);
  }
  r.discrete_state = fp.value();

  auto layer_mean = [&](const std::vector<Var>& terms) {
    if (terms.empty()) return g.constant(Tensor::scalar(0.0));
    Var acc = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return scale(acc, 1.0 / static_cast<double>(terms.size()));
  };
  r.cluster_total = layer_mean(total_terms);
  r.cluster_kl = layer_mean(kl_terms);
  r.cluster_nll = layer_mean(nll_terms);
  if (r.mixture.empty()) r.min_assignment_margin = 0.0;
  return r;
}

std::pair<ForwardResult, LossParts> GmrlModel::loss(Graph& g, const Tensor& x, const Tensor& y) const {
  ForwardResult r = forward(g, x);
  LossParts parts = total_loss(r.prediction, g.constant(y), r.cluster_total, config_.lambda);
  return {std::move(r), parts};
}

Tensor GmrlModel::predict(const Tensor& x) const {
  Graph g;
  return forward(g, x).prediction.value();
}

Batch make_batch(const std::vector<WindowedSample>& samples, const std::vector<std::size_t>& order,
                 std::size_t begin, std::size_t end) {
  if (begin >= end || end > order.size()) throw std::invalid_argument("make_batch: empty range");
  const WindowedSample& first = samples.at(order[begin]);
  const Index b = static_cast<Index>(end - begin);
  const Shape xs = first.x.shape(), ys = first.y.shape();
  Batch out{Tensor(Shape{b, xs[0], xs[1], xs[2]}), Tensor(Shape{b, ys[0], ys[1], ys[2]})};
  for (std::size_t i = begin; i < end; ++i) {
    const WindowedSample& w = samples.at(order[i]);
    const Index bi = static_cast<Index>(i - begin);
    std::copy_n(w.x.data(), w.x.size(), out.x.data() + bi * w.x.size());
    std::copy_n(w.y.data(), w.y.size(), out.y.data() + bi * w.y.size());
  }
  return out;
}

ForecastReport evaluate(const GmrlModel& model, const std::vector<WindowedSample>& samples,
                        const NormStats& stats, const std::vector<std::string>& source_ids,
                        Index batch_size, const std::string& label) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty split");
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  MetricAccumulator acc(source_ids, model.config().horizon);
  const auto step = static_cast<std::size_t>(std::max<Index>(batch_size, 1));
  for (std::size_t begin = 0; begin < order.size(); begin += step) {
    const Batch batch = make_batch(samples, order, begin, std::min(order.size(), begin + step));
    acc.add(stats.denormalize(model.predict(batch.x)), stats.denormalize(batch.y));
  }
  return acc.report(label);
}

void save_checkpoint(const std::filesystem::path& path, const GmrlModel& model,
                     const nlohmann::json& extra) {
  const ParameterSet& ps = model.params();
  std::vector<NamedTensor> entries;
  nlohmann::json ids = nlohmann::json::array();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    entries.push_back({ps[i].id, ps[i].value});
    ids.push_back({{"id", ps[i].id}, {"shape", ps[i].value.shape().dims()}});
  }
  write_archive(path, entries);
  nlohmann::json manifest = extra;
  manifest["format"] = "gmrl-checkpoint-1";
  manifest["model"] = model.config().to_json();
  manifest["parameters"] = ids;
  std::ofstream out(path.string() + ".json");
  if (!out) throw FormatError("cannot write manifest next to " + path.string());
  out << manifest.dump(2) << '\n';
}

nlohmann::json read_manifest(const std::filesystem::path& path) {
  const std::string name = path.string() + ".json";
  std::ifstream in(name);
  if (!in) throw FormatError("missing checkpoint manifest: " + name);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(name + ": " + e.what());
  }
}

void load_parameters(const std::filesystem::path& path, GmrlModel& model) {
  const std::vector<NamedTensor> entries = read_archive(path);
  ParameterSet& ps = model.params();
  if (entries.size() != ps.size()) {
    throw FormatError(path.string() + ": holds " + std::to_string(entries.size()) +
                      " tensors, model has " + std::to_string(ps.size()) + " parameters");
  }
  std::set<std::string> seen;
  for (const NamedTensor& e : entries) {
    if (!ps.contains(e.name)) throw FormatError(path.string() + ": unknown parameter " + e.name);
    Parameter& p = ps.get(e.name);
    if (!(p.value.shape() == e.tensor.shape())) {
      throw FormatError(path.string() + ": parameter " + e.name + " has shape " +
                        e.tensor.shape().str() + ", model expects " + p.value.shape().str());
    }
    seen.insert(e.name);
  }
  if (seen.size() != ps.size()) throw FormatError(path.string() + ": duplicate parameter ids");
  for (const NamedTensor& e : entries) ps.get(e.name).value = e.tensor;
}

}  // namespace gmrl
