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


#include "run_config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace gmrl::cli {
namespace {

using nlohmann::json;

std::vector<ConfigKey> build_schema() {
  const ModelConfig m;
  const TrainConfig t;
  const SynthSpec s;
  const json synth = s.to_json();
  std::vector<std::string> all_variants;
  for (Variant v : {Variant::kFull, Variant::kWithoutGmre, Variant::kHardClustering, Variant::kWithoutHra,
                    Variant::kWithoutClusterLoss}) {
    all_variants.push_back(variant_name(v));
  }
  return {
      {"data", "path", "", "dataset file: long-form CSV or tensor archive"},
      {"data", "format", "auto", "file format; auto picks csv for *.csv", {"auto", "csv", "binary"}},
      {"data", "sidecar", "", "axis-label sidecar for archives (default: <path>.json)"},
      {"data", "synthetic", false, "generate the dataset from the synth section instead of reading path"},
      {"data", "train_steps", 0, "training steps; all three zero selects a 70/10/20 split"},
      {"data", "val_steps", 0, "validation steps"},
      {"data", "test_steps", 0, "test steps"},
      {"data", "per_source_norm", false, "z-score each source separately"},

      {"synth", "locations", synth["locations"], "locations L"},
      {"synth", "sources", synth["sources"], "sources S"},
      {"synth", "steps", synth["steps"], "time steps"},
      {"synth", "components", synth["components"], "list of {mean, std} per ground-truth component"},
      {"synth", "assignment", synth["assignment"], "component id per (location, source); empty is round-robin"},
      {"synth", "seasonal_amplitude", synth["seasonal_amplitude"], "sine amplitude"},
      {"synth", "seasonal_period", synth["seasonal_period"], "sine period in steps"},
      {"synth", "noise_std", synth["noise_std"], "noise multiplier on each component's std"},
      {"synth", "seed", synth["seed"], "generator seed"},
      {"synth", "start_time", synth["start_time"], "first timestamp"},
      {"synth", "step_seconds", synth["step_seconds"], "seconds between steps"},

      {"model", "input_len", m.input_len, "input window T"},
      {"model", "horizon", m.horizon, "forecast horizon O"},
      {"model", "locations", 0, "L; 0 takes it from the dataset"},
      {"model", "sources", 0, "S; 0 takes it from the dataset"},
      {"model", "layers", m.layers, "GMRE/TE layer pairs L_g"},
      {"model", "components", m.components, "mixture components K"},
      {"model", "embed_dim", m.embed_dim, "spatio-temporal embedding size d_z"},
      {"model", "channels", 0, "hidden channels d_k; 0 selects 2 * embed_dim"},
      {"model", "memory_slots", m.memory_slots, "memory bank rows m"},
      {"model", "memory_dim", m.memory_dim, "memory bank width d_m"},
      {"model", "kernel_size", m.kernel_size, "TE convolution kernel"},
      {"model", "dilations", m.dilations, "TE dilation per layer"},
      {"model", "epsilon", m.epsilon, "Cluster Norm denominator guard"},
      {"model", "lambda", m.lambda, "cluster loss weight"},
      {"model", "use_gmre", m.use_gmre, "enable the mixture extractor"},
      {"model", "use_hra", m.use_hra, "enable the memory module"},
      {"model", "cluster_mode", "gaussian", "soft Gaussian posterior or hard nearest center",
       {"gaussian", "nearest_center"}},
      {"model", "kl_mode", "batch", "prior averaged over the batch or per sample", {"batch", "per_sample"}},
      {"model", "skip_fusion", "sum", "combine skip connections by sum or concat + projection", {"sum", "concat"}},
      {"model", "hra_per_position_query", m.hra_per_position_query, "query memory per (l, s) instead of globally"},

      {"train", "batch_size", t.batch_size, "samples per step"},
      {"train", "learning_rate", t.adam.learning_rate, "Adam step size"},
      {"train", "beta1", t.adam.beta1, "Adam first-moment decay"},
      {"train", "beta2", t.adam.beta2, "Adam second-moment decay"},
      {"train", "adam_epsilon", t.adam.epsilon, "Adam denominator guard"},
      {"train", "max_epochs", t.max_epochs, "epoch limit"},
      {"train", "patience", t.patience, "epochs without validation improvement before stopping"},
      {"train", "seed", t.seed, "parameter init and shuffle seed"},
      {"train", "clip_norm", t.clip_norm, "global gradient norm limit; 0 disables"},
      {"train", "record_timing", t.record_timing, "write wall-clock seconds to the history"},

      {"ablation", "variant", "full", "variant for train/evaluate/forecast", all_variants},
      {"ablation", "suite", all_variants, "variants run by ablate"},

      {"gradcheck", "preset", "tiny", "tiny built-in model or the model section", {"tiny", "model"}},
      {"gradcheck", "delta", 1e-4, "central difference step"},
      {"gradcheck", "tolerance", 1e-3, "maximum relative error"},
      {"gradcheck", "max_entries", 200, "entries sampled per parameter; 0 checks all"},
      {"gradcheck", "batch", 2, "random batch size"},
      {"gradcheck", "seed", 0, "init, input and sampling seed"},

      {"output", "dir", "", "run directory; empty selects runs/<command>-<timestamp>"},
      {"output", "diagnostics", true, "write mixture, attention and Cluster Norm dumps"},

      {"runtime", "threads", 1, "worker threads; computation is currently single-threaded"},
  };
}

bool same_kind(const json& want, const json& got) {
  if (want.is_boolean()) return got.is_boolean();
  if (want.is_number_integer()) return got.is_number_integer();
  if (want.is_number()) return got.is_number();
  if (want.is_string()) return got.is_string();
  if (want.is_array()) return got.is_array();
  return want.type() == got.type();
}

const char* kind_name(const json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  return "value";
}

const ConfigKey* find_key(const std::string& section, const std::string& key) {
  for (const ConfigKey& k : config_schema()) {
    if (k.section == section && k.key == key) return &k;
  }
  return nullptr;
}

}  // namespace

std::string ConfigKey::env_name() const {
  std::string out = "GMRL_" + section + "_" + key;
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::toupper(c); });
  return out;
}

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = build_schema();
  return schema;
}

std::string schema_help() {
  std::ostringstream out;
  out << "Config keys (file sections, GMRL_<SECTION>_<KEY> env overrides):\n";
  std::string section;
  for (const ConfigKey& k : config_schema()) {
    if (k.section != section) {
      section = k.section;
      out << "\n  [" << section << "]\n";
    }
    out << "    " << k.key << " = " << k.default_value.dump() << "\n        " << k.help;
    if (!k.choices.empty()) {
      out << " (";
      for (std::size_t i = 0; i < k.choices.size(); ++i) out << (i ? "|" : "") << k.choices[i];
      out << ")";
    }
    out << "\n";
  }
  return out.str();
}

RunConfig::RunConfig() : resolved_(json::object()) {
  for (const ConfigKey& k : config_schema()) resolved_[k.section][k.key] = k.default_value;
}

void RunConfig::set(const std::string& section, const std::string& key, const json& value) {
  const ConfigKey* k = find_key(section, key);
  if (k == nullptr) throw ConfigError(section + "." + key + ": unknown key");
  json v = value;
  if (k->default_value.is_number_float() && v.is_number_integer()) v = v.get<double>();
  if (!same_kind(k->default_value, v)) {
    throw ConfigError(k->path() + ": expected " + kind_name(k->default_value) + ", got " + v.dump());
  }
  if (!k->choices.empty()) {
    const auto check = [&](const json& item) {
      if (!item.is_string() ||
          std::find(k->choices.begin(), k->choices.end(), item.get<std::string>()) == k->choices.end()) {
        throw ConfigError(k->path() + ": " + item.dump() + " is not one of the allowed values");
      }
    };
    if (v.is_array()) {
      for (const json& item : v) check(item);
    } else {
      check(v);
    }
  }
  resolved_[section][key] = std::move(v);
}

void RunConfig::merge(const json& overrides, const std::string& origin) {
  if (!overrides.is_object()) throw ConfigError(origin + ": expected a JSON object");
  for (const auto& [section, body] : overrides.items()) {
    if (!resolved_.contains(section)) throw ConfigError(origin + ": unknown section '" + section + "'");
    if (!body.is_object()) throw ConfigError(origin + ": section '" + section + "' must be an object");
    for (const auto& [key, value] : body.items()) {
      try {
        set(section, key, value);
      } catch (const ConfigError& e) {
        throw ConfigError(origin + ": " + e.what());
      }
    }
  }
}

void RunConfig::merge_env(const std::function<const char*(const char*)>& getenv) {
  for (const ConfigKey& k : config_schema()) {
    const std::string name = k.env_name();
    const char* raw = getenv(name.c_str());
    if (raw == nullptr) continue;
    json value;
    if (k.default_value.is_string()) {
      value = raw;
    } else {
      value = json::parse(raw, nullptr, false);
      if (value.is_discarded()) throw ConfigError(name + ": cannot parse '" + std::string(raw) + "'");
    }
    try {
      set(k.section, k.key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(name + ": " + e.what());
    }
  }
}

const json& RunConfig::at(const std::string& section, const std::string& key) const {
  return resolved_.at(section).at(key);
}

ModelConfig RunConfig::model(const TtsDataset* data, bool with_variant) const {
  json j = resolved_.at("model");
  if (data != nullptr) {
    if (j["locations"] == 0) j["locations"] = data->locations();
    if (j["sources"] == 0) j["sources"] = data->sources();
    if (j["locations"] != data->locations() || j["sources"] != data->sources()) {
      throw ConfigError("model.locations/sources (" + j["locations"].dump() + ", " + j["sources"].dump() +
                        ") do not match the dataset (" + std::to_string(data->locations()) + ", " +
                        std::to_string(data->sources()) + ")");
    }
  }
  ModelConfig c = ModelConfig::from_json(j);
  if (with_variant) c = apply_variant(c, variant());
  c.validate();
  return c;
}

TrainConfig RunConfig::train() const {
  const json& j = resolved_.at("train");
  TrainConfig t;
  t.batch_size = j["batch_size"].get<Index>();
  t.adam.learning_rate = j["learning_rate"].get<double>();
  t.adam.beta1 = j["beta1"].get<double>();
  t.adam.beta2 = j["beta2"].get<double>();
  t.adam.epsilon = j["adam_epsilon"].get<double>();
  t.max_epochs = j["max_epochs"].get<Index>();
  t.patience = j["patience"].get<Index>();
  t.seed = j["seed"].get<std::uint64_t>();
  t.clip_norm = j["clip_norm"].get<double>();
  t.record_timing = j["record_timing"].get<bool>();
  t.validate();
  return t;
}

SynthSpec RunConfig::synth() const {
  try {
    return SynthSpec::from_json(resolved_.at("synth"));
  } catch (const DataError& e) {
    throw ConfigError(std::string("synth: ") + e.what());
  }
}

Variant RunConfig::variant() const { return parse_variant(at("ablation", "variant").get<std::string>()); }

std::vector<std::string> RunConfig::suite() const {
  return at("ablation", "suite").get<std::vector<std::string>>();
}

Index RunConfig::threads() const {
  const Index n = at("runtime", "threads").get<Index>();
  if (n < 1) throw ConfigError("runtime.threads must be at least 1");
  return n;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path + ": not valid JSON");
  return j;
}

std::vector<std::string> model_differences(const json& expected, const json& actual) {
  std::vector<std::string> out;
  std::map<std::string, bool> keys;
  for (const auto& [k, v] : expected.items()) keys[k] = true;
  for (const auto& [k, v] : actual.items()) keys[k] = true;
  for (const auto& [k, unused] : keys) {
    const json a = expected.contains(k) ? expected[k] : json();
    const json b = actual.contains(k) ? actual[k] : json();
    if (a != b) out.push_back(k + ": " + a.dump() + " != " + b.dump());
  }
  return out;
}

}  // namespace gmrl::cli
