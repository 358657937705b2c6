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


// Run configuration for the command-line tool. One schema table drives the
// defaults, validation, `--help` text and the resolved config written with
// every run.

#ifndef GMRL_TOOLS_RUN_CONFIG_HPP_
#define GMRL_TOOLS_RUN_CONFIG_HPP_

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gmrl/data.hpp"
#include "gmrl/model.hpp"
#include "gmrl/trainer.hpp"
#include "json.hpp"

namespace gmrl::cli {

struct ConfigKey {
  ConfigKey(std::string section, std::string key, nlohmann::json default_value, std::string help,
            std::vector<std::string> choices = {})
      : section(std::move(section)),
        key(std::move(key)),
        default_value(std::move(default_value)),
        help(std::move(help)),
        choices(std::move(choices)) {}

  std::string section;
  std::string key;
  nlohmann::json default_value;
  std::string help;
  std::vector<std::string> choices;  // empty means any value of the default's type

  std::string path() const { return section + "." + key; }
  /// GMRL_<SECTION>_<KEY>
  std::string env_name() const;
};

const std::vector<ConfigKey>& config_schema();

/// Every key with its default and description, grouped by section.
std::string schema_help();

/// Fully resolved configuration: every schema key present, nothing else.
class RunConfig {
 public:
  /// Schema defaults.
  RunConfig();

  /// Merges a nested {section: {key: value}} object. Throws ConfigError on
  /// unknown sections or keys and on type or choice mismatches.
  void merge(const nlohmann::json& overrides, const std::string& origin);
  /// Applies GMRL_<SECTION>_<KEY> variables. String keys take the raw text;
  /// other keys parse it as JSON. `getenv` is injectable for tests.
  void merge_env(const std::function<const char*(const char*)>& getenv);
  void set(const std::string& section, const std::string& key, const nlohmann::json& value);

  const nlohmann::json& resolved() const { return resolved_; }
  const nlohmann::json& at(const std::string& section, const std::string& key) const;

  /// Model section as a ModelConfig with the configured variant applied.
  /// Zero locations/sources are taken from the dataset shape when one is
  /// supplied.
  ModelConfig model(const TtsDataset* data = nullptr, bool with_variant = true) const;
  TrainConfig train() const;
  SynthSpec synth() const;
  Variant variant() const;
  std::vector<std::string> suite() const;
  Index threads() const;

 private:
  nlohmann::json resolved_;
};

nlohmann::json read_json_file(const std::string& path);

/// Keys of the model section whose values differ, as "key: a != b" lines.
std::vector<std::string> model_differences(const nlohmann::json& expected,
                                           const nlohmann::json& actual);

}  // namespace gmrl::cli

#endif  // GMRL_TOOLS_RUN_CONFIG_HPP_
