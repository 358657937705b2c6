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


// Subcommands of the `gmrl` tool. Exit codes: 0 success, 2 configuration
// error, 3 data error, 4 numeric failure.

#ifndef GMRL_TOOLS_COMMANDS_HPP_
#define GMRL_TOOLS_COMMANDS_HPP_

#include <functional>
#include <iosfwd>

#include "gmrl/model.hpp"

namespace gmrl::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3, kNumericError = 4 };

/// The model grad-checked by default: two layers, three components, T=8,
/// L=3, S=2.
ModelConfig tiny_model_config();

/// Parses arguments and runs one subcommand. Environment overrides are read
/// through `getenv`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err,
        const std::function<const char*(const char*)>& getenv);

}  // namespace gmrl::cli

#endif  // GMRL_TOOLS_COMMANDS_HPP_
