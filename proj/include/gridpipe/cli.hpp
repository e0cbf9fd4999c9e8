// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "gridpipe/metric.hpp"
#include "gridpipe/stop_signal.hpp"

namespace gridpipe::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kUsage = 2;

// Runs one gridpipe command line. `args` excludes the program name. Long
// running subcommands return once `stop` fires. Diagnostics and logs go to
// `err`, results to `out`.
int run(const std::vector<std::string>& args, const metric::Environment& env, std::ostream& out,
        std::ostream& err, const StopSignal& stop);

}  // namespace gridpipe::cli
