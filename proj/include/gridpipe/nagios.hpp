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

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "gridpipe/dirq.hpp"
#include "gridpipe/metric.hpp"
#include "gridpipe/stop_signal.hpp"

namespace gridpipe::nagios {

// Longest line written to the command pipe in one write(2); longer lines are
// truncated so the write stays atomic on a FIFO.
inline constexpr std::size_t kMaxCommandLine = 4096;

// One PROCESS_SERVICE_CHECK_RESULT external command.
struct PassiveCheck {
  int64_t timestamp = 0;
  std::string host;
  std::string service;
  int code = 3;
  std::string output;

  // "[%d] PROCESS_SERVICE_CHECK_RESULT;%s;%s;%s;%s\n"
  std::string render() const;

  bool operator==(const PassiveCheck&) const = default;
};

// ';' becomes ',' and line breaks become spaces. Idempotent.
std::string sanitize(std::string_view field);

PassiveCheck to_passive(const metric::MetricEvent& event);

// Line for the pipe; truncated to kMaxCommandLine bytes (newline included)
// when necessary. `truncated` reports whether that happened.
std::string render_for_pipe(const PassiveCheck& check, bool* truncated = nullptr);

// metric_from_env -> metric_to_message -> serialize -> dirq add.
dirq::ElementName capture(const metric::Environment& env, const std::filesystem::path& queue_path,
                          dirq::QueueOptions options = {});

struct Mq2NagiosOptions {
  // Process the queue once and return instead of polling forever.
  bool once = false;
  std::chrono::milliseconds poll_interval{500};
  double backoff_initial = 0.5;  // seconds, after a failed pipe write
  double backoff_max = 30.0;
  std::optional<std::filesystem::path> poison;  // default "<queue>.poison"
  dirq::QueueOptions queue;
};

struct Mq2NagiosResult {
  std::size_t emitted = 0;
  std::size_t poison = 0;
  std::size_t write_failures = 0;

  bool operator==(const Mq2NagiosResult&) const = default;
};

// Drains queue elements into passive-check lines on `command_pipe` (a FIFO
// with a reader, or a regular file). An element is removed only after its
// line was written. In `once` mode the first write failure ends the run.
Mq2NagiosResult mq2nagios_run(const std::filesystem::path& queue_path,
                              const std::filesystem::path& command_pipe, const StopSignal& stop,
                              const Mq2NagiosOptions& options = {});

}  // namespace gridpipe::nagios
