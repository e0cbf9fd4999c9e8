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

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "gridpipe/message.hpp"

namespace gridpipe::metric {

// Nagios plugin status codes.
enum class Status : int { ok = 0, warning = 1, critical = 2, unknown = 3 };

int code(Status status) noexcept;
// Throws UsageError outside 0..3.
Status from_code(int code);
std::string_view to_string(Status status) noexcept;
// Case-insensitive "OK" / "WARNING" / "CRITICAL" / "UNKNOWN".
std::optional<Status> parse_status(std::string_view text) noexcept;

struct MetricEvent {
  std::string host;
  std::string service;
  Status status = Status::unknown;
  int64_t timestamp = 0;
  std::string summary;
  std::string details;

  bool operator==(const MetricEvent&) const = default;
};

// Throws UsageError on the first violated field rule.
void validate(const MetricEvent& event);

using Environment = std::map<std::string, std::string>;

// Reads NAGIOS_HOSTNAME, NAGIOS_SERVICEDESC, NAGIOS_SERVICESTATE,
// NAGIOS_TIMET, NAGIOS_SERVICEOUTPUT and optional NAGIOS_LONGSERVICEOUTPUT.
MetricEvent from_env(const Environment& env);

Message to_message(const MetricEvent& event);

// How from_message treats a status string it does not recognize.
enum class StatusPolicy { strict, lenient };

// Inverse of to_message. Under StatusPolicy::lenient an unknown status maps
// to Status::unknown and `status_fallback` (when given) is set.
MetricEvent from_message(const Message& message, StatusPolicy policy = StatusPolicy::strict,
                         bool* status_fallback = nullptr);

}  // namespace gridpipe::metric
