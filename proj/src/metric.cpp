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

#include "gridpipe/metric.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <vector>

#include <fmt/format.h>

#include "gridpipe/encoding.hpp"
#include "gridpipe/error.hpp"

namespace gridpipe::metric {

namespace {

constexpr std::string_view kKeys[] = {"hostName", "metricName", "metricStatus", "timestamp",
                                      "summaryData"};
constexpr std::string_view kDetailsKey = "detailsData";
constexpr std::string_view kTerminator = "EOT";

std::optional<int64_t> parse_epoch(std::string_view text) {
  int64_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || value < 0) return std::nullopt;
  return value;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  for (;;) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

const std::string& require(const Environment& env, const char* name) {
  auto it = env.find(name);
  if (it == env.end()) throw UsageError(fmt::format("missing environment variable {}", name));
  return it->second;
}

}  // namespace

int code(Status status) noexcept { return static_cast<int>(status); }

Status from_code(int c) {
  if (c < 0 || c > 3) throw UsageError(fmt::format("status code {} outside 0..3", c));
  return static_cast<Status>(c);
}

std::string_view to_string(Status status) noexcept {
  switch (status) {
    case Status::ok: return "OK";
    case Status::warning: return "WARNING";
    case Status::critical: return "CRITICAL";
    case Status::unknown: return "UNKNOWN";
  }
  return "UNKNOWN";
}

std::optional<Status> parse_status(std::string_view text) noexcept {
  std::string upper(text);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return char(std::toupper(c)); });
  for (Status s : {Status::ok, Status::warning, Status::critical, Status::unknown})
    if (upper == to_string(s)) return s;
  return std::nullopt;
}

void validate(const MetricEvent& e) {
  if (e.host.empty()) throw UsageError("metric host is empty");
  if (e.host.find_first_of("\r\n") != std::string::npos)
    throw UsageError("metric host contains a newline");
  if (e.service.empty()) throw UsageError("metric service is empty");
  if (e.service.find_first_of(";\r\n") != std::string::npos)
    throw UsageError("metric service contains ';' or a newline");
  if (e.timestamp < 0) throw UsageError("metric timestamp is negative");
  if (e.summary.find_first_of("\r\n") != std::string::npos)
    throw UsageError("metric summary contains a newline");
  for (auto line : split_lines(e.details))
    if (line == kTerminator)
      throw UsageError("metric details contain a bare EOT line, which the body grammar cannot carry");
  if (!is_valid_utf8(e.host) || !is_valid_utf8(e.service) || !is_valid_utf8(e.summary) ||
      !is_valid_utf8(e.details))
    throw UsageError("metric fields must be valid UTF-8");
}

MetricEvent from_env(const Environment& env) {
  MetricEvent e;
  e.host = require(env, "NAGIOS_HOSTNAME");
  e.service = require(env, "NAGIOS_SERVICEDESC");
  const auto& state = require(env, "NAGIOS_SERVICESTATE");
  const auto& timet = require(env, "NAGIOS_TIMET");
  e.summary = require(env, "NAGIOS_SERVICEOUTPUT");
  if (auto it = env.find("NAGIOS_LONGSERVICEOUTPUT"); it != env.end()) e.details = it->second;

  auto status = parse_status(state);
  if (!status) throw UsageError(fmt::format("unrecognized NAGIOS_SERVICESTATE '{}'", state));
  e.status = *status;
  auto ts = parse_epoch(timet);
  if (!ts) throw UsageError(fmt::format("NAGIOS_TIMET '{}' is not a non-negative integer", timet));
  e.timestamp = *ts;
  validate(e);
  return e;
}

Message to_message(const MetricEvent& e) {
  validate(e);
  Message m;
  m.header["destination-hint"] = e.service;
  m.text = true;
  m.body = fmt::format(
      "hostName: {}\nmetricName: {}\nmetricStatus: {}\ntimestamp: {}\nsummaryData: {}\n"
      "detailsData: {}\nEOT\n",
      e.host, e.service, to_string(e.status), e.timestamp, e.summary, e.details);
  return m;
}

MetricEvent from_message(const Message& m, StatusPolicy policy, bool* status_fallback) {
  if (status_fallback) *status_fallback = false;
  auto lines = split_lines(m.body);
  // A body ends with "EOT\n", which leaves one empty trailing piece.
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty() || lines.back() != kTerminator)
    throw FormatError("metric body is missing the EOT terminator");
  lines.pop_back();

  std::size_t i = 0;
  std::string values[std::size(kKeys)];
  for (std::size_t k = 0; k < std::size(kKeys); ++k, ++i) {
    std::string prefix = fmt::format("{}: ", kKeys[k]);
    if (i >= lines.size() || lines[i].substr(0, prefix.size()) != prefix)
      throw FormatError(fmt::format("metric body is missing key '{}'", kKeys[k]));
    values[k] = std::string(lines[i].substr(prefix.size()));
  }
  std::string details_prefix = fmt::format("{}: ", kDetailsKey);
  if (i >= lines.size() || lines[i].substr(0, details_prefix.size()) != details_prefix)
    throw FormatError(fmt::format("metric body is missing key '{}'", kDetailsKey));

  MetricEvent e;
  e.host = values[0];
  e.service = values[1];
  if (auto status = parse_status(values[2])) {
    e.status = *status;
  } else if (policy == StatusPolicy::lenient) {
    e.status = Status::unknown;
    if (status_fallback) *status_fallback = true;
  } else {
    throw FormatError(fmt::format("unrecognized metric status '{}'", values[2]));
  }
  auto ts = parse_epoch(values[3]);
  if (!ts) throw FormatError(fmt::format("bad metric timestamp '{}'", values[3]));
  e.timestamp = *ts;
  e.summary = values[4];
  e.details = std::string(lines[i].substr(details_prefix.size()));
  for (++i; i < lines.size(); ++i) {
    e.details += '\n';
    e.details += lines[i];
  }
  try {
    validate(e);
  } catch (const UsageError& err) {
    throw FormatError(err.what());
  }
  return e;
}

}  // namespace gridpipe::metric
