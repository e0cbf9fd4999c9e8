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

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gridpipe/forwarder.hpp"
#include "gridpipe/stomp/session.hpp"
#include "gridpipe/stomp/tls.hpp"
#include "gridpipe/stomp/uri.hpp"
#include "gridpipe/supervisor.hpp"

namespace gridpipe::config {

struct IniEntry {
  std::string key;
  std::string value;
  int line = 0;
};

struct IniSection {
  std::string kind;  // "broker" in "[broker main]"
  std::string name;  // "main"; empty for "[supervisor]"
  int line = 0;
  std::vector<IniEntry> entries;
};

// "[kind name]" headers, "key = value" lines, '#' or ';' comment lines.
// Throws ConfigError("<source>:<line>: ...").
std::vector<IniSection> parse_ini(std::string_view text, std::string_view source = "<config>");

struct BrokerSection {
  stomp::BrokerUri uri;
  std::optional<std::string> login;
  std::optional<std::string> passcode;
  std::string vhost = "localhost";
  stomp::TlsConfig tls;
  stomp::Heartbeat heartbeat;
};

struct QueueSection {
  std::filesystem::path path;
  uint32_t granularity = 60;
  double purge_tmp_age = 300.0;
  double purge_lock_age = 600.0;
};

struct SupervisorSection {
  std::filesystem::path log_dir = ".";
  double grace = 10.0;
};

struct PipelineConfig {
  std::map<std::string, BrokerSection> brokers;
  std::map<std::string, QueueSection> queues;
  std::map<std::string, forwarder::ForwarderConfig> forwarders;
  std::vector<supervisor::ServiceSpec> services;
  SupervisorSection supervisor;
};

PipelineConfig parse(std::string_view text, std::string_view source = "<config>");
PipelineConfig load(const std::filesystem::path& path);

// Shared value parsers; throw ConfigError.
bool parse_bool(std::string_view text);
double parse_seconds(std::string_view text);
stomp::Heartbeat parse_heartbeat_pair(std::string_view text);

}  // namespace gridpipe::config
