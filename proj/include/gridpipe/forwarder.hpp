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
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <variant>

#include "gridpipe/message.hpp"
#include "gridpipe/stomp/session.hpp"
#include "gridpipe/stomp/tls.hpp"
#include "gridpipe/stomp/uri.hpp"
#include "gridpipe/stop_signal.hpp"

namespace gridpipe::forwarder {

using std::chrono::milliseconds;

struct DirQueueEndpoint {
  std::filesystem::path path;
  uint32_t granularity = 60;
};

struct BrokerEndpoint {
  stomp::BrokerUri uri;  // uri.destination is the configured destination
  std::optional<std::string> login;
  std::optional<std::string> passcode;
  std::string vhost = "localhost";
  // Only meaningful for a broker source; unset means client-individual when
  // reliable, auto otherwise.
  std::optional<stomp::AckMode> ack_mode;
};

inline BrokerEndpoint broker_endpoint(stomp::BrokerUri uri) {
  BrokerEndpoint ep;
  ep.uri = std::move(uri);
  return ep;
}

using Endpoint = std::variant<DirQueueEndpoint, BrokerEndpoint>;

// Everything the forwarder does to a queue element, in order. Tests use it
// to audit that removal never precedes acknowledgement.
struct TraceEvent {
  enum class Kind { locked, sent, receipt, removed, unlocked, poisoned, added, acked };
  Kind kind;
  std::string element;  // element name or STOMP message-id
  std::string detail;   // receipt id, destination, ...
};

using ProcessHook = std::function<Message(Message)>;

// The default processing step between source and sink.
Message identity_hook(Message message);

struct ForwarderConfig {
  Endpoint incoming;
  Endpoint outgoing;
  bool reliable = true;
  std::optional<stomp::TlsConfig> tls;
  stomp::Heartbeat heartbeat;
  double backoff_initial = 1.0;  // seconds
  double backoff_max = 60.0;
  bool loop = false;
  // Side queue for undeserializable input; defaults to "<queue path>.poison".
  std::optional<std::filesystem::path> poison;
  milliseconds receipt_timeout{5000};
  milliseconds connect_timeout{10000};
  std::size_t max_in_flight = 64;
  // Drain-once from a broker ends after this much silence.
  milliseconds idle_timeout{1000};
  // Queue rescan period when a looping dirq source is empty.
  milliseconds poll_interval{200};
  // Drain-once from a dirq ends after this many passes without progress.
  int max_idle_passes = 3;
  bool sync = true;
  ProcessHook hook = identity_hook;
  std::function<void(const TraceEvent&)> trace;
};

struct ForwardReport {
  std::size_t forwarded = 0;
  std::size_t retried = 0;
  std::size_t failed = 0;
  std::size_t in_flight_at_stop = 0;

  bool operator==(const ForwardReport&) const = default;
};

// Throws ConfigError for unsupported endpoint pairs or inconsistent options.
void validate(const ForwarderConfig& config);

// Moves messages from config.incoming to config.outgoing until the source is
// drained (loop == false) or `stop` fires. Throws ConnectionError when a
// drain-once run cannot reach the broker even at the maximum backoff.
ForwardReport run(const ForwarderConfig& config, const StopSignal& stop);

// Filters STOMP transport headers out of a received MESSAGE frame.
Message message_from_frame(const stomp::Frame& frame);

}  // namespace gridpipe::forwarder
