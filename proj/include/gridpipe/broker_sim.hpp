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
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>

#include "gridpipe/stomp/codec.hpp"
#include "gridpipe/stomp/session.hpp"
#include "gridpipe/stomp/tls.hpp"

namespace gridpipe::broker {

using std::chrono::milliseconds;

// Close every client connection right after it has sent this many frames.
// The frame that hits the limit is processed, but its reply is lost.
struct DropConnection {
  std::size_t after_frames = 50;
};

// Silently discard this fraction of RECEIPT frames (evenly spaced, so the
// outcome is deterministic). 1.0 swallows all of them.
struct SwallowReceipts {
  double ratio = 1.0;
};

// Hold every newly sent message this long before it becomes deliverable.
struct DelayDelivery {
  milliseconds delay{0};
};

using Fault = std::variant<DropConnection, SwallowReceipts, DelayDelivery>;

struct FaultPlan {
  std::optional<std::size_t> drop_after_frames;
  double swallow_receipts = 0.0;
  milliseconds delay_delivery{0};

  void apply(const Fault& fault);
};

// Parses "drop:N", "swallow[:RATIO]" or "delay:MS".
Fault parse_fault(std::string_view text);

struct BrokerOptions {
  std::string host = "127.0.0.1";
  uint16_t port = 0;
  std::optional<stomp::TlsConfig> tls;
  FaultPlan faults;
  stomp::Heartbeat heartbeat;
  // When set, CONNECT must present matching credentials.
  std::optional<std::string> login;
  std::optional<std::string> passcode;
  std::size_t max_frame_size = stomp::kDefaultMaxFrameSize;
};

struct DestinationStats {
  uint64_t enqueued = 0;
  uint64_t delivered = 0;
  uint64_t acked = 0;
  uint64_t requeued = 0;
  // Point-in-time depth: waiting in the FIFO / delivered but unacknowledged.
  uint64_t stored = 0;
  uint64_t pending = 0;

  bool operator==(const DestinationStats&) const = default;
};

// In-memory STOMP 1.0/1.2 broker for desk-scale testing. "/topic/..."
// destinations fan out to every current subscriber; every other destination
// has queue semantics with round-robin delivery.
class Broker {
 public:
  // Binds and starts serving; the broker stops when the handle is destroyed.
  static std::unique_ptr<Broker> serve(BrokerOptions options);

  virtual ~Broker() = default;

  virtual uint16_t port() const noexcept = 0;
  virtual std::string host() const = 0;

  virtual void inject_fault(const Fault& fault) = 0;
  virtual void clear_faults() = 0;

  virtual std::map<std::string, DestinationStats> stats() const = 0;
  virtual std::size_t connection_count() const = 0;
  virtual uint64_t connections_accepted() const = 0;

  virtual void shutdown() = 0;
};

}  // namespace gridpipe::broker
