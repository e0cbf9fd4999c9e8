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
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "gridpipe/error.hpp"
#include "gridpipe/stomp/codec.hpp"
#include "gridpipe/stomp/frame.hpp"
#include "gridpipe/stomp/transport.hpp"

namespace gridpipe::stomp {

using std::chrono::milliseconds;

// Time source for heart-beat scheduling; replaceable in tests.
class Clock {
 public:
  using time_point = std::chrono::steady_clock::time_point;
  virtual ~Clock() = default;
  virtual time_point now() const = 0;
};

const Clock& steady_clock();

// The "heart-beat: x,y" pair one side advertises: x = the smallest interval
// it can send at, y = the interval it would like to receive at (0 = none).
struct Heartbeat {
  uint32_t send_ms = 0;
  uint32_t receive_ms = 0;

  bool operator==(const Heartbeat&) const = default;
};

std::optional<Heartbeat> parse_heartbeat(std::string_view text) noexcept;
std::string format_heartbeat(Heartbeat hb);

struct NegotiatedHeartbeat {
  milliseconds send_interval{0};
  milliseconds receive_timeout{0};

  bool operator==(const NegotiatedHeartbeat&) const = default;
};

// Each direction is enabled only when both sides agree, at the larger of
// the two advertised intervals.
NegotiatedHeartbeat negotiate_heartbeat(Heartbeat client, Heartbeat server) noexcept;

enum class AckMode { automatic, client, client_individual };

std::string_view to_string(AckMode mode) noexcept;
std::optional<AckMode> parse_ack_mode(std::string_view text) noexcept;

enum class SessionState { disconnected, connecting, connected, closed };

std::string_view to_string(SessionState state) noexcept;

// An operation was attempted in a state that does not allow it.
class ProtocolMisuse : public UsageError {
 public:
  using UsageError::UsageError;
};

// The broker answered with an ERROR frame.
class BrokerError : public Error {
 public:
  explicit BrokerError(Frame frame);
  const Frame& frame() const noexcept { return frame_; }

 private:
  Frame frame_;
};

struct SessionOptions {
  std::optional<std::string> login;
  std::optional<std::string> passcode;
  std::string vhost = "localhost";
  Heartbeat heartbeat;
  milliseconds connect_timeout{10000};
  milliseconds disconnect_timeout{2000};
  std::size_t max_frame_size = kDefaultMaxFrameSize;
  // Silence tolerated on the receive side, as a multiple of the negotiated
  // receive timeout, before a HeartbeatTimeout is reported.
  double heartbeat_grace = 1.5;
};

struct MessageEvent {
  Frame frame;
};
struct ReceiptEvent {
  std::string id;
};
struct ErrorEvent {
  Frame frame;
};
struct HeartbeatTimeout {};
struct Idle {};

using SessionEvent = std::variant<MessageEvent, ReceiptEvent, ErrorEvent, HeartbeatTimeout, Idle>;

struct Subscription {
  std::string destination;
  AckMode ack_mode;
};

// Client half of a STOMP connection. Single owner; not thread-safe.
class ClientSession {
 public:
  ClientSession(std::unique_ptr<Transport> transport, SessionOptions options,
                const Clock& clock = steady_clock());
  ~ClientSession();

  ClientSession(const ClientSession&) = delete;
  ClientSession& operator=(const ClientSession&) = delete;

  // CONNECT / CONNECTED exchange. Throws BrokerError on an ERROR reply and
  // ConnectionError on timeout or transport failure; the session is closed
  // in both cases.
  void connect();

  // Returns the receipt id when `want_receipt`. Headers named destination,
  // content-length or receipt in `extra_headers` are ignored.
  std::optional<std::string> send(std::string_view destination, const std::vector<Header>& extra_headers,
                                  std::string_view body, bool want_receipt);

  std::string subscribe(std::string_view destination, AckMode mode,
                        const std::vector<Header>& extra_headers = {});
  void unsubscribe(const std::string& id);

  // `message` must be a MESSAGE frame from a client or client-individual
  // subscription of this session.
  void ack(const Frame& message);
  void nack(const Frame& message);

  // Waits for the next event until `deadline`, sending heart-beats that fall
  // due in the meantime.
  SessionEvent poll(Clock::time_point deadline);
  SessionEvent poll_for(milliseconds timeout) { return poll(clock_.now() + timeout); }

  // DISCONNECT with a receipt, bounded wait, then close. Never throws.
  void disconnect() noexcept;

  // Once the session has failed: receipts the broker sent before the
  // connection went away that poll() never returned. Empty while connected.
  std::vector<std::string> take_late_receipts();

  SessionState state() const noexcept { return state_; }
  Version version() const noexcept { return version_; }
  NegotiatedHeartbeat heartbeat() const noexcept { return heartbeat_; }
  Heartbeat server_heartbeat() const noexcept { return server_heartbeat_; }
  const std::set<std::string>& pending_receipts() const noexcept { return pending_receipts_; }
  const std::map<std::string, Subscription>& subscriptions() const noexcept { return subscriptions_; }
  std::optional<std::string_view> server_header(std::string_view key) const noexcept {
    return connected_frame_.header(key);
  }
  std::string_view transport_kind() const noexcept;

 private:
  void require_connected(std::string_view op) const;
  void write_frame(const Frame& frame);
  void write_raw(std::string_view bytes);
  const Subscription& subscription_of(const Frame& message, std::string_view op) const;
  std::optional<Frame> read_frame(Clock::time_point deadline);
  void fail() noexcept;
  void salvage() noexcept;

  std::unique_ptr<Transport> transport_;
  SessionOptions options_;
  const Clock& clock_;
  SessionState state_ = SessionState::disconnected;
  Version version_ = Version::v1_0;
  FrameDecoder decoder_;
  NegotiatedHeartbeat heartbeat_;
  Heartbeat server_heartbeat_;
  Frame connected_frame_{Command::CONNECTED};
  Clock::time_point last_write_{};
  Clock::time_point last_read_{};
  uint64_t next_receipt_ = 1;
  uint64_t next_subscription_ = 1;
  std::set<std::string> pending_receipts_;
  std::map<std::string, Subscription> subscriptions_;
};

}  // namespace gridpipe::stomp
