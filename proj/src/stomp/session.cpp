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

#include "gridpipe/stomp/session.hpp"

#include <algorithm>
#include <charconv>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace gridpipe::stomp {

namespace {

class SteadyClock final : public Clock {
 public:
  time_point now() const override { return std::chrono::steady_clock::now(); }
};

std::optional<uint32_t> parse_u32(std::string_view text) {
  uint32_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

milliseconds ceil_ms(Clock::time_point::duration d) {
  auto ms = std::chrono::ceil<milliseconds>(d);
  return ms.count() > 0 ? ms : milliseconds(0);
}

}  // namespace

const Clock& steady_clock() {
  static const SteadyClock clock;
  return clock;
}

std::optional<Heartbeat> parse_heartbeat(std::string_view text) noexcept {
  auto comma = text.find(',');
  if (comma == std::string_view::npos) return std::nullopt;
  auto trim = [](std::string_view s) {
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
    return s;
  };
  auto x = parse_u32(trim(text.substr(0, comma)));
  auto y = parse_u32(trim(text.substr(comma + 1)));
  if (!x || !y) return std::nullopt;
  return Heartbeat{*x, *y};
}

std::string format_heartbeat(Heartbeat hb) { return fmt::format("{},{}", hb.send_ms, hb.receive_ms); }

NegotiatedHeartbeat negotiate_heartbeat(Heartbeat client, Heartbeat server) noexcept {
  NegotiatedHeartbeat out;
  if (client.send_ms > 0 && server.receive_ms > 0)
    out.send_interval = milliseconds(std::max(client.send_ms, server.receive_ms));
  if (client.receive_ms > 0 && server.send_ms > 0)
    out.receive_timeout = milliseconds(std::max(client.receive_ms, server.send_ms));
  return out;
}

std::string_view to_string(AckMode mode) noexcept {
  switch (mode) {
    case AckMode::automatic: return "auto";
    case AckMode::client: return "client";
    case AckMode::client_individual: return "client-individual";
  }
  return "auto";
}

std::optional<AckMode> parse_ack_mode(std::string_view text) noexcept {
  if (text == "auto") return AckMode::automatic;
  if (text == "client") return AckMode::client;
  if (text == "client-individual") return AckMode::client_individual;
  return std::nullopt;
}

std::string_view to_string(SessionState state) noexcept {
  switch (state) {
    case SessionState::disconnected: return "disconnected";
    case SessionState::connecting: return "connecting";
    case SessionState::connected: return "connected";
    case SessionState::closed: return "closed";
  }
  return "?";
}

BrokerError::BrokerError(Frame frame)
    : Error(fmt::format("broker error: {}{}{}", frame.header("message").value_or("(no message)"),
                        frame.body.empty() ? "" : ": ", frame.body)),
      frame_(std::move(frame)) {}

ClientSession::ClientSession(std::unique_ptr<Transport> transport, SessionOptions options,
                             const Clock& clock)
    : transport_(std::move(transport)),
      options_(std::move(options)),
      clock_(clock),
      decoder_(Version::v1_0, options_.max_frame_size) {}

ClientSession::~ClientSession() {
  if (transport_) transport_->close();
}

std::string_view ClientSession::transport_kind() const noexcept {
  return transport_ ? transport_->kind() : "none";
}

void ClientSession::fail() noexcept {
  state_ = SessionState::closed;
  if (transport_) transport_->close();
}

// A write can fail while replies to earlier frames still sit unread in the
// socket; keep them for take_late_receipts().
void ClientSession::salvage() noexcept {
  try {
    for (int i = 0; i < 256; ++i) {
      std::string data = transport_->read_some(milliseconds(0));
      if (data.empty()) break;
      decoder_.feed(data);
    }
  } catch (const std::exception&) {
  }
}

std::vector<std::string> ClientSession::take_late_receipts() {
  std::vector<std::string> ids;
  if (state_ == SessionState::connected) return ids;
  try {
    while (auto frame = decoder_.next()) {
      if (frame->command != Command::RECEIPT) continue;
      std::string id(frame->header("receipt-id").value_or(""));
      if (pending_receipts_.erase(id)) ids.push_back(std::move(id));
    }
  } catch (const ProtocolError&) {
  }
  return ids;
}

void ClientSession::require_connected(std::string_view op) const {
  if (state_ != SessionState::connected)
    throw ProtocolMisuse(fmt::format("{} requires a connected session (state {})", op, to_string(state_)));
}

void ClientSession::write_raw(std::string_view bytes) {
  try {
    transport_->write_all(bytes);
  } catch (const ConnectionError&) {
    salvage();
    fail();
    throw;
  }
  last_write_ = clock_.now();
}

void ClientSession::write_frame(const Frame& frame) { write_raw(encode(frame, version_)); }

std::optional<Frame> ClientSession::read_frame(Clock::time_point deadline) {
  for (;;) {
    std::optional<Frame> frame;
    try {
      frame = decoder_.next();
    } catch (const ProtocolError&) {
      fail();
      throw;
    }
    if (frame) return frame;
    auto now = clock_.now();
    if (now >= deadline) return std::nullopt;
    std::string data;
    try {
      data = transport_->read_some(ceil_ms(deadline - now));
    } catch (const ConnectionError&) {
      fail();
      throw;
    }
    if (!data.empty()) {
      last_read_ = clock_.now();
      decoder_.feed(data);
    }
  }
}

void ClientSession::connect() {
  if (state_ != SessionState::disconnected)
    throw ProtocolMisuse(fmt::format("connect in state {}", to_string(state_)));
  Frame connect_frame(Command::CONNECT);
  connect_frame.add_header("accept-version", "1.0,1.2");
  connect_frame.add_header("host", options_.vhost);
  connect_frame.add_header("heart-beat", format_heartbeat(options_.heartbeat));
  if (options_.login) connect_frame.add_header("login", *options_.login);
  if (options_.passcode) connect_frame.add_header("passcode", *options_.passcode);
  state_ = SessionState::connecting;
  write_frame(connect_frame);

  auto deadline = clock_.now() + options_.connect_timeout;
  for (;;) {
    auto frame = read_frame(deadline);
    if (!frame) {
      fail();
      throw ConnectionError("timed out waiting for CONNECTED");
    }
    if (frame->command == Command::ERROR) {
      fail();
      throw BrokerError(std::move(*frame));
    }
    if (frame->command != Command::CONNECTED) {
      spdlog::debug("ignoring {} frame before CONNECTED", to_string(frame->command));
      continue;
    }
    auto version = frame->header("version").value_or("1.0");
    if (version == "1.2") {
      version_ = Version::v1_2;
    } else if (version == "1.0") {
      version_ = Version::v1_0;
    } else {
      fail();
      throw ConnectionError(fmt::format("broker chose unsupported STOMP version '{}'", version));
    }
    server_heartbeat_ = parse_heartbeat(frame->header("heart-beat").value_or("0,0")).value_or(Heartbeat{});
    heartbeat_ = negotiate_heartbeat(options_.heartbeat, server_heartbeat_);
    decoder_.set_version(version_);
    connected_frame_ = std::move(*frame);
    state_ = SessionState::connected;
    last_read_ = clock_.now();
    return;
  }
}

std::optional<std::string> ClientSession::send(std::string_view destination,
                                               const std::vector<Header>& extra_headers,
                                               std::string_view body, bool want_receipt) {
  require_connected("send");
  Frame frame(Command::SEND);
  frame.add_header("destination", std::string(destination));
  for (const auto& [key, value] : extra_headers) {
    if (key == "destination" || key == "content-length" || key == "receipt") continue;
    frame.add_header(key, value);
  }
  std::optional<std::string> receipt;
  if (want_receipt) {
    receipt = fmt::format("rcpt-{}", next_receipt_++);
    frame.add_header("receipt", *receipt);
  }
  frame.body = std::string(body);
  std::string wire = encode(frame, version_);  // may throw before any byte is sent
  if (receipt) pending_receipts_.insert(*receipt);
  write_raw(wire);
  return receipt;
}

std::string ClientSession::subscribe(std::string_view destination, AckMode mode,
                                     const std::vector<Header>& extra_headers) {
  require_connected("subscribe");
  std::string id = fmt::format("sub-{}", next_subscription_++);
  Frame frame(Command::SUBSCRIBE);
  frame.add_header("destination", std::string(destination));
  frame.add_header("id", id);
  frame.add_header("ack", std::string(to_string(mode)));
  for (const auto& h : extra_headers)
    if (h.first != "destination" && h.first != "id" && h.first != "ack") frame.headers.push_back(h);
  write_frame(frame);
  subscriptions_[id] = Subscription{std::string(destination), mode};
  return id;
}

void ClientSession::unsubscribe(const std::string& id) {
  require_connected("unsubscribe");
  if (!subscriptions_.count(id)) throw ProtocolMisuse(fmt::format("unknown subscription '{}'", id));
  write_frame(Frame(Command::UNSUBSCRIBE, {{"id", id}}));
  subscriptions_.erase(id);
}

const Subscription& ClientSession::subscription_of(const Frame& message, std::string_view op) const {
  if (message.command != Command::MESSAGE)
    throw ProtocolMisuse(fmt::format("{} needs a MESSAGE frame", op));
  auto sub = message.header("subscription");
  if (!sub) throw ProtocolMisuse(fmt::format("{}: message has no subscription header", op));
  auto it = subscriptions_.find(std::string(*sub));
  if (it == subscriptions_.end())
    throw ProtocolMisuse(fmt::format("{}: message belongs to unknown subscription '{}'", op, *sub));
  if (it->second.ack_mode == AckMode::automatic)
    throw ProtocolMisuse(fmt::format("{} on an auto-acknowledged subscription", op));
  return it->second;
}

void ClientSession::ack(const Frame& message) {
  require_connected("ack");
  subscription_of(message, "ack");
  Frame frame(Command::ACK);
  if (version_ == Version::v1_2) {
    auto id = message.header("ack");
    if (!id) throw ProtocolMisuse("ack: message has no ack header");
    frame.add_header("id", std::string(*id));
  } else {
    auto id = message.header("message-id");
    if (!id) throw ProtocolMisuse("ack: message has no message-id header");
    frame.add_header("message-id", std::string(*id));
    frame.add_header("subscription", std::string(*message.header("subscription")));
  }
  write_frame(frame);
}

void ClientSession::nack(const Frame& message) {
  require_connected("nack");
  if (version_ == Version::v1_0) throw ProtocolMisuse("NACK is not part of STOMP 1.0");
  subscription_of(message, "nack");
  auto id = message.header("ack");
  if (!id) throw ProtocolMisuse("nack: message has no ack header");
  write_frame(Frame(Command::NACK, {{"id", std::string(*id)}}));
}

SessionEvent ClientSession::poll(Clock::time_point deadline) {
  require_connected("poll");
  auto recv_limit = std::chrono::duration_cast<Clock::time_point::duration>(
      heartbeat_.receive_timeout * options_.heartbeat_grace);
  for (;;) {
    std::optional<Frame> frame;
    try {
      frame = decoder_.next();
    } catch (const ProtocolError&) {
      fail();
      throw;
    }
    if (frame) {
      switch (frame->command) {
        case Command::MESSAGE:
          return MessageEvent{std::move(*frame)};
        case Command::RECEIPT: {
          std::string id(frame->header("receipt-id").value_or(""));
          if (pending_receipts_.erase(id)) return ReceiptEvent{std::move(id)};
          spdlog::debug("ignoring unsolicited receipt '{}'", id);
          continue;
        }
        case Command::ERROR:
          fail();
          return ErrorEvent{std::move(*frame)};
        default:
          spdlog::debug("ignoring unexpected {} frame", to_string(frame->command));
          continue;
      }
    }

    auto now = clock_.now();
    if (heartbeat_.send_interval.count() > 0 && now - last_write_ >= heartbeat_.send_interval) {
      write_raw("\n");
      now = clock_.now();
    }
    if (heartbeat_.receive_timeout.count() > 0 && now - last_read_ >= recv_limit)
      return HeartbeatTimeout{};
    if (now >= deadline) return Idle{};

    auto wake = deadline;
    if (heartbeat_.send_interval.count() > 0) wake = std::min(wake, last_write_ + heartbeat_.send_interval);
    if (heartbeat_.receive_timeout.count() > 0) wake = std::min(wake, last_read_ + recv_limit);
    std::string data;
    try {
      data = transport_->read_some(ceil_ms(wake - now));
    } catch (const ConnectionError&) {
      fail();
      throw;
    }
    if (!data.empty()) {
      last_read_ = clock_.now();
      decoder_.feed(data);
    }
  }
}

void ClientSession::disconnect() noexcept {
  if (state_ == SessionState::connected) {
    try {
      std::string id = fmt::format("rcpt-{}", next_receipt_++);
      write_frame(Frame(Command::DISCONNECT, {{"receipt", id}}));
      auto deadline = clock_.now() + options_.disconnect_timeout;
      while (state_ == SessionState::connected) {
        auto frame = read_frame(deadline);
        if (!frame) break;
        if (frame->command == Command::RECEIPT && frame->header("receipt-id") == id) break;
      }
    } catch (const std::exception& e) {
      spdlog::debug("disconnect: {}", e.what());
    }
  }
  fail();
}

}  // namespace gridpipe::stomp
