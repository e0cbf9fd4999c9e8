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

#include "gridpipe/broker_sim.hpp"

#include <poll.h>
#include <sys/eventfd.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <charconv>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <list>
#include <mutex>
#include <set>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "gridpipe/error.hpp"

namespace gridpipe::broker {

using namespace gridpipe::stomp;
using SteadyClock = std::chrono::steady_clock;

void FaultPlan::apply(const Fault& fault) {
  std::visit(
      [this](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, DropConnection>) {
          drop_after_frames = f.after_frames;
        } else if constexpr (std::is_same_v<T, SwallowReceipts>) {
          swallow_receipts = f.ratio;
        } else {
          delay_delivery = f.delay;
        }
      },
      fault);
}

Fault parse_fault(std::string_view text) {
  auto colon = text.find(':');
  auto kind = text.substr(0, colon);
  std::string_view arg = colon == std::string_view::npos ? std::string_view() : text.substr(colon + 1);
  auto number = [&](auto& out) {
    auto [ptr, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), out);
    if (arg.empty() || ec != std::errc() || ptr != arg.data() + arg.size())
      throw ConfigError(fmt::format("bad fault argument in '{}'", text));
  };
  if (kind == "drop") {
    std::size_t n = 0;
    number(n);
    if (n == 0) throw ConfigError("drop fault needs a positive frame count");
    return DropConnection{n};
  }
  if (kind == "swallow") {
    if (arg.empty()) return SwallowReceipts{1.0};
    double ratio = 0;
    number(ratio);
    if (ratio < 0 || ratio > 1) throw ConfigError("swallow ratio must be within [0, 1]");
    return SwallowReceipts{ratio};
  }
  if (kind == "delay") {
    int64_t ms = 0;
    number(ms);
    if (ms < 0) throw ConfigError("delay must be non-negative");
    return DelayDelivery{milliseconds(ms)};
  }
  throw ConfigError(fmt::format("unknown fault '{}' (expected drop:N, swallow[:RATIO], delay:MS)", text));
}

namespace {

bool is_topic(std::string_view destination) { return destination.rfind("/topic/", 0) == 0; }

struct StoredMessage {
  std::string id;
  std::vector<Header> headers;
  std::string body;
  SteadyClock::time_point not_before{};
};

struct SubscriberRef {
  uint64_t connection;
  std::string id;
  AckMode mode;
};

struct Destination {
  std::deque<StoredMessage> fifo;
  std::vector<SubscriberRef> subscribers;
  std::size_t next_subscriber = 0;
  DestinationStats stats;
};

struct PendingAck {
  uint64_t connection;
  std::string subscription;
  std::string destination;
  uint64_t sequence;
  StoredMessage message;
};

struct Connection {
  uint64_t id = 0;
  UniqueFd socket;
  std::unique_ptr<Transport> transport;
  UniqueFd wake;
  Version version = Version::v1_0;
  bool connected = false;
  std::size_t frames_received = 0;
  NegotiatedHeartbeat heartbeat;
  // subscription id -> destination; guarded by the broker state mutex
  std::map<std::string, std::string> subscriptions;

  std::mutex out_mutex;
  std::string outbox;
  bool close_after_flush = false;
  std::atomic<bool> abort{false};
  std::atomic<bool> done{false};
  std::thread thread;

  void push(std::string_view bytes) {
    {
      std::lock_guard lock(out_mutex);
      outbox.append(bytes);
    }
    notify();
  }
  void notify() {
    uint64_t one = 1;
    [[maybe_unused]] auto rc = ::write(wake.get(), &one, sizeof one);
  }
  void drain_wake() {
    uint64_t value;
    [[maybe_unused]] auto rc = ::read(wake.get(), &value, sizeof value);
  }
};

class BrokerImpl final : public Broker {
 public:
  explicit BrokerImpl(BrokerOptions options) : options_(std::move(options)), faults_(options_.faults) {
    if (options_.tls && options_.tls->enabled) tls_.emplace(TlsContext::server(*options_.tls));
    listener_ = listen_tcp(options_.host, options_.port);
    port_ = local_port(listener_.get());
    wake_ = UniqueFd(::eventfd(0, EFD_NONBLOCK | EFD_CLOEXEC));
    acceptor_ = std::thread([this] { accept_loop(); });
    ticker_ = std::thread([this] { tick_loop(); });
    spdlog::debug("broker-sim listening on {}:{}{}", options_.host, port_, tls_ ? " (TLS)" : "");
  }

  ~BrokerImpl() override { shutdown(); }

  uint16_t port() const noexcept override { return port_; }
  std::string host() const override { return options_.host; }

  void inject_fault(const Fault& fault) override {
    std::lock_guard lock(mutex_);
    faults_.apply(fault);
  }

  void clear_faults() override {
    std::lock_guard lock(mutex_);
    faults_ = FaultPlan{};
  }

  std::map<std::string, DestinationStats> stats() const override {
    std::lock_guard lock(mutex_);
    std::map<std::string, DestinationStats> out;
    for (const auto& [name, dest] : destinations_) {
      auto s = dest.stats;
      s.stored = dest.fifo.size();
      s.pending = 0;
      for (const auto& [id, p] : pending_)
        if (p.destination == name) ++s.pending;
      out[name] = s;
    }
    return out;
  }

  std::size_t connection_count() const override {
    std::lock_guard lock(mutex_);
    return connections_.size();
  }

  uint64_t connections_accepted() const override { return accepted_.load(); }

  void shutdown() override {
    if (stopping_.exchange(true)) return;
    uint64_t one = 1;
    [[maybe_unused]] auto rc = ::write(wake_.get(), &one, sizeof one);
    {
      std::lock_guard lock(tick_mutex_);
    }
    tick_cv_.notify_all();
    if (acceptor_.joinable()) acceptor_.join();
    if (ticker_.joinable()) ticker_.join();
    std::list<std::shared_ptr<Connection>> all;
    {
      std::lock_guard lock(threads_mutex_);
      all = threads_;
      threads_.clear();
    }
    for (auto& conn : all) {
      conn->abort = true;
      conn->notify();
    }
    for (auto& conn : all)
      if (conn->thread.joinable()) conn->thread.join();
    listener_.reset();
  }

 private:
  void accept_loop() {
    while (!stopping_) {
      pollfd fds[2] = {{listener_.get(), POLLIN, 0}, {wake_.get(), POLLIN, 0}};
      int rc = ::poll(fds, 2, 200);
      reap_finished();
      if (rc <= 0 || stopping_) continue;
      if (!(fds[0].revents & POLLIN)) continue;
      int fd = ::accept4(listener_.get(), nullptr, nullptr, SOCK_CLOEXEC);
      if (fd < 0) continue;
      auto conn = std::make_shared<Connection>();
      conn->id = ++next_connection_;
      conn->socket = UniqueFd(fd);
      conn->wake = UniqueFd(::eventfd(0, EFD_NONBLOCK | EFD_CLOEXEC));
      ++accepted_;
      {
        std::lock_guard lock(threads_mutex_);
        threads_.push_back(conn);
      }
      conn->thread = std::thread([this, conn] { serve_connection(conn); });
    }
  }

  void reap_finished() {
    std::list<std::shared_ptr<Connection>> finished;
    {
      std::lock_guard lock(threads_mutex_);
      for (auto it = threads_.begin(); it != threads_.end();) {
        if ((*it)->done) {
          finished.push_back(*it);
          it = threads_.erase(it);
        } else {
          ++it;
        }
      }
    }
    for (auto& conn : finished)
      if (conn->thread.joinable()) conn->thread.join();
  }

  void tick_loop() {
    std::unique_lock lock(tick_mutex_);
    while (!stopping_) {
      tick_cv_.wait_for(lock, std::chrono::milliseconds(5));
      std::lock_guard state(mutex_);
      if (delayed_ == 0) continue;
      for (auto& [name, dest] : destinations_) dispatch(name, dest);
    }
  }

  void serve_connection(const std::shared_ptr<Connection>& conn) {
    try {
      if (tls_) {
        conn->transport = tls_->accept(std::move(conn->socket), milliseconds(10000));
      } else {
        conn->transport = std::make_unique<TcpTransport>(std::move(conn->socket));
      }
      {
        std::lock_guard lock(mutex_);
        connections_[conn->id] = conn;
      }
      run_connection(*conn);
    } catch (const std::exception& e) {
      spdlog::debug("broker-sim connection {} ended: {}", conn->id, e.what());
    }
    if (conn->transport) conn->transport->close();
    {
      std::lock_guard lock(mutex_);
      release_connection(*conn);
    }
    conn->done = true;
  }

  void run_connection(Connection& conn) {
    FrameDecoder decoder(Version::v1_0, options_.max_frame_size);
    auto last_read = SteadyClock::now();
    auto last_write = SteadyClock::now();
    for (;;) {
      if (conn.abort || stopping_) return;
      std::string out;
      bool close_now = false;
      {
        std::lock_guard lock(conn.out_mutex);
        out.swap(conn.outbox);
        close_now = conn.close_after_flush;
      }
      if (!out.empty()) {
        conn.transport->write_all(out);
        last_write = SteadyClock::now();
      }
      if (close_now) return;

      auto now = SteadyClock::now();
      milliseconds wait(100);
      if (conn.heartbeat.send_interval.count() > 0) {
        if (now - last_write >= conn.heartbeat.send_interval) {
          conn.transport->write_all("\n");
          last_write = now;
        }
        auto due = std::chrono::ceil<milliseconds>(last_write + conn.heartbeat.send_interval - now);
        wait = std::min(wait, std::max(due, milliseconds(1)));
      }
      if (conn.heartbeat.receive_timeout.count() > 0 &&
          now - last_read > 2 * conn.heartbeat.receive_timeout) {
        spdlog::debug("broker-sim connection {}: client heart-beat missed", conn.id);
        return;
      }

      std::string data = conn.transport->read_some(wait, conn.wake.get());
      conn.drain_wake();
      if (data.empty()) continue;
      last_read = SteadyClock::now();
      decoder.feed(data);
      for (;;) {
        std::optional<Frame> frame;
        try {
          frame = decoder.next();
        } catch (const ProtocolError& e) {
          send_error(conn, "malformed frame", e.what());
          break;
        }
        if (!frame) break;
        std::size_t before;
        {
          std::lock_guard lock(conn.out_mutex);
          before = conn.outbox.size();
        }
        {
          std::lock_guard lock(mutex_);
          handle_frame(conn, *frame);
          decoder.set_version(conn.version);
        }
        if (conn.abort) {
          // Replies to earlier frames still go out; this frame's reply is lost.
          std::string partial;
          {
            std::lock_guard lock(conn.out_mutex);
            partial = conn.outbox.substr(0, before);
          }
          if (!partial.empty() && !stopping_) conn.transport->write_all(partial);
          return;
        }
        std::lock_guard lock(conn.out_mutex);
        if (conn.close_after_flush) break;
      }
    }
  }

  // Requires mutex_.
  void send_frame(Connection& conn, const Frame& frame) { conn.push(encode(frame, conn.version)); }

  void send_error(Connection& conn, std::string_view message, std::string_view detail) {
    Frame error(Command::ERROR, {{"message", std::string(message)}}, std::string(detail));
    conn.push(encode(error, conn.version));
    std::lock_guard lock(conn.out_mutex);
    conn.close_after_flush = true;
  }

  // Requires mutex_.
  bool swallow_receipt() {
    double ratio = faults_.swallow_receipts;
    uint64_t n = receipts_seen_++;
    if (ratio <= 0) return false;
    return std::floor(double(n + 1) * ratio + 1e-9) > std::floor(double(n) * ratio + 1e-9);
  }

  // Requires mutex_.
  void handle_frame(Connection& conn, const Frame& frame) {
    ++conn.frames_received;
    if (!conn.connected) {
      if (frame.command != Command::CONNECT) {
        send_error(conn, "expected CONNECT", std::string(to_string(frame.command)));
        return;
      }
      handle_connect(conn, frame);
      return;
    }

    switch (frame.command) {
      case Command::SEND: handle_send(conn, frame); break;
      case Command::SUBSCRIBE: handle_subscribe(conn, frame); break;
      case Command::UNSUBSCRIBE: handle_unsubscribe(conn, frame); break;
      case Command::ACK: handle_ack(conn, frame, true); break;
      case Command::NACK: handle_ack(conn, frame, false); break;
      case Command::BEGIN:
      case Command::COMMIT:
      case Command::ABORT: break;
      case Command::DISCONNECT: {
        std::lock_guard lock(conn.out_mutex);
        conn.close_after_flush = true;
        break;
      }
      default:
        send_error(conn, "unexpected frame", std::string(to_string(frame.command)));
        return;
    }

    if (auto receipt = frame.header("receipt")) {
      if (swallow_receipt()) {
        spdlog::debug("broker-sim: swallowing receipt {}", *receipt);
      } else {
        send_frame(conn, Frame(Command::RECEIPT, {{"receipt-id", std::string(*receipt)}}));
      }
    }

    if (faults_.drop_after_frames && conn.frames_received >= *faults_.drop_after_frames) {
      spdlog::debug("broker-sim: dropping connection {} after {} frames", conn.id, conn.frames_received);
      conn.abort = true;
    }
  }

  void handle_connect(Connection& conn, const Frame& frame) {
    auto accept = frame.header("accept-version").value_or("1.0");
    std::set<std::string_view> versions;
    for (std::size_t start = 0; start <= accept.size();) {
      auto comma = accept.find(',', start);
      versions.insert(accept.substr(start, comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (versions.count("1.2")) {
      conn.version = Version::v1_2;
    } else if (versions.count("1.0")) {
      conn.version = Version::v1_0;
    } else {
      send_error(conn, "unsupported protocol version", std::string(accept));
      return;
    }
    if ((options_.login && frame.header("login") != std::optional<std::string_view>(*options_.login)) ||
        (options_.passcode &&
         frame.header("passcode") != std::optional<std::string_view>(*options_.passcode))) {
      send_error(conn, "authentication failed", "bad login or passcode");
      return;
    }
    auto client_hb = parse_heartbeat(frame.header("heart-beat").value_or("0,0")).value_or(Heartbeat{});
    // Seen from the broker, the client is the "other side".
    conn.heartbeat = negotiate_heartbeat(options_.heartbeat, client_hb);
    conn.connected = true;
    Frame connected(Command::CONNECTED);
    connected.add_header("version", std::string(to_string(conn.version)));
    connected.add_header("heart-beat", format_heartbeat(options_.heartbeat));
    connected.add_header("session", fmt::format("session-{}", conn.id));
    connected.add_header("server", "gridpipe-broker-sim/1.0");
    send_frame(conn, connected);
  }

  void handle_send(Connection& conn, const Frame& frame) {
    auto destination = frame.header("destination");
    if (!destination || destination->empty()) {
      send_error(conn, "SEND without destination", "");
      return;
    }
    StoredMessage message;
    message.id = fmt::format("msg-{}", ++next_message_);
    message.body = frame.body;
    std::set<std::string_view> seen;
    for (const auto& [key, value] : frame.headers) {
      if (key == "destination" || key == "receipt" || key == "content-length" || key == "transaction")
        continue;
      if (!seen.insert(key).second) continue;
      message.headers.emplace_back(key, value);
    }
    std::string name(*destination);
    Destination& dest = destinations_[name];
    ++dest.stats.enqueued;
    if (is_topic(name)) {
      for (const auto& sub : dest.subscribers) {
        StoredMessage copy = message;
        copy.id = fmt::format("msg-{}", ++next_message_);
        deliver(name, dest, sub, std::move(copy));
      }
      return;
    }
    if (faults_.delay_delivery.count() > 0) {
      message.not_before = SteadyClock::now() + faults_.delay_delivery;
      ++delayed_;
    }
    dest.fifo.push_back(std::move(message));
    dispatch(name, dest);
  }

  void handle_subscribe(Connection& conn, const Frame& frame) {
    auto destination = frame.header("destination");
    auto id = frame.header("id");
    if (!destination) {
      send_error(conn, "SUBSCRIBE without destination", "");
      return;
    }
    // STOMP 1.0 allows omitting the id; the destination doubles as one then.
    std::string sub_id(id ? *id : *destination);
    auto mode = parse_ack_mode(frame.header("ack").value_or("auto"));
    if (!mode) {
      send_error(conn, "invalid ack mode", std::string(*frame.header("ack")));
      return;
    }
    if (conn.subscriptions.count(sub_id)) {
      send_error(conn, "duplicate subscription id", sub_id);
      return;
    }
    std::string name(*destination);
    conn.subscriptions[sub_id] = name;
    Destination& dest = destinations_[name];
    dest.subscribers.push_back({conn.id, sub_id, *mode});
    dispatch(name, dest);
  }

  void handle_unsubscribe(Connection& conn, const Frame& frame) {
    auto id = frame.header("id");
    if (!id) id = frame.header("destination");
    if (!id) {
      send_error(conn, "UNSUBSCRIBE without id", "");
      return;
    }
    std::string sub_id(*id);
    auto it = conn.subscriptions.find(sub_id);
    if (it == conn.subscriptions.end()) return;
    std::string name = it->second;
    conn.subscriptions.erase(it);
    remove_subscriber(name, conn.id, sub_id);
    requeue_where([&](const PendingAck& p) { return p.connection == conn.id && p.subscription == sub_id; });
  }

  void handle_ack(Connection& conn, const Frame& frame, bool positive) {
    std::optional<std::string_view> id =
        conn.version == Version::v1_2 ? frame.header("id") : frame.header("message-id");
    if (!id) id = frame.header("message-id");
    if (!id) {
      send_error(conn, "ACK/NACK without id", "");
      return;
    }
    auto it = pending_.find(std::string(*id));
    if (it == pending_.end() || it->second.connection != conn.id) {
      spdlog::debug("broker-sim: ignoring {} for unknown message {}", positive ? "ACK" : "NACK", *id);
      return;
    }
    const PendingAck target = it->second;
    Destination& dest = destinations_[target.destination];
    AckMode mode = AckMode::client_individual;
    for (const auto& sub : dest.subscribers)
      if (sub.connection == conn.id && sub.id == target.subscription) mode = sub.mode;

    auto covered = [&](const PendingAck& p) {
      if (p.connection != conn.id || p.subscription != target.subscription) return false;
      return mode == AckMode::client ? p.sequence <= target.sequence : p.sequence == target.sequence;
    };
    if (positive) {
      for (auto p = pending_.begin(); p != pending_.end();) {
        if (covered(p->second)) {
          ++destinations_[p->second.destination].stats.acked;
          p = pending_.erase(p);
        } else {
          ++p;
        }
      }
    } else {
      requeue_where(covered);
    }
  }

  void remove_subscriber(const std::string& name, uint64_t connection, const std::string& sub_id) {
    auto dit = destinations_.find(name);
    if (dit == destinations_.end()) return;
    auto& subs = dit->second.subscribers;
    std::erase_if(subs, [&](const SubscriberRef& s) { return s.connection == connection && s.id == sub_id; });
  }

  // Returns matching unacknowledged messages to the front of their queues,
  // preserving their original order.
  template <typename Pred>
  void requeue_where(Pred pred) {
    std::map<uint64_t, PendingAck> ordered;
    for (auto p = pending_.begin(); p != pending_.end();) {
      if (pred(p->second)) {
        ordered.emplace(p->second.sequence, std::move(p->second));
        p = pending_.erase(p);
      } else {
        ++p;
      }
    }
    std::set<std::string> touched;
    for (auto it = ordered.rbegin(); it != ordered.rend(); ++it) {
      auto& p = it->second;
      Destination& dest = destinations_[p.destination];
      if (is_topic(p.destination)) continue;
      ++dest.stats.requeued;
      p.message.not_before = {};
      dest.fifo.push_front(std::move(p.message));
      touched.insert(p.destination);
    }
    for (const auto& name : touched) dispatch(name, destinations_[name]);
  }

  void release_connection(Connection& conn) {
    connections_.erase(conn.id);
    for (const auto& [sub_id, name] : conn.subscriptions) remove_subscriber(name, conn.id, sub_id);
    conn.subscriptions.clear();
    requeue_where([&](const PendingAck& p) { return p.connection == conn.id; });
  }

  void dispatch(const std::string& name, Destination& dest) {
    auto now = SteadyClock::now();
    while (!dest.fifo.empty() && !dest.subscribers.empty()) {
      auto& head = dest.fifo.front();
      if (head.not_before != SteadyClock::time_point{}) {
        if (head.not_before > now) return;
        head.not_before = {};
        --delayed_;
      }
      const SubscriberRef sub = dest.subscribers[dest.next_subscriber++ % dest.subscribers.size()];
      StoredMessage message = std::move(head);
      dest.fifo.pop_front();
      deliver(name, dest, sub, std::move(message));
    }
  }

  void deliver(const std::string& name, Destination& dest, const SubscriberRef& sub, StoredMessage message) {
    auto cit = connections_.find(sub.connection);
    if (cit == connections_.end()) return;
    Connection& conn = *cit->second;
    Frame frame(Command::MESSAGE);
    frame.add_header("destination", name);
    frame.add_header("message-id", message.id);
    frame.add_header("subscription", sub.id);
    if (conn.version == Version::v1_2 && sub.mode != AckMode::automatic) frame.add_header("ack", message.id);
    for (const auto& [key, value] : message.headers) {
      if (key == "message-id" || key == "subscription" || key == "ack") continue;
      // A 1.0 client cannot receive values with line breaks.
      if (conn.version == Version::v1_0 &&
          (key.find_first_of(":\r\n") != std::string::npos || value.find_first_of("\r\n") != std::string::npos))
        continue;
      frame.add_header(key, value);
    }
    frame.body = message.body;
    send_frame(conn, frame);
    ++dest.stats.delivered;
    if (sub.mode == AckMode::automatic) {
      ++dest.stats.acked;
      return;
    }
    std::string key = message.id;
    pending_.emplace(std::move(key), PendingAck{conn.id, sub.id, name, ++next_sequence_, std::move(message)});
  }

  BrokerOptions options_;
  std::optional<TlsContext> tls_;
  UniqueFd listener_;
  UniqueFd wake_;
  uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::thread ticker_;
  std::mutex tick_mutex_;
  std::condition_variable tick_cv_;

  std::mutex threads_mutex_;
  std::list<std::shared_ptr<Connection>> threads_;
  std::atomic<uint64_t> accepted_{0};
  uint64_t next_connection_ = 0;

  mutable std::mutex mutex_;
  FaultPlan faults_;
  std::map<uint64_t, std::shared_ptr<Connection>> connections_;
  std::map<std::string, Destination> destinations_;
  std::map<std::string, PendingAck> pending_;
  uint64_t next_message_ = 0;
  uint64_t next_sequence_ = 0;
  uint64_t receipts_seen_ = 0;
  std::size_t delayed_ = 0;
};

}  // namespace

std::unique_ptr<Broker> Broker::serve(BrokerOptions options) {
  return std::make_unique<BrokerImpl>(std::move(options));
}

}  // namespace gridpipe::broker
