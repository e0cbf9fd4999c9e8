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

#include "gridpipe/forwarder.hpp"

#include <deque>
#include <memory>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "gridpipe/backoff.hpp"
#include "gridpipe/dirq.hpp"
#include "gridpipe/encoding.hpp"
#include "gridpipe/error.hpp"

namespace gridpipe::forwarder {

using stomp::ClientSession;
using SteadyClock = std::chrono::steady_clock;

Message identity_hook(Message message) { return message; }

void validate(const ForwarderConfig& config) {
  bool dirq_to_broker = std::holds_alternative<DirQueueEndpoint>(config.incoming) &&
                        std::holds_alternative<BrokerEndpoint>(config.outgoing);
  bool broker_to_dirq = std::holds_alternative<BrokerEndpoint>(config.incoming) &&
                        std::holds_alternative<DirQueueEndpoint>(config.outgoing);
  if (!dirq_to_broker && !broker_to_dirq)
    throw ConfigError("forwarder needs a dirq source with a broker sink, or a broker source with a dirq sink");
  const auto& broker = std::get<BrokerEndpoint>(dirq_to_broker ? config.outgoing : config.incoming);
  if (broker.uri.destination.empty()) throw ConfigError("forwarder broker endpoint has no destination");
  if (broker_to_dirq && config.reliable && broker.ack_mode &&
      *broker.ack_mode != stomp::AckMode::client_individual)
    throw ConfigError("a reliable broker source must use ack mode client-individual");
  if (config.max_in_flight == 0) throw ConfigError("max-in-flight must be positive");
  if (config.backoff_initial <= 0 || config.backoff_max < config.backoff_initial)
    throw ConfigError("reconnect backoff needs 0 < initial <= max");
}

Message message_from_frame(const stomp::Frame& frame) {
  Message message;
  for (const auto& [key, value] : frame.headers) {
    if (key == "subscription" || key == "message-id" || key == "ack" || key == "content-length") continue;
    message.header.emplace(key, value);  // first occurrence wins
  }
  message.body = frame.body;
  message.text = is_valid_utf8(frame.body);
  return message;
}

namespace {

class Forwarder {
 public:
  Forwarder(const ForwarderConfig& config, const StopSignal& stop)
      : config_(config),
        stop_(stop),
        backoff_(Backoff::seconds(config.backoff_initial), Backoff::seconds(config.backoff_max)) {}

  ForwardReport run() {
    if (std::holds_alternative<DirQueueEndpoint>(config_.incoming)) {
      dirq_to_broker();
    } else {
      broker_to_dirq();
    }
    return report_;
  }

 private:
  struct InFlight {
    dirq::ElementName name;
    std::string receipt;
    SteadyClock::time_point sent;
  };

  void trace(TraceEvent::Kind kind, std::string element, std::string detail = {}) {
    if (config_.trace) config_.trace(TraceEvent{kind, std::move(element), std::move(detail)});
  }

  const BrokerEndpoint& broker() const {
    return std::get<BrokerEndpoint>(std::holds_alternative<BrokerEndpoint>(config_.incoming)
                                        ? config_.incoming
                                        : config_.outgoing);
  }

  dirq::DirQueue& poison_queue(const std::filesystem::path& base) {
    if (!poison_) {
      auto path = config_.poison ? *config_.poison : std::filesystem::path(base.string() + ".poison");
      poison_ = std::make_unique<dirq::DirQueue>(path, dirq::QueueOptions{.sync = config_.sync});
    }
    return *poison_;
  }

  std::unique_ptr<ClientSession> open_session() {
    const auto& ep = broker();
    auto fd = stomp::connect_tcp(ep.uri.host, ep.uri.port, config_.connect_timeout);
    std::unique_ptr<stomp::Transport> transport;
    bool tls = ep.uri.tls || (config_.tls && config_.tls->enabled);
    if (tls) {
      if (!tls_context_) tls_context_.emplace(stomp::TlsContext::client(config_.tls.value_or(stomp::TlsConfig{})));
      transport = tls_context_->connect(std::move(fd), ep.uri.host, config_.connect_timeout);
    } else {
      transport = std::make_unique<stomp::TcpTransport>(std::move(fd));
    }
    stomp::SessionOptions options;
    options.login = ep.login;
    options.passcode = ep.passcode;
    options.vhost = ep.vhost;
    options.heartbeat = config_.heartbeat;
    options.connect_timeout = config_.connect_timeout;
    auto session = std::make_unique<ClientSession>(std::move(transport), options);
    session->connect();
    return session;
  }

  // Connects, sleeping with exponential backoff between failures. Returns
  // null when stopped. Throws once a drain-once run has failed at the cap.
  std::unique_ptr<ClientSession> connect_with_backoff() {
    bool waited_max = false;
    while (!stop_.stop_requested()) {
      try {
        auto session = open_session();
        backoff_.reset();
        return session;
      } catch (const std::exception& e) {
        if (!config_.loop && waited_max)
          throw stomp::ConnectionError(fmt::format("broker {} unreachable: {}", broker().uri.str(), e.what()));
        auto delay = backoff_.next();
        waited_max = delay.count() >= config_.backoff_max;
        spdlog::warn("forwarder: cannot connect to {}: {}; retrying in {:.2f}s", broker().uri.str(), e.what(),
                     delay.count());
        if (stop_.wait_for(std::chrono::duration_cast<SteadyClock::duration>(delay))) break;
      }
    }
    return nullptr;
  }

  void sleep_after_failure(const std::exception& e) {
    auto delay = backoff_.next();
    spdlog::warn("forwarder: connection lost ({}); reconnecting in {:.2f}s", e.what(), delay.count());
    stop_.wait_for(std::chrono::duration_cast<SteadyClock::duration>(delay));
  }

  // --- dirq -> broker ------------------------------------------------------

  void unlock_in_flight(dirq::DirQueue& queue, std::deque<InFlight>& in_flight, bool at_stop) {
    for (auto& f : in_flight) {
      queue.unlock(f.name);
      trace(TraceEvent::Kind::unlocked, f.name.str(), f.receipt);
      if (at_stop) {
        ++report_.in_flight_at_stop;
      } else {
        ++report_.retried;
      }
    }
    in_flight.clear();
  }

  std::size_t confirm(dirq::DirQueue& queue, std::deque<InFlight>& in_flight, const std::string& receipt) {
    auto it = std::find_if(in_flight.begin(), in_flight.end(), [&](const InFlight& f) { return f.receipt == receipt; });
    if (it == in_flight.end()) return 0;
    trace(TraceEvent::Kind::receipt, it->name.str(), it->receipt);
    queue.remove(it->name);
    trace(TraceEvent::Kind::removed, it->name.str(), it->receipt);
    in_flight.erase(it);
    ++report_.forwarded;
    return 1;
  }

  // Handles one session event or receipt timeout. Returns the number of
  // elements confirmed.
  std::size_t pump(ClientSession& session, dirq::DirQueue& queue, std::deque<InFlight>& in_flight, bool at_stop) {
    auto deadline = in_flight.front().sent + config_.receipt_timeout;
    auto event = session.poll(deadline);
    std::size_t confirmed = 0;
    if (auto* receipt = std::get_if<stomp::ReceiptEvent>(&event)) {
      confirmed += confirm(queue, in_flight, receipt->id);
    } else if (auto* error = std::get_if<stomp::ErrorEvent>(&event)) {
      throw stomp::BrokerError(error->frame);
    } else if (std::holds_alternative<stomp::HeartbeatTimeout>(event)) {
      throw stomp::ConnectionError("broker heart-beat timed out");
    }
    auto now = SteadyClock::now();
    while (!in_flight.empty() && in_flight.front().sent + config_.receipt_timeout <= now) {
      auto f = std::move(in_flight.front());
      in_flight.pop_front();
      spdlog::debug("forwarder: no receipt {} for {}; unlocking", f.receipt, f.name.str());
      queue.unlock(f.name);
      trace(TraceEvent::Kind::unlocked, f.name.str(), f.receipt);
      if (at_stop) {
        ++report_.in_flight_at_stop;
      } else {
        ++report_.retried;
      }
    }
    return confirmed;
  }

  // Sends one locked element. Returns false if it was diverted to poison.
  bool send_element(ClientSession& session, dirq::DirQueue& queue, const dirq::ElementName& name,
                    std::deque<InFlight>& in_flight) {
    std::string payload = queue.get(name);
    Message message;
    try {
      message = config_.hook(deserialize(payload));
      validate(message);
    } catch (const std::exception& e) {
      spdlog::warn("forwarder: element {} is unusable ({}); moving to poison queue", name.str(), e.what());
      poison_queue(queue.root()).add(payload);
      queue.remove(name);
      trace(TraceEvent::Kind::poisoned, name.str(), e.what());
      ++report_.failed;
      return false;
    }
    std::string destination = broker().uri.destination;
    if (auto it = message.header.find("destination"); it != message.header.end() && !it->second.empty())
      destination = it->second;
    std::vector<stomp::Header> headers;
    for (const auto& [key, value] : message.header)
      if (key != "destination") headers.emplace_back(key, value);
    std::optional<std::string> receipt;
    try {
      receipt = session.send(destination, headers, message.body, config_.reliable);
    } catch (const UsageError& e) {
      // Not representable on this connection (e.g. STOMP 1.0 and a header
      // with a line break).
      spdlog::warn("forwarder: element {} cannot be encoded ({}); moving to poison queue", name.str(), e.what());
      poison_queue(queue.root()).add(payload);
      queue.remove(name);
      trace(TraceEvent::Kind::poisoned, name.str(), e.what());
      ++report_.failed;
      return false;
    }
    trace(TraceEvent::Kind::sent, name.str(), receipt.value_or(""));
    if (!config_.reliable) {
      queue.remove(name);
      trace(TraceEvent::Kind::removed, name.str());
      ++report_.forwarded;
      return true;
    }
    in_flight.push_back({name, *receipt, SteadyClock::now()});
    return true;
  }

  void dirq_to_broker() {
    const auto& source = std::get<DirQueueEndpoint>(config_.incoming);
    dirq::DirQueue queue(source.path, {.granularity = source.granularity, .sync = config_.sync});
    std::unique_ptr<ClientSession> session;
    std::deque<InFlight> in_flight;
    int idle_passes = 0;

    while (!stop_.stop_requested()) {
      if (!session) {
        session = connect_with_backoff();
        if (!session) break;
      }
      try {
        auto names = queue.elements();
        if (names.empty()) {
          if (!config_.loop) break;
          session->poll_for(config_.poll_interval);  // keeps heart-beats flowing
          continue;
        }
        std::size_t before = report_.forwarded + report_.failed;
        for (const auto& name : names) {
          if (stop_.stop_requested()) break;
          while (in_flight.size() >= config_.max_in_flight) pump(*session, queue, in_flight, false);
          if (!queue.lock(name)) continue;
          trace(TraceEvent::Kind::locked, name.str());
          try {
            send_element(*session, queue, name, in_flight);
          } catch (...) {
            if (queue.holds_lock(name) &&
                std::none_of(in_flight.begin(), in_flight.end(), [&](const InFlight& f) { return f.name == name; })) {
              queue.unlock(name);
              trace(TraceEvent::Kind::unlocked, name.str());
              ++report_.retried;
            }
            throw;
          }
        }
        bool stopping = stop_.stop_requested();
        while (!in_flight.empty()) pump(*session, queue, in_flight, stopping);
        if (report_.forwarded + report_.failed > before) {
          idle_passes = 0;
        } else if (!config_.loop && ++idle_passes >= config_.max_idle_passes) {
          spdlog::warn("forwarder: {} passes without progress; giving up on {} element(s)", idle_passes,
                       queue.count());
          break;
        }
      } catch (const Error& e) {
        if (dynamic_cast<const stomp::ConnectionError*>(&e) == nullptr &&
            dynamic_cast<const stomp::BrokerError*>(&e) == nullptr &&
            dynamic_cast<const stomp::ProtocolError*>(&e) == nullptr)
          throw;
        if (session)
          for (const auto& id : session->take_late_receipts()) confirm(queue, in_flight, id);
        unlock_in_flight(queue, in_flight, false);
        session.reset();
        sleep_after_failure(e);
      }
    }
    if (!in_flight.empty()) unlock_in_flight(queue, in_flight, true);
    if (session) session->disconnect();
  }

  // --- broker -> dirq ------------------------------------------------------

  void broker_to_dirq() {
    const auto& sink_ep = std::get<DirQueueEndpoint>(config_.outgoing);
    dirq::DirQueue sink(sink_ep.path, {.granularity = sink_ep.granularity, .sync = config_.sync});
    const auto& ep = broker();
    stomp::AckMode mode = ep.ack_mode.value_or(config_.reliable ? stomp::AckMode::client_individual
                                                                : stomp::AckMode::automatic);
    std::unique_ptr<ClientSession> session;
    auto last_activity = SteadyClock::now();

    while (!stop_.stop_requested()) {
      if (!session) {
        session = connect_with_backoff();
        if (!session) break;
        try {
          session->subscribe(ep.uri.destination, mode);
        } catch (const stomp::ConnectionError& e) {
          session.reset();
          sleep_after_failure(e);
          continue;
        }
        last_activity = SteadyClock::now();
      }
      try {
        auto event = session->poll_for(std::min(config_.poll_interval, config_.idle_timeout));
        if (auto* msg = std::get_if<stomp::MessageEvent>(&event)) {
          last_activity = SteadyClock::now();
          store_message(*session, sink, msg->frame, mode);
        } else if (auto* error = std::get_if<stomp::ErrorEvent>(&event)) {
          throw stomp::BrokerError(error->frame);
        } else if (std::holds_alternative<stomp::HeartbeatTimeout>(event)) {
          throw stomp::ConnectionError("broker heart-beat timed out");
        } else if (!config_.loop && SteadyClock::now() - last_activity >= config_.idle_timeout) {
          break;
        }
      } catch (const Error& e) {
        if (dynamic_cast<const stomp::ConnectionError*>(&e) == nullptr &&
            dynamic_cast<const stomp::BrokerError*>(&e) == nullptr &&
            dynamic_cast<const stomp::ProtocolError*>(&e) == nullptr)
          throw;
        ++report_.retried;
        session.reset();
        sleep_after_failure(e);
      }
    }
    if (session) session->disconnect();
  }

  void store_message(ClientSession& session, dirq::DirQueue& sink, const stomp::Frame& frame, stomp::AckMode mode) {
    std::string message_id(frame.header("message-id").value_or(""));
    std::string payload;
    bool poisoned = false;
    try {
      Message message = config_.hook(message_from_frame(frame));
      payload = serialize(message);
    } catch (const std::exception& e) {
      spdlog::warn("forwarder: message {} is unusable ({}); moving to poison queue", message_id, e.what());
      poison_queue(sink.root()).add(stomp::encode(frame, stomp::Version::v1_2));
      trace(TraceEvent::Kind::poisoned, message_id, e.what());
      ++report_.failed;
      poisoned = true;
    }
    if (!poisoned) {
      auto name = sink.add(payload);
      trace(TraceEvent::Kind::added, message_id, name.str());
      ++report_.forwarded;
    }
    if (mode != stomp::AckMode::automatic) {
      session.ack(frame);
      trace(TraceEvent::Kind::acked, message_id);
    }
  }

  const ForwarderConfig& config_;
  const StopSignal& stop_;
  Backoff backoff_;
  ForwardReport report_;
  std::optional<stomp::TlsContext> tls_context_;
  std::unique_ptr<dirq::DirQueue> poison_;
};

}  // namespace

ForwardReport run(const ForwarderConfig& config, const StopSignal& stop) {
  validate(config);
  return Forwarder(config, stop).run();
}

}  // namespace gridpipe::forwarder
