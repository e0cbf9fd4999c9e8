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

#include "gridpipe/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "gridpipe/error.hpp"

namespace gridpipe::config {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(std::string_view text, std::string_view what) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigError(fmt::format("invalid {} '{}'", what, text));
  return value;
}

// Runs `fn` and prefixes any ConfigError with the source location.
template <typename Fn>
auto at(std::string_view source, int line, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}:{}: {}", source, line, e.what()));
  }
}

using Handler = std::function<void(const std::string&)>;

void apply(std::string_view source, const IniSection& section, const std::map<std::string, Handler>& handlers) {
  std::set<std::string> seen;
  for (const auto& entry : section.entries) {
    auto it = handlers.find(entry.key);
    if (it == handlers.end())
      throw ConfigError(fmt::format("{}:{}: unknown key '{}' in [{}{}{}]", source, entry.line, entry.key,
                                    section.kind, section.name.empty() ? "" : " ", section.name));
    if (!seen.insert(entry.key).second)
      throw ConfigError(fmt::format("{}:{}: duplicate key '{}'", source, entry.line, entry.key));
    at(source, entry.line, [&] { it->second(entry.value); });
  }
}


}  // namespace

bool parse_bool(std::string_view raw) {
  std::string text(raw);
  std::transform(text.begin(), text.end(), text.begin(), [](unsigned char c) { return std::tolower(c); });
  if (text == "true" || text == "yes" || text == "on" || text == "1") return true;
  if (text == "false" || text == "no" || text == "off" || text == "0") return false;
  throw ConfigError(fmt::format("invalid boolean '{}'", raw));
}

double parse_seconds(std::string_view text) {
  double value = parse_number<double>(text, "duration");
  if (value < 0) throw ConfigError(fmt::format("negative duration '{}'", text));
  return value;
}

stomp::Heartbeat parse_heartbeat_pair(std::string_view text) {
  auto hb = stomp::parse_heartbeat(text);
  if (!hb) throw ConfigError(fmt::format("invalid heart-beat '{}' (expected SEND_MS,RECEIVE_MS)", text));
  return *hb;
}

std::vector<IniSection> parse_ini(std::string_view text, std::string_view source) {
  std::vector<IniSection> sections;
  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto nl = text.find('\n', start);
    auto raw = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    start = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    auto line = trim(raw);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(fmt::format("{}:{}: unterminated section header", source, line_no));
      auto inner = trim(line.substr(1, line.size() - 2));
      auto space = inner.find_first_of(" \t");
      IniSection section;
      section.kind = std::string(inner.substr(0, space));
      if (space != std::string_view::npos) section.name = std::string(trim(inner.substr(space)));
      section.line = line_no;
      if (section.kind.empty()) throw ConfigError(fmt::format("{}:{}: empty section header", source, line_no));
      sections.push_back(std::move(section));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(fmt::format("{}:{}: expected 'key = value'", source, line_no));
    if (sections.empty())
      throw ConfigError(fmt::format("{}:{}: key outside of any section", source, line_no));
    auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(fmt::format("{}:{}: empty key", source, line_no));
    sections.back().entries.push_back({std::string(key), std::string(trim(line.substr(eq + 1))), line_no});
  }
  return sections;
}

PipelineConfig parse(std::string_view text, std::string_view source) {
  auto sections = parse_ini(text, source);
  PipelineConfig config;
  std::set<std::pair<std::string, std::string>> names;
  std::vector<const IniSection*> forwarder_sections;

  for (const auto& section : sections) {
    bool named = section.kind != "supervisor";
    if (named && section.name.empty())
      throw ConfigError(fmt::format("{}:{}: [{}] needs a name", source, section.line, section.kind));
    if (!names.insert({section.kind, section.name}).second)
      throw ConfigError(fmt::format("{}:{}: duplicate section [{} {}]", source, section.line, section.kind,
                                    section.name));

    if (section.kind == "broker") {
      BrokerSection b;
      bool have_uri = false;
      apply(source, section,
            {{"uri", [&](const std::string& v) { b.uri = stomp::BrokerUri::parse(v); have_uri = true; }},
             {"login", [&](const std::string& v) { b.login = v; }},
             {"passcode", [&](const std::string& v) { b.passcode = v; }},
             {"vhost", [&](const std::string& v) { b.vhost = v; }},
             {"tls-ca", [&](const std::string& v) { b.tls.ca_file = v; }},
             {"tls-cert", [&](const std::string& v) { b.tls.cert_file = v; }},
             {"tls-key", [&](const std::string& v) { b.tls.key_file = v; }},
             {"tls-verify", [&](const std::string& v) { b.tls.verify_peer = parse_bool(v); }},
             {"heartbeat", [&](const std::string& v) { b.heartbeat = parse_heartbeat_pair(v); }}});
      if (!have_uri) throw ConfigError(fmt::format("{}:{}: [broker {}] needs a uri", source, section.line, section.name));
      b.tls.enabled = b.uri.tls;
      config.brokers[section.name] = std::move(b);
    } else if (section.kind == "queue") {
      QueueSection q;
      apply(source, section,
            {{"path", [&](const std::string& v) { q.path = v; }},
             {"granularity",
              [&](const std::string& v) {
                q.granularity = parse_number<uint32_t>(v, "granularity");
                if (q.granularity == 0) throw ConfigError("granularity must be positive");
              }},
             {"purge-tmp-age", [&](const std::string& v) { q.purge_tmp_age = parse_seconds(v); }},
             {"purge-lock-age", [&](const std::string& v) { q.purge_lock_age = parse_seconds(v); }}});
      if (q.path.empty()) throw ConfigError(fmt::format("{}:{}: [queue {}] needs a path", source, section.line, section.name));
      config.queues[section.name] = std::move(q);
    } else if (section.kind == "forwarder") {
      forwarder_sections.push_back(&section);
    } else if (section.kind == "service") {
      supervisor::ServiceSpec s;
      s.name = section.name;
      apply(source, section,
            {{"command", [&](const std::string& v) { s.command = supervisor::split_command(v); }},
             {"expected",
              [&](const std::string& v) {
                if (v == "running") {
                  s.expected_running = true;
                } else if (v == "stopped") {
                  s.expected_running = false;
                } else {
                  throw ConfigError(fmt::format("expected must be 'running' or 'stopped', not '{}'", v));
                }
              }},
             {"backoff-initial", [&](const std::string& v) { s.backoff_initial = parse_seconds(v); }},
             {"backoff-max", [&](const std::string& v) { s.backoff_max = parse_seconds(v); }},
             {"backoff-multiplier", [&](const std::string& v) { s.backoff_multiplier = parse_number<double>(v, "multiplier"); }},
             {"max-restarts", [&](const std::string& v) { s.max_restarts = parse_number<unsigned>(v, "max-restarts"); }},
             {"window", [&](const std::string& v) { s.window = parse_seconds(v); }}});
      at(source, section.line, [&] { supervisor::validate({s}); });
      config.services.push_back(std::move(s));
    } else if (section.kind == "supervisor") {
      apply(source, section,
            {{"log-dir", [&](const std::string& v) { config.supervisor.log_dir = v; }},
             {"grace", [&](const std::string& v) { config.supervisor.grace = parse_seconds(v); }}});
    } else {
      throw ConfigError(fmt::format("{}:{}: unknown section kind '{}'", source, section.line, section.kind));
    }
  }

  // Forwarders reference queue and broker sections, which may appear later.
  for (const IniSection* section : forwarder_sections) {
    forwarder::ForwarderConfig f;
    const BrokerSection* broker_ref = nullptr;
    std::optional<std::string> destination;
    std::optional<stomp::AckMode> ack_mode;
    std::optional<std::string> login, passcode, vhost;
    stomp::TlsConfig tls_override;
    bool have_in = false, have_out = false, heartbeat_set = false;

    auto endpoint = [&](const std::string& v) -> forwarder::Endpoint {
      if (v.rfind("queue:", 0) == 0) {
        auto it = config.queues.find(v.substr(6));
        if (it == config.queues.end()) throw ConfigError(fmt::format("no [queue {}] section", v.substr(6)));
        return forwarder::DirQueueEndpoint{it->second.path, it->second.granularity};
      }
      if (v.rfind("dirq:", 0) == 0) return forwarder::DirQueueEndpoint{v.substr(5)};
      if (v.rfind("broker:", 0) == 0) {
        auto it = config.brokers.find(v.substr(7));
        if (it == config.brokers.end()) throw ConfigError(fmt::format("no [broker {}] section", v.substr(7)));
        broker_ref = &it->second;
        forwarder::BrokerEndpoint ep;
        ep.uri = it->second.uri;
        ep.login = it->second.login;
        ep.passcode = it->second.passcode;
        ep.vhost = it->second.vhost;
        return ep;
      }
      if (v.find("://") != std::string::npos) return forwarder::broker_endpoint(stomp::BrokerUri::parse(v));
      throw ConfigError(fmt::format("endpoint '{}' must be queue:NAME, dirq:PATH, broker:NAME or a stomp URI", v));
    };

    apply(source, *section,
          {{"incoming", [&](const std::string& v) { f.incoming = endpoint(v); have_in = true; }},
           {"outgoing", [&](const std::string& v) { f.outgoing = endpoint(v); have_out = true; }},
           {"destination", [&](const std::string& v) { destination = v; }},
           {"reliable", [&](const std::string& v) { f.reliable = parse_bool(v); }},
           {"loop", [&](const std::string& v) { f.loop = parse_bool(v); }},
           {"ack-mode",
            [&](const std::string& v) {
              ack_mode = stomp::parse_ack_mode(v);
              if (!ack_mode) throw ConfigError(fmt::format("invalid ack-mode '{}'", v));
            }},
           {"heartbeat", [&](const std::string& v) { f.heartbeat = parse_heartbeat_pair(v); heartbeat_set = true; }},
           {"backoff-initial", [&](const std::string& v) { f.backoff_initial = parse_seconds(v); }},
           {"backoff-max", [&](const std::string& v) { f.backoff_max = parse_seconds(v); }},
           {"receipt-timeout",
            [&](const std::string& v) { f.receipt_timeout = std::chrono::milliseconds(int64_t(parse_seconds(v) * 1000)); }},
           {"idle-timeout",
            [&](const std::string& v) { f.idle_timeout = std::chrono::milliseconds(int64_t(parse_seconds(v) * 1000)); }},
           {"poll-interval",
            [&](const std::string& v) { f.poll_interval = std::chrono::milliseconds(int64_t(parse_seconds(v) * 1000)); }},
           {"max-in-flight", [&](const std::string& v) { f.max_in_flight = parse_number<std::size_t>(v, "max-in-flight"); }},
           {"poison", [&](const std::string& v) { f.poison = v; }},
           {"login", [&](const std::string& v) { login = v; }},
           {"passcode", [&](const std::string& v) { passcode = v; }},
           {"vhost", [&](const std::string& v) { vhost = v; }},
           {"tls-ca", [&](const std::string& v) { tls_override.ca_file = v; }},
           {"tls-cert", [&](const std::string& v) { tls_override.cert_file = v; }},
           {"tls-key", [&](const std::string& v) { tls_override.key_file = v; }}});
    auto fail = [&](const std::string& what) {
      throw ConfigError(fmt::format("{}:{}: [forwarder {}] {}", source, section->line, section->name, what));
    };
    if (!have_in || !have_out) fail("needs both incoming and outgoing");
    forwarder::BrokerEndpoint* ep = std::get_if<forwarder::BrokerEndpoint>(&f.incoming);
    if (!ep) ep = std::get_if<forwarder::BrokerEndpoint>(&f.outgoing);
    if (ep) {
      if (destination) ep->uri.destination = *destination;
      if (login) ep->login = login;
      if (passcode) ep->passcode = passcode;
      if (vhost) ep->vhost = *vhost;
      ep->ack_mode = ack_mode;
      stomp::TlsConfig tls = broker_ref ? broker_ref->tls : stomp::TlsConfig{};
      if (!tls_override.ca_file.empty()) tls.ca_file = tls_override.ca_file;
      if (!tls_override.cert_file.empty()) tls.cert_file = tls_override.cert_file;
      if (!tls_override.key_file.empty()) tls.key_file = tls_override.key_file;
      tls.enabled = ep->uri.tls;
      if (tls.enabled) f.tls = tls;
      if (!heartbeat_set && broker_ref) f.heartbeat = broker_ref->heartbeat;
    }
    try {
      forwarder::validate(f);
    } catch (const ConfigError& e) {
      fail(e.what());
    }
    config.forwarders[section->name] = std::move(f);
  }
  return config;
}

PipelineConfig load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot read config file {}", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path.string());
}

}  // namespace gridpipe::config
