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

#include "gridpipe/stomp/uri.hpp"

#include <charconv>

#include <fmt/format.h>

#include "gridpipe/error.hpp"

namespace gridpipe::stomp {

BrokerUri BrokerUri::parse(std::string_view text) {
  BrokerUri uri;
  auto scheme_end = text.find("://");
  if (scheme_end == std::string_view::npos)
    throw ConfigError(fmt::format("broker URI '{}' has no scheme", text));
  auto scheme = text.substr(0, scheme_end);
  if (scheme == "stomp") {
    uri.tls = false;
  } else if (scheme == "stomp+tls" || scheme == "stomp+ssl") {
    uri.tls = true;
  } else {
    throw ConfigError(fmt::format("unsupported broker URI scheme '{}'", scheme));
  }
  auto rest = text.substr(scheme_end + 3);
  auto slash = rest.find('/');
  auto authority = rest.substr(0, slash);
  if (slash != std::string_view::npos) uri.destination = std::string(rest.substr(slash));

  std::string_view port_text;
  if (!authority.empty() && authority.front() == '[') {
    auto close = authority.find(']');
    if (close == std::string_view::npos)
      throw ConfigError(fmt::format("broker URI '{}' has an unterminated IPv6 literal", text));
    uri.host = std::string(authority.substr(1, close - 1));
    auto after = authority.substr(close + 1);
    if (!after.empty()) {
      if (after.front() != ':') throw ConfigError(fmt::format("malformed broker URI '{}'", text));
      port_text = after.substr(1);
    }
  } else {
    auto colon = authority.rfind(':');
    uri.host = std::string(authority.substr(0, colon));
    if (colon != std::string_view::npos) port_text = authority.substr(colon + 1);
  }
  if (uri.host.empty()) throw ConfigError(fmt::format("broker URI '{}' has no host", text));
  if (!port_text.empty()) {
    unsigned value = 0;
    auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), value);
    if (ec != std::errc() || ptr != port_text.data() + port_text.size() || value == 0 ||
        value > 65535)
      throw ConfigError(fmt::format("broker URI '{}' has an invalid port", text));
    uri.port = uint16_t(value);
  }
  return uri;
}

std::string BrokerUri::str() const {
  bool v6 = host.find(':') != std::string::npos;
  return fmt::format("{}://{}{}{}:{}{}", tls ? "stomp+tls" : "stomp", v6 ? "[" : "", host,
                     v6 ? "]" : "", port, destination);
}

}  // namespace gridpipe::stomp
