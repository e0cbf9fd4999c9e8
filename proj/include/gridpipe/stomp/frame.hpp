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

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gridpipe::stomp {

enum class Command {
  CONNECT,
  CONNECTED,
  SEND,
  SUBSCRIBE,
  UNSUBSCRIBE,
  ACK,
  NACK,
  BEGIN,
  COMMIT,
  ABORT,
  DISCONNECT,
  MESSAGE,
  RECEIPT,
  ERROR,
};

std::string_view to_string(Command command) noexcept;
std::optional<Command> parse_command(std::string_view text) noexcept;
// SEND, MESSAGE and ERROR are the only frames allowed a body.
bool may_carry_body(Command command) noexcept;

enum class Version { v1_0, v1_2 };

std::string_view to_string(Version version) noexcept;

using Header = std::pair<std::string, std::string>;

struct Frame {
  Command command = Command::SEND;
  std::vector<Header> headers;
  std::string body;

  Frame() = default;
  Frame(Command cmd, std::vector<Header> hdrs = {}, std::string bdy = {})
      : command(cmd), headers(std::move(hdrs)), body(std::move(bdy)) {}

  // First occurrence wins.
  std::optional<std::string_view> header(std::string_view key) const noexcept;
  bool has_header(std::string_view key) const noexcept { return header(key).has_value(); }
  Frame& add_header(std::string key, std::string value);

  bool operator==(const Frame&) const = default;
};

}  // namespace gridpipe::stomp
