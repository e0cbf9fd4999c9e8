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

#include "gridpipe/stomp/frame.hpp"

#include <array>

namespace gridpipe::stomp {

namespace {

constexpr std::array<std::string_view, 14> kCommandNames = {
    "CONNECT", "CONNECTED", "SEND",       "SUBSCRIBE", "UNSUBSCRIBE", "ACK",     "NACK",
    "BEGIN",   "COMMIT",    "ABORT",      "DISCONNECT", "MESSAGE",    "RECEIPT", "ERROR",
};

}  // namespace

std::string_view to_string(Command command) noexcept {
  return kCommandNames[static_cast<std::size_t>(command)];
}

std::optional<Command> parse_command(std::string_view text) noexcept {
  for (std::size_t i = 0; i < kCommandNames.size(); ++i)
    if (kCommandNames[i] == text) return static_cast<Command>(i);
  return std::nullopt;
}

bool may_carry_body(Command command) noexcept {
  return command == Command::SEND || command == Command::MESSAGE || command == Command::ERROR;
}

std::string_view to_string(Version version) noexcept {
  return version == Version::v1_2 ? "1.2" : "1.0";
}

std::optional<std::string_view> Frame::header(std::string_view key) const noexcept {
  for (const auto& [k, v] : headers)
    if (k == key) return std::string_view(v);
  return std::nullopt;
}

Frame& Frame::add_header(std::string key, std::string value) {
  headers.emplace_back(std::move(key), std::move(value));
  return *this;
}

}  // namespace gridpipe::stomp
