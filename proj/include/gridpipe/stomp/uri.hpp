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

#include <cstdint>
#include <string>
#include <string_view>

namespace gridpipe::stomp {

// stomp://host:port[/destination] or stomp+tls://host:port[/destination].
// "stomp+ssl" is accepted as an alias of "stomp+tls".
struct BrokerUri {
  bool tls = false;
  std::string host;
  uint16_t port = 61613;
  std::string destination;  // empty when the URI has no path

  static BrokerUri parse(std::string_view text);
  std::string str() const;

  bool operator==(const BrokerUri&) const = default;
};

}  // namespace gridpipe::stomp
