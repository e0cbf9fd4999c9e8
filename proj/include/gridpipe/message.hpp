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

#include <map>
#include <string>
#include <string_view>

namespace gridpipe {

// Header map plus body: the unit that flows through every queue and broker
// hop. `text` records that the body is meant to be read as UTF-8 text.
struct Message {
  std::map<std::string, std::string> header;
  std::string body;
  bool text = true;

  bool operator==(const Message&) const = default;
};

// Throws UsageError describing the first violated invariant.
void validate(const Message& message);
bool is_valid_header_key(std::string_view key) noexcept;

// Canonical JSON envelope: {"body":...,"encoding":"base64"?,"header":{...},"text":...}
// with sorted keys and no insignificant whitespace. Non-UTF-8 bodies are
// base64-encoded.
std::string serialize(const Message& message);

// Strict inverse of serialize. Throws FormatError on malformed input,
// unknown keys, an unknown encoding or non-string header values.
Message deserialize(std::string_view bytes);

}  // namespace gridpipe
