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

namespace gridpipe {

// RFC 4648 base64 with padding.
std::string base64_encode(std::string_view bytes);
// Returns nullopt on any character outside the alphabet or bad padding.
std::optional<std::string> base64_decode(std::string_view text);

// Strict UTF-8 check: rejects overlong forms, surrogates and code points
// above U+10FFFF.
bool is_valid_utf8(std::string_view bytes) noexcept;

// Largest prefix length <= max_len that does not split a UTF-8 sequence.
std::size_t utf8_safe_prefix(std::string_view bytes, std::size_t max_len) noexcept;

}  // namespace gridpipe
