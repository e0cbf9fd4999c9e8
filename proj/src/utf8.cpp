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

#include <cstdint>

#include "gridpipe/encoding.hpp"

namespace gridpipe {

namespace {

// Length of the well-formed sequence starting at `pos`, or 0 if ill-formed.
std::size_t sequence_length(std::string_view s, std::size_t pos) noexcept {
  auto b = [&](std::size_t k) { return static_cast<uint8_t>(s[pos + k]); };
  auto cont = [&](std::size_t k) { return pos + k < s.size() && (b(k) & 0xC0) == 0x80; };
  uint8_t lead = b(0);
  if (lead < 0x80) return 1;
  if (lead < 0xC2) return 0;
  if (lead < 0xE0) return cont(1) ? 2 : 0;
  if (lead < 0xF0) {
    if (!cont(1) || !cont(2)) return 0;
    if (lead == 0xE0 && b(1) < 0xA0) return 0;   // overlong
    if (lead == 0xED && b(1) >= 0xA0) return 0;  // surrogate
    return 3;
  }
  if (lead < 0xF5) {
    if (!cont(1) || !cont(2) || !cont(3)) return 0;
    if (lead == 0xF0 && b(1) < 0x90) return 0;   // overlong
    if (lead == 0xF4 && b(1) >= 0x90) return 0;  // > U+10FFFF
    return 4;
  }
  return 0;
}

}  // namespace

bool is_valid_utf8(std::string_view bytes) noexcept {
  std::size_t i = 0;
  while (i < bytes.size()) {
    std::size_t n = sequence_length(bytes, i);
    if (n == 0) return false;
    i += n;
  }
  return true;
}

std::size_t utf8_safe_prefix(std::string_view bytes, std::size_t max_len) noexcept {
  if (bytes.size() <= max_len) return bytes.size();
  std::size_t cut = max_len;
  // Back off over continuation bytes so the cut lands on a lead byte.
  while (cut > 0 && (static_cast<uint8_t>(bytes[cut]) & 0xC0) == 0x80) --cut;
  return cut;
}

}  // namespace gridpipe
