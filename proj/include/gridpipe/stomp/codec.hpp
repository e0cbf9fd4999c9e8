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

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "gridpipe/error.hpp"
#include "gridpipe/stomp/frame.hpp"

namespace gridpipe::stomp {

inline constexpr std::size_t kDefaultMaxFrameSize = 4 * 1024 * 1024;

// Raised for bytes on the wire that violate the frame grammar.
class ProtocolError : public FormatError {
 public:
  using FormatError::FormatError;
};

// 1.2 header escaping: backslash, LF, CR and colon.
std::string escape_header(std::string_view raw);
// Throws ProtocolError on an undefined escape sequence.
std::string unescape_header(std::string_view escaped);

// CONNECT and CONNECTED are never escaped, whatever the version.
bool uses_escaping(Command command, Version version) noexcept;

// Serializes one frame. A content-length header is appended for non-empty
// bodies that lack one. Throws UsageError for frames that cannot be
// represented (body on a body-less command, unescapable 1.0 header,
// content-length that disagrees with the body).
std::string encode(const Frame& frame, Version version);

// Incremental decoder over a byte stream. Bare EOLs between frames
// (heart-beats) are skipped.
class FrameDecoder {
 public:
  explicit FrameDecoder(Version version = Version::v1_0,
                        std::size_t max_frame_size = kDefaultMaxFrameSize)
      : version_(version), max_frame_size_(max_frame_size) {}

  void set_version(Version version) noexcept { version_ = version; }
  Version version() const noexcept { return version_; }

  void feed(std::string_view bytes) { buffer_.append(bytes); }

  // Next complete frame, or nullopt when more bytes are needed.
  // Throws ProtocolError; the decoder is unusable afterwards.
  std::optional<Frame> next();

  std::size_t buffered() const noexcept { return buffer_.size() - pos_; }

 private:
  struct Pending {
    Frame frame;
    std::size_t body_start;
    std::optional<std::size_t> content_length;
  };

  bool parse_head();
  void compact();

  Version version_;
  std::size_t max_frame_size_;
  std::string buffer_;
  std::size_t pos_ = 0;
  std::optional<Pending> pending_;
};

}  // namespace gridpipe::stomp
