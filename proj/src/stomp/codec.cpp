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

#include "gridpipe/stomp/codec.hpp"

#include <charconv>

#include <fmt/format.h>

namespace gridpipe::stomp {

std::string escape_header(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  for (char c : raw) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case ':': out += "\\c"; break;
      default: out += c;
    }
  }
  return out;
}

std::string unescape_header(std::string_view escaped) {
  std::string out;
  out.reserve(escaped.size());
  for (std::size_t i = 0; i < escaped.size(); ++i) {
    char c = escaped[i];
    if (c != '\\') {
      out += c;
      continue;
    }
    if (++i == escaped.size()) throw ProtocolError("header ends inside an escape sequence");
    switch (escaped[i]) {
      case '\\': out += '\\'; break;
      case 'n': out += '\n'; break;
      case 'r': out += '\r'; break;
      case 'c': out += ':'; break;
      default:
        throw ProtocolError(fmt::format("undefined header escape '\\{}'", escaped[i]));
    }
  }
  return out;
}

bool uses_escaping(Command command, Version version) noexcept {
  return version == Version::v1_2 && command != Command::CONNECT &&
         command != Command::CONNECTED;
}

namespace {

std::optional<std::size_t> parse_length(std::string_view text) {
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

}  // namespace

std::string encode(const Frame& frame, Version version) {
  if (!frame.body.empty() && !may_carry_body(frame.command))
    throw UsageError(fmt::format("{} frames cannot carry a body", to_string(frame.command)));
  const bool escaping = uses_escaping(frame.command, version);

  std::string out;
  out.reserve(64 + frame.body.size());
  out += to_string(frame.command);
  out += '\n';
  bool have_length = false;
  for (const auto& [key, value] : frame.headers) {
    if (key.empty()) throw UsageError("empty STOMP header key");
    if (key == "content-length" && !have_length) {
      have_length = true;
      auto length = parse_length(value);
      if (!length || *length != frame.body.size())
        throw UsageError(fmt::format("content-length '{}' does not match body of {} bytes", value,
                                     frame.body.size()));
    }
    if (escaping) {
      out += escape_header(key);
      out += ':';
      out += escape_header(value);
    } else {
      if (key.find_first_of(":\r\n") != std::string::npos)
        throw UsageError(fmt::format("header key '{}' cannot be encoded without escaping", key));
      if (value.find_first_of("\r\n") != std::string::npos)
        throw UsageError(fmt::format("header '{}' value cannot be encoded without escaping", key));
      out += key;
      out += ':';
      out += value;
    }
    out += '\n';
  }
  if (!frame.body.empty() && !have_length) out += fmt::format("content-length:{}\n", frame.body.size());
  out += '\n';
  out += frame.body;
  out += '\0';
  return out;
}

void FrameDecoder::compact() {
  if (pos_ > 0 && (pos_ == buffer_.size() || pos_ > 65536)) {
    buffer_.erase(0, pos_);
    if (pending_) pending_->body_start -= pos_;
    pos_ = 0;
  }
}

// Parses command and headers of the frame at pos_. Returns false when the
// blank line ending the header block has not arrived yet.
bool FrameDecoder::parse_head() {
  std::string_view data(buffer_);
  std::size_t cursor = pos_;
  bool first = true;
  Frame frame;
  for (;;) {
    auto nl = data.find('\n', cursor);
    if (nl == std::string_view::npos) {
      if (data.size() - pos_ > max_frame_size_)
        throw ProtocolError("frame header exceeds the maximum frame size");
      return false;
    }
    std::string_view line = data.substr(cursor, nl - cursor);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    cursor = nl + 1;
    if (first) {
      auto command = parse_command(line);
      if (!command) throw ProtocolError(fmt::format("malformed command '{}'", line.substr(0, 32)));
      frame.command = *command;
      first = false;
      continue;
    }
    if (line.empty()) break;
    auto colon = line.find(':');
    if (colon == std::string_view::npos || colon == 0)
      throw ProtocolError(fmt::format("malformed header line '{}'", line.substr(0, 64)));
    if (uses_escaping(frame.command, version_)) {
      frame.headers.emplace_back(unescape_header(line.substr(0, colon)),
                                 unescape_header(line.substr(colon + 1)));
    } else {
      frame.headers.emplace_back(std::string(line.substr(0, colon)),
                                 std::string(line.substr(colon + 1)));
    }
  }
  std::optional<std::size_t> length;
  if (auto value = frame.header("content-length")) {
    length = parse_length(*value);
    if (!length) throw ProtocolError(fmt::format("bad content-length '{}'", *value));
    if (*length > max_frame_size_)
      throw ProtocolError(fmt::format("content-length {} exceeds the maximum frame size", *length));
  }
  pending_ = Pending{std::move(frame), cursor, length};
  return true;
}

std::optional<Frame> FrameDecoder::next() {
  if (!pending_) {
    // Heart-beats: bare LF or CRLF between frames.
    while (pos_ < buffer_.size()) {
      if (buffer_[pos_] == '\n') {
        ++pos_;
      } else if (buffer_[pos_] == '\r') {
        if (pos_ + 1 == buffer_.size()) break;
        if (buffer_[pos_ + 1] != '\n') throw ProtocolError("stray carriage return between frames");
        pos_ += 2;
      } else {
        break;
      }
    }
    if (pos_ == buffer_.size() || buffer_[pos_] == '\r' || !parse_head()) {
      compact();
      return std::nullopt;
    }
  }

  Pending& p = *pending_;
  std::size_t end;
  if (p.content_length) {
    end = p.body_start + *p.content_length;
    if (end >= buffer_.size()) return std::nullopt;
    if (buffer_[end] != '\0') throw ProtocolError("NUL missing after declared content-length");
  } else {
    end = buffer_.find('\0', p.body_start);
    if (end == std::string::npos) {
      if (buffer_.size() - p.body_start > max_frame_size_)
        throw ProtocolError("frame body exceeds the maximum frame size");
      return std::nullopt;
    }
    if (end - p.body_start > max_frame_size_)
      throw ProtocolError("frame body exceeds the maximum frame size");
  }
  Frame frame = std::move(p.frame);
  frame.body.assign(buffer_, p.body_start, end - p.body_start);
  pending_.reset();
  pos_ = end + 1;
  compact();
  if (!frame.body.empty() && !may_carry_body(frame.command))
    throw ProtocolError(fmt::format("{} frame carries a body", to_string(frame.command)));
  return frame;
}

}  // namespace gridpipe::stomp
