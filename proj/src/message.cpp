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

#include "gridpipe/message.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include "gridpipe/encoding.hpp"
#include "gridpipe/error.hpp"

namespace gridpipe {

using json = nlohmann::json;

bool is_valid_header_key(std::string_view key) noexcept {
  if (key.empty()) return false;
  for (unsigned char c : key)
    if (c < 0x20 || c == 0x7f) return false;
  return is_valid_utf8(key);
}

void validate(const Message& message) {
  for (const auto& [key, value] : message.header) {
    if (!is_valid_header_key(key))
      throw UsageError(fmt::format("invalid message header key '{}'", key));
    if (!is_valid_utf8(value))
      throw UsageError(fmt::format("header '{}' is not valid UTF-8", key));
  }
  if (message.text && !is_valid_utf8(message.body))
    throw UsageError("text message body is not valid UTF-8");
}

std::string serialize(const Message& message) {
  validate(message);
  // nlohmann's default object type is an ordered std::map, so keys come out sorted.
  json doc = json::object();
  doc["header"] = json::object();
  for (const auto& [key, value] : message.header) doc["header"][key] = value;
  if (is_valid_utf8(message.body)) {
    doc["body"] = message.body;
  } else {
    doc["body"] = base64_encode(message.body);
    doc["encoding"] = "base64";
  }
  doc["text"] = message.text;
  return doc.dump();
}

Message deserialize(std::string_view bytes) {
  json doc;
  try {
    doc = json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw FormatError(fmt::format("malformed message JSON: {}", e.what()));
  }
  if (!doc.is_object()) throw FormatError("message must be a JSON object");

  Message message;
  bool base64 = false;
  bool have_body = false, have_header = false, have_text = false;
  for (const auto& [key, value] : doc.items()) {
    if (key == "body") {
      if (!value.is_string()) throw FormatError("message \"body\" must be a string");
      message.body = value.get<std::string>();
      have_body = true;
    } else if (key == "header") {
      if (!value.is_object()) throw FormatError("message \"header\" must be an object");
      for (const auto& [hkey, hvalue] : value.items()) {
        if (!hvalue.is_string())
          throw FormatError(fmt::format("header '{}' must be a string", hkey));
        if (!is_valid_header_key(hkey))
          throw FormatError(fmt::format("invalid header key '{}'", hkey));
        message.header[hkey] = hvalue.get<std::string>();
      }
      have_header = true;
    } else if (key == "text") {
      if (!value.is_boolean()) throw FormatError("message \"text\" must be a boolean");
      message.text = value.get<bool>();
      have_text = true;
    } else if (key == "encoding") {
      if (!value.is_string() || value.get<std::string>() != "base64")
        throw FormatError(fmt::format("unknown message encoding {}", value.dump()));
      base64 = true;
    } else {
      throw FormatError(fmt::format("unknown message key '{}'", key));
    }
  }
  if (!have_body || !have_header || !have_text)
    throw FormatError("message requires \"body\", \"header\" and \"text\"");
  if (base64) {
    auto decoded = base64_decode(message.body);
    if (!decoded) throw FormatError("message body is not valid base64");
    message.body = std::move(*decoded);
  }
  if (message.text && !is_valid_utf8(message.body))
    throw FormatError("text message body is not valid UTF-8");
  return message;
}

}  // namespace gridpipe
