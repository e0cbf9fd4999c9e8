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

#include <stdexcept>
#include <string>

namespace gridpipe {

// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem failure; carries errno when one was observed.
class IoError : public Error {
 public:
  IoError(const std::string& what, int err);

  int code() const noexcept { return code_; }

 private:
  int code_;
};

// Input that does not match an expected format (payload, frame, config).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Precondition violated by the caller: wrong state, missing lock, bad value.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Missing or invalid configuration; maps to exit status 2 in the CLI.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace gridpipe
