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

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

#include "gridpipe/error.hpp"

namespace gridpipe::stomp {

// The peer went away, a socket call failed, or a TLS handshake was refused.
class ConnectionError : public Error {
 public:
  using Error::Error;
};

class UniqueFd {
 public:
  UniqueFd() = default;
  explicit UniqueFd(int fd) noexcept : fd_(fd) {}
  UniqueFd(UniqueFd&& other) noexcept : fd_(other.release()) {}
  UniqueFd& operator=(UniqueFd&& other) noexcept;
  ~UniqueFd() { reset(); }

  int get() const noexcept { return fd_; }
  explicit operator bool() const noexcept { return fd_ >= 0; }
  int release() noexcept {
    int fd = fd_;
    fd_ = -1;
    return fd;
  }
  void reset(int fd = -1) noexcept;

 private:
  int fd_ = -1;
};

// A connected, non-blocking byte stream.
class Transport {
 public:
  virtual ~Transport() = default;

  // Writes every byte or throws ConnectionError (including on timeout).
  virtual void write_all(std::string_view bytes) = 0;

  // Waits up to `timeout` for data. Returns what was read, or an empty string
  // on timeout or when `interrupt_fd` became readable. Throws ConnectionError
  // on EOF or failure.
  virtual std::string read_some(std::chrono::milliseconds timeout, int interrupt_fd = -1) = 0;

  virtual void close() noexcept = 0;

  // "tcp" or "tls".
  virtual std::string_view kind() const noexcept = 0;
};

inline constexpr std::chrono::milliseconds kDefaultIoTimeout{30000};

class TcpTransport : public Transport {
 public:
  explicit TcpTransport(UniqueFd fd, std::chrono::milliseconds write_timeout = kDefaultIoTimeout);

  void write_all(std::string_view bytes) override;
  std::string read_some(std::chrono::milliseconds timeout, int interrupt_fd = -1) override;
  void close() noexcept override { fd_.reset(); }
  std::string_view kind() const noexcept override { return "tcp"; }

 private:
  UniqueFd fd_;
  std::chrono::milliseconds write_timeout_;
};

void set_nonblocking(int fd);

// Resolves and connects with a deadline; the returned socket is non-blocking
// with TCP_NODELAY set.
UniqueFd connect_tcp(const std::string& host, uint16_t port, std::chrono::milliseconds timeout);

// Bound, listening, non-blocking socket. Port 0 picks an ephemeral port.
UniqueFd listen_tcp(const std::string& host, uint16_t port, int backlog = 128);
uint16_t local_port(int fd);

// Waits for `fd` to become readable/writable. Returns false on timeout or if
// `interrupt_fd` fired first.
bool wait_fd(int fd, bool for_write, std::chrono::milliseconds timeout, int interrupt_fd = -1);

}  // namespace gridpipe::stomp
