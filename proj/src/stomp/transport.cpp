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

#include "gridpipe/stomp/transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include <fmt/format.h>

namespace gridpipe::stomp {

using std::chrono::milliseconds;
using Clock = std::chrono::steady_clock;

UniqueFd& UniqueFd::operator=(UniqueFd&& other) noexcept {
  if (this != &other) reset(other.release());
  return *this;
}

void UniqueFd::reset(int fd) noexcept {
  if (fd_ >= 0) ::close(fd_);
  fd_ = fd;
}

void set_nonblocking(int fd) {
  int flags = ::fcntl(fd, F_GETFL, 0);
  if (flags < 0 || ::fcntl(fd, F_SETFL, flags | O_NONBLOCK) < 0)
    throw ConnectionError(fmt::format("fcntl(O_NONBLOCK): {}", std::strerror(errno)));
}

bool wait_fd(int fd, bool for_write, milliseconds timeout, int interrupt_fd) {
  pollfd fds[2] = {{fd, short(for_write ? POLLOUT : POLLIN), 0}, {interrupt_fd, POLLIN, 0}};
  nfds_t n = interrupt_fd >= 0 ? 2 : 1;
  auto deadline = Clock::now() + timeout;
  for (;;) {
    auto left = std::chrono::duration_cast<milliseconds>(deadline - Clock::now());
    int rc = ::poll(fds, n, int(std::max<int64_t>(0, left.count())));
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw ConnectionError(fmt::format("poll: {}", std::strerror(errno)));
    }
    if (rc == 0) return false;
    if (n == 2 && (fds[1].revents & POLLIN)) return false;
    // Errors and hang-ups count as ready so the next I/O call reports them.
    return fds[0].revents != 0;
  }
}

TcpTransport::TcpTransport(UniqueFd fd, milliseconds write_timeout)
    : fd_(std::move(fd)), write_timeout_(write_timeout) {
  set_nonblocking(fd_.get());
}

void TcpTransport::write_all(std::string_view bytes) {
  while (!bytes.empty()) {
    if (!fd_) throw ConnectionError("write on closed transport");
    ssize_t n = ::send(fd_.get(), bytes.data(), bytes.size(), MSG_NOSIGNAL);
    if (n > 0) {
      bytes.remove_prefix(std::size_t(n));
      continue;
    }
    if (n < 0 && errno == EINTR) continue;
    if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
      if (!wait_fd(fd_.get(), true, write_timeout_))
        throw ConnectionError("write timed out");
      continue;
    }
    throw ConnectionError(fmt::format("send: {}", std::strerror(errno)));
  }
}

std::string TcpTransport::read_some(milliseconds timeout, int interrupt_fd) {
  if (!fd_) throw ConnectionError("read on closed transport");
  char buf[65536];
  for (;;) {
    ssize_t n = ::recv(fd_.get(), buf, sizeof buf, 0);
    if (n > 0) return std::string(buf, std::size_t(n));
    if (n == 0) throw ConnectionError("connection closed by peer");
    if (errno == EINTR) continue;
    if (errno != EAGAIN && errno != EWOULDBLOCK)
      throw ConnectionError(fmt::format("recv: {}", std::strerror(errno)));
    if (!wait_fd(fd_.get(), false, timeout, interrupt_fd)) return {};
    // Readable now; loop once more without waiting again.
    timeout = milliseconds(0);
  }
}

UniqueFd connect_tcp(const std::string& host, uint16_t port, milliseconds timeout) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  std::string service = std::to_string(port);
  int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res);
  if (rc != 0)
    throw ConnectionError(fmt::format("cannot resolve {}: {}", host, ::gai_strerror(rc)));
  std::string last_error = "no addresses";
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    UniqueFd fd(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
    if (!fd) {
      last_error = std::strerror(errno);
      continue;
    }
    set_nonblocking(fd.get());
    if (::connect(fd.get(), ai->ai_addr, ai->ai_addrlen) != 0) {
      if (errno != EINPROGRESS) {
        last_error = std::strerror(errno);
        continue;
      }
      if (!wait_fd(fd.get(), true, timeout)) {
        last_error = "connect timed out";
        continue;
      }
      int err = 0;
      socklen_t len = sizeof err;
      ::getsockopt(fd.get(), SOL_SOCKET, SO_ERROR, &err, &len);
      if (err != 0) {
        last_error = std::strerror(err);
        continue;
      }
    }
    int one = 1;
    ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    ::freeaddrinfo(res);
    return fd;
  }
  ::freeaddrinfo(res);
  throw ConnectionError(fmt::format("cannot connect to {}:{}: {}", host, port, last_error));
}

UniqueFd listen_tcp(const std::string& host, uint16_t port, int backlog) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  std::string service = std::to_string(port);
  int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &res);
  if (rc != 0)
    throw ConnectionError(fmt::format("cannot resolve {}: {}", host, ::gai_strerror(rc)));
  std::string last_error = "no addresses";
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    UniqueFd fd(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
    if (!fd) continue;
    int one = 1;
    ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd.get(), ai->ai_addr, ai->ai_addrlen) != 0 || ::listen(fd.get(), backlog) != 0) {
      last_error = std::strerror(errno);
      continue;
    }
    set_nonblocking(fd.get());
    ::freeaddrinfo(res);
    return fd;
  }
  ::freeaddrinfo(res);
  throw ConnectionError(fmt::format("cannot bind {}:{}: {}", host, port, last_error));
}

uint16_t local_port(int fd) {
  sockaddr_storage addr{};
  socklen_t len = sizeof addr;
  if (::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0) return 0;
  if (addr.ss_family == AF_INET) return ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
  if (addr.ss_family == AF_INET6) return ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port);
  return 0;
}

}  // namespace gridpipe::stomp
