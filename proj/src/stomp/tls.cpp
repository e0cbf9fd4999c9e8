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

#include "gridpipe/stomp/tls.hpp"

#include <arpa/inet.h>
#include <openssl/err.h>
#include <openssl/ssl.h>
#include <openssl/x509v3.h>

#include <csignal>
#include <mutex>

#include <fmt/format.h>

namespace gridpipe::stomp {

using std::chrono::milliseconds;
using SteadyClock = std::chrono::steady_clock;

namespace {

std::string ssl_errors(std::string_view what) {
  std::string out(what);
  unsigned long err;
  while ((err = ERR_get_error()) != 0) {
    char buf[256];
    ERR_error_string_n(err, buf, sizeof buf);
    out += ": ";
    out += buf;
  }
  return out;
}

milliseconds remaining(SteadyClock::time_point deadline) {
  auto left = std::chrono::duration_cast<milliseconds>(deadline - SteadyClock::now());
  return left.count() > 0 ? left : milliseconds(0);
}

bool is_ip_literal(const std::string& host) {
  unsigned char buf[16];
  return ::inet_pton(AF_INET, host.c_str(), buf) == 1 || ::inet_pton(AF_INET6, host.c_str(), buf) == 1;
}

class TlsTransport : public Transport {
 public:
  TlsTransport(UniqueFd fd, SSL* ssl) : fd_(std::move(fd)), ssl_(ssl) {}
  ~TlsTransport() override { close(); }

  // Drives a non-blocking SSL call until it completes or the deadline passes.
  template <typename Op>
  int drive(Op op, SteadyClock::time_point deadline, int interrupt_fd, bool* interrupted) {
    for (;;) {
      ERR_clear_error();
      int rc = op();
      if (rc > 0) return rc;
      int err = SSL_get_error(ssl_, rc);
      bool want_write;
      if (err == SSL_ERROR_WANT_READ) {
        want_write = false;
      } else if (err == SSL_ERROR_WANT_WRITE) {
        want_write = true;
      } else if (err == SSL_ERROR_ZERO_RETURN) {
        throw ConnectionError("TLS connection closed by peer");
      } else if (err == SSL_ERROR_SYSCALL && ERR_peek_error() == 0) {
        throw ConnectionError("connection closed by peer");
      } else {
        throw ConnectionError(ssl_errors("TLS failure"));
      }
      if (!wait_fd(fd_.get(), want_write, remaining(deadline), interrupt_fd)) {
        if (interrupted) *interrupted = true;
        return 0;
      }
    }
  }

  void handshake(bool client, milliseconds timeout) {
    bool timed_out = false;
    auto deadline = SteadyClock::now() + timeout;
    drive([&] { return client ? SSL_connect(ssl_) : SSL_accept(ssl_); }, deadline, -1, &timed_out);
    if (timed_out) throw ConnectionError("TLS handshake timed out");
  }

  void write_all(std::string_view bytes) override {
    if (!ssl_) throw ConnectionError("write on closed transport");
    auto deadline = SteadyClock::now() + kDefaultIoTimeout;
    while (!bytes.empty()) {
      bool timed_out = false;
      int n = drive([&] { return SSL_write(ssl_, bytes.data(), int(bytes.size())); }, deadline, -1,
                    &timed_out);
      if (timed_out) throw ConnectionError("TLS write timed out");
      bytes.remove_prefix(std::size_t(n));
    }
  }

  std::string read_some(milliseconds timeout, int interrupt_fd) override {
    if (!ssl_) throw ConnectionError("read on closed transport");
    char buf[65536];
    bool stopped = false;
    auto deadline = SteadyClock::now() + timeout;
    int n = drive([&] { return SSL_read(ssl_, buf, int(sizeof buf)); }, deadline, interrupt_fd,
                  &stopped);
    if (stopped) return {};
    return std::string(buf, std::size_t(n));
  }

  void close() noexcept override {
    if (ssl_) {
      SSL_shutdown(ssl_);
      SSL_free(ssl_);
      ssl_ = nullptr;
    }
    fd_.reset();
  }

  std::string_view kind() const noexcept override { return "tls"; }

 private:
  UniqueFd fd_;
  SSL* ssl_;
};

SSL_CTX* new_context(const SSL_METHOD* method) {
  // OpenSSL writes through plain write(2); a vanished peer must not kill us.
  static std::once_flag sigpipe_once;
  std::call_once(sigpipe_once, [] { std::signal(SIGPIPE, SIG_IGN); });
  SSL_CTX* ctx = SSL_CTX_new(method);
  if (!ctx) throw ConnectionError(ssl_errors("SSL_CTX_new"));
  SSL_CTX_set_min_proto_version(ctx, TLS1_2_VERSION);
  SSL_CTX_set_mode(ctx, SSL_MODE_ENABLE_PARTIAL_WRITE | SSL_MODE_ACCEPT_MOVING_WRITE_BUFFER);
  return ctx;
}

void load_identity(SSL_CTX* ctx, const TlsConfig& config) {
  if (SSL_CTX_use_certificate_chain_file(ctx, config.cert_file.c_str()) != 1)
    throw ConnectionError(ssl_errors("cannot load certificate " + config.cert_file));
  if (SSL_CTX_use_PrivateKey_file(ctx, config.key_file.c_str(), SSL_FILETYPE_PEM) != 1)
    throw ConnectionError(ssl_errors("cannot load private key " + config.key_file));
  if (SSL_CTX_check_private_key(ctx) != 1)
    throw ConnectionError(ssl_errors("private key does not match " + config.cert_file));
}

}  // namespace

TlsContext TlsContext::client(const TlsConfig& config) {
  SSL_CTX* ctx = new_context(TLS_client_method());
  TlsContext result(ctx);
  if (config.verify_peer) {
    if (config.ca_file.empty()) {
      if (SSL_CTX_set_default_verify_paths(ctx) != 1)
        throw ConnectionError(ssl_errors("cannot load default CA paths"));
    } else if (SSL_CTX_load_verify_locations(ctx, config.ca_file.c_str(), nullptr) != 1) {
      throw ConnectionError(ssl_errors("cannot load CA bundle " + config.ca_file));
    }
    SSL_CTX_set_verify(ctx, SSL_VERIFY_PEER, nullptr);
  } else {
    SSL_CTX_set_verify(ctx, SSL_VERIFY_NONE, nullptr);
  }
  if (!config.cert_file.empty() || !config.key_file.empty()) load_identity(ctx, config);
  return result;
}

TlsContext TlsContext::server(const TlsConfig& config) {
  if (config.cert_file.empty() || config.key_file.empty())
    throw UsageError("TLS server needs both a certificate and a private key");
  SSL_CTX* ctx = new_context(TLS_server_method());
  TlsContext result(ctx);
  load_identity(ctx, config);
  if (!config.ca_file.empty()) {
    if (SSL_CTX_load_verify_locations(ctx, config.ca_file.c_str(), nullptr) != 1)
      throw ConnectionError(ssl_errors("cannot load CA bundle " + config.ca_file));
    STACK_OF(X509_NAME)* names = SSL_load_client_CA_file(config.ca_file.c_str());
    if (names) SSL_CTX_set_client_CA_list(ctx, names);
    SSL_CTX_set_verify(ctx, SSL_VERIFY_PEER | SSL_VERIFY_FAIL_IF_NO_PEER_CERT, nullptr);
  }
  return result;
}

TlsContext::TlsContext(TlsContext&& other) noexcept : ctx_(other.ctx_) { other.ctx_ = nullptr; }

TlsContext& TlsContext::operator=(TlsContext&& other) noexcept {
  if (this != &other) {
    if (ctx_) SSL_CTX_free(ctx_);
    ctx_ = other.ctx_;
    other.ctx_ = nullptr;
  }
  return *this;
}

TlsContext::~TlsContext() {
  if (ctx_) SSL_CTX_free(ctx_);
}

std::unique_ptr<Transport> TlsContext::connect(UniqueFd fd, const std::string& host,
                                               milliseconds timeout) const {
  set_nonblocking(fd.get());
  SSL* ssl = SSL_new(ctx_);
  if (!ssl) throw ConnectionError(ssl_errors("SSL_new"));
  if (SSL_set_fd(ssl, fd.get()) != 1) {
    SSL_free(ssl);
    throw ConnectionError(ssl_errors("SSL_set_fd"));
  }
  auto transport = std::make_unique<TlsTransport>(std::move(fd), ssl);
  if (is_ip_literal(host)) {
    X509_VERIFY_PARAM_set1_ip_asc(SSL_get0_param(ssl), host.c_str());
  } else {
    SSL_set_tlsext_host_name(ssl, host.c_str());
    SSL_set1_host(ssl, host.c_str());
  }
  transport->handshake(true, timeout);
  return transport;
}

std::unique_ptr<Transport> TlsContext::accept(UniqueFd fd, milliseconds timeout) const {
  set_nonblocking(fd.get());
  SSL* ssl = SSL_new(ctx_);
  if (!ssl) throw ConnectionError(ssl_errors("SSL_new"));
  if (SSL_set_fd(ssl, fd.get()) != 1) {
    SSL_free(ssl);
    throw ConnectionError(ssl_errors("SSL_set_fd"));
  }
  auto transport = std::make_unique<TlsTransport>(std::move(fd), ssl);
  transport->handshake(false, timeout);
  return transport;
}

}  // namespace gridpipe::stomp
