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
#include <memory>
#include <string>

#include "gridpipe/stomp/transport.hpp"

typedef struct ssl_ctx_st SSL_CTX;

namespace gridpipe::stomp {

// PEM material for one side of a TLS connection.
struct TlsConfig {
  bool enabled = false;
  std::string ca_file;    // peer verification anchor
  std::string cert_file;  // own certificate chain
  std::string key_file;   // own private key
  bool verify_peer = true;

  bool operator==(const TlsConfig&) const = default;
};

class TlsContext {
 public:
  // Verifies the server against ca_file (unless verify_peer is off);
  // presents cert_file/key_file when given.
  static TlsContext client(const TlsConfig& config);
  // Requires cert_file/key_file. A ca_file turns on client-certificate checks.
  static TlsContext server(const TlsConfig& config);

  TlsContext(TlsContext&&) noexcept;
  TlsContext& operator=(TlsContext&&) noexcept;
  ~TlsContext();

  // Runs the handshake on a connected socket. `host` drives SNI and
  // certificate name checks (DNS name or IP literal).
  std::unique_ptr<Transport> connect(UniqueFd fd, const std::string& host,
                                     std::chrono::milliseconds timeout) const;
  std::unique_ptr<Transport> accept(UniqueFd fd, std::chrono::milliseconds timeout) const;

 private:
  explicit TlsContext(SSL_CTX* ctx) noexcept : ctx_(ctx) {}
  SSL_CTX* ctx_ = nullptr;
};

}  // namespace gridpipe::stomp
