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

#include "gridpipe/nagios.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "gridpipe/backoff.hpp"
#include "gridpipe/encoding.hpp"
#include "gridpipe/error.hpp"
#include "gridpipe/message.hpp"
#include "gridpipe/stomp/transport.hpp"

namespace gridpipe::nagios {

std::string sanitize(std::string_view field) {
  std::string out(field);
  for (char& c : out) {
    if (c == ';') {
      c = ',';
    } else if (c == '\n' || c == '\r') {
      c = ' ';
    }
  }
  return out;
}

std::string PassiveCheck::render() const {
  return fmt::format("[{}] PROCESS_SERVICE_CHECK_RESULT;{};{};{};{}\n", timestamp, host, service, code, output);
}

PassiveCheck to_passive(const metric::MetricEvent& event) {
  return PassiveCheck{event.timestamp, sanitize(event.host), sanitize(event.service), metric::code(event.status),
                      sanitize(event.summary)};
}

std::string render_for_pipe(const PassiveCheck& check, bool* truncated) {
  std::string line = check.render();
  if (truncated) *truncated = false;
  if (line.size() <= kMaxCommandLine) return line;
  if (truncated) *truncated = true;
  std::size_t keep = utf8_safe_prefix(line, kMaxCommandLine - 1);
  line.resize(keep);
  line += '\n';
  return line;
}

dirq::ElementName capture(const metric::Environment& env, const std::filesystem::path& queue_path,
                          dirq::QueueOptions options) {
  auto event = metric::from_env(env);
  auto payload = serialize(metric::to_message(event));
  dirq::DirQueue queue(queue_path, options);
  return queue.add(payload);
}

namespace {

class CommandPipe {
 public:
  explicit CommandPipe(std::filesystem::path path) : path_(std::move(path)) {}

  // Single write(2) of the whole line. Returns 0 or errno.
  int write_line(std::string_view line) {
    if (!fd_) {
      // O_NONBLOCK: opening a FIFO without a reader fails with ENXIO instead
      // of hanging.
      int fd = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_NONBLOCK | O_CLOEXEC);
      if (fd < 0) return errno;
      struct stat st{};
      if (::fstat(fd, &st) == 0 && !S_ISFIFO(st.st_mode)) {
        int flags = ::fcntl(fd, F_GETFL);
        ::fcntl(fd, F_SETFL, flags & ~O_NONBLOCK);
      }
      fd_.reset(fd);
    }
    for (;;) {
      ssize_t n = ::write(fd_.get(), line.data(), line.size());
      if (n == ssize_t(line.size())) return 0;
      if (n < 0 && errno == EINTR) continue;
      int err = n < 0 ? errno : EIO;
      fd_.reset();
      return err;
    }
  }

 private:
  std::filesystem::path path_;
  stomp::UniqueFd fd_;
};

}  // namespace

Mq2NagiosResult mq2nagios_run(const std::filesystem::path& queue_path, const std::filesystem::path& command_pipe,
                              const StopSignal& stop, const Mq2NagiosOptions& options) {
  dirq::DirQueue queue(queue_path, options.queue);
  std::unique_ptr<dirq::DirQueue> poison;
  CommandPipe pipe(command_pipe);
  Backoff backoff(Backoff::seconds(options.backoff_initial), Backoff::seconds(options.backoff_max));
  Mq2NagiosResult result;

  while (!stop.stop_requested()) {
    bool write_failed = false;
    for (const auto& name : queue.elements()) {
      if (stop.stop_requested()) break;
      if (!queue.lock(name)) continue;
      std::string payload = queue.get(name);
      metric::MetricEvent event;
      try {
        bool fallback = false;
        event = metric::from_message(deserialize(payload), metric::StatusPolicy::lenient, &fallback);
        if (fallback) spdlog::warn("mq2nagios: element {} has an unrecognized status; reporting UNKNOWN", name.str());
      } catch (const std::exception& e) {
        spdlog::warn("mq2nagios: element {} is unusable ({}); moving to poison queue", name.str(), e.what());
        if (!poison) {
          auto path = options.poison ? *options.poison : std::filesystem::path(queue_path.string() + ".poison");
          poison = std::make_unique<dirq::DirQueue>(path, options.queue);
        }
        poison->add(payload);
        queue.remove(name);
        ++result.poison;
        continue;
      }
      bool truncated = false;
      std::string line = render_for_pipe(to_passive(event), &truncated);
      if (truncated) spdlog::warn("mq2nagios: element {} truncated to {} bytes", name.str(), kMaxCommandLine);
      if (int err = pipe.write_line(line); err != 0) {
        queue.unlock(name);
        ++result.write_failures;
        spdlog::error("mq2nagios: cannot write to {}: {}", command_pipe.string(), std::strerror(err));
        write_failed = true;
        break;
      }
      queue.remove(name);
      ++result.emitted;
      backoff.reset();
    }
    if (options.once) break;
    auto wait = write_failed ? std::chrono::duration_cast<std::chrono::steady_clock::duration>(backoff.next())
                             : std::chrono::duration_cast<std::chrono::steady_clock::duration>(options.poll_interval);
    if (stop.wait_for(wait)) break;
  }
  return result;
}

}  // namespace gridpipe::nagios
