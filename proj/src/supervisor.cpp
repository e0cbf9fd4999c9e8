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

#include "gridpipe/supervisor.hpp"

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <deque>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include "gridpipe/backoff.hpp"
#include "gridpipe/error.hpp"

extern char** environ;

namespace gridpipe::supervisor {

using SteadyClock = std::chrono::steady_clock;

std::string_view to_string(ServiceState state) noexcept {
  switch (state) {
    case ServiceState::starting: return "starting";
    case ServiceState::up: return "up";
    case ServiceState::backing_off: return "backing-off";
    case ServiceState::failed: return "failed";
    case ServiceState::stopped: return "stopped";
  }
  return "?";
}

void validate(const std::vector<ServiceSpec>& specs) {
  std::set<std::string> names;
  for (const auto& s : specs) {
    if (s.name.empty()) throw ConfigError("service with an empty name");
    if (!names.insert(s.name).second) throw ConfigError(fmt::format("duplicate service name '{}'", s.name));
    if (s.command.empty()) throw ConfigError(fmt::format("service '{}' has no command", s.name));
    if (s.backoff_initial <= 0 || s.backoff_initial > s.backoff_max)
      throw ConfigError(fmt::format("service '{}': backoff needs 0 < initial <= max", s.name));
    if (s.backoff_multiplier < 1.0)
      throw ConfigError(fmt::format("service '{}': backoff multiplier must be >= 1", s.name));
    if (s.window <= 0) throw ConfigError(fmt::format("service '{}': window must be positive", s.name));
  }
}

std::vector<std::string> split_command(std::string_view text) {
  std::vector<std::string> words;
  std::string word;
  bool in_word = false;
  char quote = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (quote) {
      if (c == quote) {
        quote = 0;
      } else if (c == '\\' && quote == '"' && i + 1 < text.size()) {
        word += text[++i];
      } else {
        word += c;
      }
      continue;
    }
    if (c == '\'' || c == '"') {
      quote = c;
      in_word = true;
    } else if (c == '\\' && i + 1 < text.size()) {
      word += text[++i];
      in_word = true;
    } else if (c == ' ' || c == '\t') {
      if (in_word) words.push_back(std::move(word));
      word.clear();
      in_word = false;
    } else {
      word += c;
      in_word = true;
    }
  }
  if (quote) throw ConfigError(fmt::format("unbalanced quote in command '{}'", text));
  if (in_word) words.push_back(std::move(word));
  return words;
}

struct Supervisor::Service {
  ServiceSpec spec;
  ServiceStatus status;
  Backoff backoff;
  std::deque<SteadyClock::time_point> restart_times;
  SteadyClock::time_point started{};
  SteadyClock::time_point restart_at{};
};

Supervisor::Supervisor(std::vector<ServiceSpec> specs, SupervisorOptions options) : options_(std::move(options)) {
  validate(specs);
  for (auto& spec : specs) {
    Backoff backoff(Backoff::seconds(spec.backoff_initial), Backoff::seconds(spec.backoff_max),
                    spec.backoff_multiplier);
    services_.push_back(Service{std::move(spec), {}, backoff, {}, {}, {}});
  }
  publish();
}

Supervisor::~Supervisor() {
  for (auto& s : services_) {
    if (!s.status.pid) continue;
    ::kill(-*s.status.pid, SIGKILL);
    ::waitpid(*s.status.pid, nullptr, 0);
  }
}

void Supervisor::publish() {
  SupervisorStatus next;
  for (const auto& s : services_) next[s.spec.name] = s.status;
  std::lock_guard lock(mutex_);
  snapshot_ = std::move(next);
}

SupervisorStatus Supervisor::status() const {
  std::lock_guard lock(mutex_);
  return snapshot_;
}

void Supervisor::start(Service& s) {
  std::error_code ec;
  std::filesystem::create_directories(options_.log_dir, ec);
  auto log_path = options_.log_dir / (s.spec.name + ".log");
  int log_fd = ::open(log_path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (log_fd >= 0) {
    std::string banner = fmt::format("[supervisor] starting {}\n", fmt::join(s.spec.command, " "));
    [[maybe_unused]] auto rc = ::write(log_fd, banner.data(), banner.size());
  }

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, 0, "/dev/null", O_RDONLY, 0);
  if (log_fd >= 0) {
    posix_spawn_file_actions_adddup2(&actions, log_fd, 1);
    posix_spawn_file_actions_adddup2(&actions, log_fd, 2);
  }
  posix_spawnattr_t attr;
  posix_spawnattr_init(&attr);
  sigset_t empty, defaults;
  sigemptyset(&empty);
  sigemptyset(&defaults);
  for (int sig : {SIGTERM, SIGINT, SIGHUP, SIGPIPE, SIGCHLD, SIGQUIT, SIGUSR1, SIGUSR2}) sigaddset(&defaults, sig);
  posix_spawnattr_setsigmask(&attr, &empty);
  posix_spawnattr_setsigdefault(&attr, &defaults);
  posix_spawnattr_setpgroup(&attr, 0);
  posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETSIGMASK | POSIX_SPAWN_SETSIGDEF | POSIX_SPAWN_SETPGROUP);

  std::vector<char*> argv;
  for (auto& arg : s.spec.command) argv.push_back(arg.data());
  argv.push_back(nullptr);
  pid_t pid = 0;
  int rc = ::posix_spawnp(&pid, argv[0], &actions, &attr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  posix_spawnattr_destroy(&attr);
  if (log_fd >= 0) ::close(log_fd);

  if (rc != 0) {
    spdlog::error("supervisor: cannot start '{}': {}", s.spec.name, std::strerror(rc));
    s.status.pid.reset();
    s.started = SteadyClock::now();
    on_exit(s, -1);
    return;
  }
  spdlog::info("supervisor: started '{}' as pid {}", s.spec.name, pid);
  s.status.pid = pid;
  s.status.state = ServiceState::starting;
  s.started = SteadyClock::now();
}

void Supervisor::on_exit(Service& s, int wait_status) {
  auto now = SteadyClock::now();
  s.status.pid.reset();
  s.status.last_exit = wait_status;
  if (wait_status >= 0) {
    if (WIFEXITED(wait_status)) {
      spdlog::warn("supervisor: '{}' exited with status {}", s.spec.name, WEXITSTATUS(wait_status));
    } else if (WIFSIGNALED(wait_status)) {
      spdlog::warn("supervisor: '{}' killed by signal {}", s.spec.name, WTERMSIG(wait_status));
    }
  }
  // A run that outlasted the longest backoff counts as stable.
  if (now - s.started >= std::chrono::duration<double>(s.spec.backoff_max)) s.backoff.reset();

  auto window = std::chrono::duration_cast<SteadyClock::duration>(std::chrono::duration<double>(s.spec.window));
  while (!s.restart_times.empty() && now - s.restart_times.front() > window) s.restart_times.pop_front();
  if (s.spec.max_restarts > 0 && s.restart_times.size() >= s.spec.max_restarts) {
    spdlog::error("supervisor: '{}' restarted {} times within {}s; giving up", s.spec.name, s.restart_times.size(),
                  s.spec.window);
    s.status.state = ServiceState::failed;
    return;
  }
  auto delay = s.backoff.next();
  s.status.backoff_history.push_back(delay.count());
  s.restart_at = now + std::chrono::duration_cast<SteadyClock::duration>(delay);
  s.status.state = ServiceState::backing_off;
}

void Supervisor::shutdown_children() {
  // Each child leads its own process group; signalling the group also
  // reaches anything it spawned.
  std::vector<pid_t> groups;
  for (auto& s : services_) {
    if (!s.status.pid) continue;
    groups.push_back(*s.status.pid);
    ::kill(-*s.status.pid, SIGTERM);
  }
  auto deadline = SteadyClock::now() + options_.grace;
  for (;;) {
    bool alive = false;
    for (auto& s : services_) {
      if (!s.status.pid) continue;
      int st = 0;
      pid_t rc = ::waitpid(*s.status.pid, &st, WNOHANG);
      if (rc == *s.status.pid || (rc < 0 && errno == ECHILD)) {
        s.status.pid.reset();
        s.status.last_exit = st;
      }
    }
    for (pid_t g : groups)
      if (::kill(-g, 0) == 0) alive = true;
    if (!alive || SteadyClock::now() >= deadline) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  for (pid_t g : groups) ::kill(-g, SIGKILL);
  for (auto& s : services_) {
    if (s.status.pid) {
      spdlog::warn("supervisor: '{}' ignored SIGTERM; killed", s.spec.name);
      int st = 0;
      ::waitpid(*s.status.pid, &st, 0);
      s.status.pid.reset();
      s.status.last_exit = st;
    }
    if (s.status.state != ServiceState::failed) s.status.state = ServiceState::stopped;
  }
}

SupervisorStatus Supervisor::run(const StopSignal& stop) {
  for (auto& s : services_) {
    if (s.spec.expected_running) {
      start(s);
    } else {
      s.status.state = ServiceState::stopped;
    }
  }
  publish();
  while (!stop.stop_requested()) {
    auto now = SteadyClock::now();
    for (auto& s : services_) {
      if (s.status.pid) {
        int st = 0;
        pid_t rc = ::waitpid(*s.status.pid, &st, WNOHANG);
        if (rc == *s.status.pid) {
          on_exit(s, st);
        } else if (s.status.state == ServiceState::starting && now - s.started >= options_.up_after) {
          s.status.state = ServiceState::up;
        }
      }
      if (s.status.state == ServiceState::backing_off && !s.status.pid && now >= s.restart_at && !stop.stop_requested()) {
        ++s.status.restarts;
        s.restart_times.push_back(now);
        start(s);
      }
    }
    publish();
    stop.wait_for(options_.tick);
  }
  shutdown_children();
  publish();
  return status();
}

SupervisorStatus supervise(const std::vector<ServiceSpec>& specs, const StopSignal& stop,
                           const SupervisorOptions& options) {
  Supervisor supervisor(specs, options);
  return supervisor.run(stop);
}

}  // namespace gridpipe::supervisor
