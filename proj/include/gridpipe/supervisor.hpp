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

#include <sys/types.h>

#include <chrono>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "gridpipe/stop_signal.hpp"

namespace gridpipe::supervisor {

struct ServiceSpec {
  std::string name;
  std::vector<std::string> command;  // program followed by its arguments
  bool expected_running = true;
  double backoff_initial = 1.0;  // seconds
  double backoff_multiplier = 2.0;
  double backoff_max = 60.0;
  // Restarts allowed per rolling window; 0 = unlimited.
  unsigned max_restarts = 10;
  double window = 300.0;  // seconds
};

// Throws ConfigError on duplicate names or inconsistent parameters.
void validate(const std::vector<ServiceSpec>& specs);

enum class ServiceState { starting, up, backing_off, failed, stopped };

std::string_view to_string(ServiceState state) noexcept;

struct ServiceStatus {
  ServiceState state = ServiceState::stopped;
  std::optional<pid_t> pid;
  unsigned restarts = 0;
  // Raw wait status of the last exit, or -1 for a spawn failure.
  std::optional<int> last_exit;
  std::vector<double> backoff_history;  // delays applied before each restart
};

using SupervisorStatus = std::map<std::string, ServiceStatus>;

struct SupervisorOptions {
  std::filesystem::path log_dir = ".";
  std::chrono::milliseconds grace{10000};
  std::chrono::milliseconds tick{20};
  // A child that stays up this long is reported "up" and its backoff resets.
  std::chrono::milliseconds up_after{1000};
};

// Runs a set of services, restarting them as they exit. One thread drives
// it via run(); status() may be called from any thread.
class Supervisor {
 public:
  Supervisor(std::vector<ServiceSpec> specs, SupervisorOptions options = {});
  ~Supervisor();

  Supervisor(const Supervisor&) = delete;
  Supervisor& operator=(const Supervisor&) = delete;

  // Blocks until `stop` fires; then terminates the children (SIGTERM, then
  // SIGKILL after the grace period) and returns the final status.
  SupervisorStatus run(const StopSignal& stop);

  SupervisorStatus status() const;

 private:
  struct Service;

  void start(Service& service);
  void on_exit(Service& service, int wait_status);
  void shutdown_children();
  void publish();

  std::vector<Service> services_;
  SupervisorOptions options_;
  mutable std::mutex mutex_;
  SupervisorStatus snapshot_;
};

SupervisorStatus supervise(const std::vector<ServiceSpec>& specs, const StopSignal& stop,
                           const SupervisorOptions& options = {});

// Splits a command line on whitespace, honouring single and double quotes
// and backslash escapes. Throws ConfigError on unbalanced quotes.
std::vector<std::string> split_command(std::string_view text);

}  // namespace gridpipe::supervisor
