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

#include "gridpipe/stop_signal.hpp"

#include <cstring>

#include "gridpipe/error.hpp"

namespace gridpipe {

IoError::IoError(const std::string& what, int err)
    : Error(err != 0 ? what + ": " + std::strerror(err) : what), code_(err) {}

void StopSignal::request_stop() {
  {
    std::lock_guard lock(mutex_);
    stopped_.store(true, std::memory_order_release);
  }
  cv_.notify_all();
}

bool StopSignal::wait_for(std::chrono::steady_clock::duration timeout) const {
  std::unique_lock lock(mutex_);
  return cv_.wait_for(lock, timeout, [this] { return stop_requested(); });
}

}  // namespace gridpipe
