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

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <mutex>

namespace gridpipe {

// Cooperative shutdown flag shared by the long-running loops. Waiting on it
// doubles as an interruptible sleep.
class StopSignal {
 public:
  void request_stop();
  bool stop_requested() const noexcept {
    return stopped_.load(std::memory_order_acquire);
  }

  // Sleeps up to `timeout`; returns true if a stop was requested.
  bool wait_for(std::chrono::steady_clock::duration timeout) const;

 private:
  std::atomic<bool> stopped_{false};
  mutable std::mutex mutex_;
  mutable std::condition_variable cv_;
};

}  // namespace gridpipe
