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

#include <algorithm>
#include <chrono>

namespace gridpipe {

// Exponential delay sequence: initial, initial*m, initial*m^2, ... capped.
class Backoff {
 public:
  using seconds = std::chrono::duration<double>;

  Backoff(seconds initial, seconds max, double multiplier = 2.0)
      : initial_(initial), max_(std::max(initial, max)), multiplier_(std::max(1.0, multiplier)),
        current_(initial_) {}

  // Delay to wait now; advances the sequence.
  seconds next() {
    seconds delay = current_;
    current_ = std::min(max_, seconds(current_.count() * multiplier_));
    return delay;
  }

  seconds peek() const noexcept { return current_; }
  bool at_max() const noexcept { return current_ >= max_; }
  void reset() noexcept { current_ = initial_; }

 private:
  seconds initial_;
  seconds max_;
  double multiplier_;
  seconds current_;
};

}  // namespace gridpipe
