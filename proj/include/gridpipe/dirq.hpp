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
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace gridpipe::dirq {

// Position of one element inside a queue: an 8-hex-digit time bucket and a
// 14-hex-digit file name (seconds, microseconds, counter).
struct ElementName {
  std::string dir;
  std::string file;

  std::string str() const { return dir + "/" + file; }

  // Parses "dddddddd/ffffffffffffff"; throws FormatError otherwise.
  static ElementName parse(std::string_view text);

  auto operator<=>(const ElementName&) const = default;
};

// Builds the name for a given wall-clock instant. Exposed for tests.
ElementName make_name(uint64_t seconds, uint32_t micros, uint32_t counter,
                      uint32_t granularity);

bool is_bucket_name(std::string_view s) noexcept;
bool is_element_file_name(std::string_view s) noexcept;

struct PurgeResult {
  std::size_t tmp_removed = 0;
  std::size_t locks_broken = 0;

  bool operator==(const PurgeResult&) const = default;
};

struct QueueOptions {
  uint32_t granularity = 60;
  mode_t file_mode = 0640;
  // fsync payload files and bucket directories on publish.
  bool sync = true;
};

enum class EntryState { committed, locked, in_flight };

struct EntryInfo {
  ElementName name;
  EntryState state;
  std::uintmax_t size;
  std::filesystem::file_time_type mtime;
};

std::string_view to_string(EntryState state) noexcept;

inline constexpr double kDefaultPurgeTmpAge = 300.0;
inline constexpr double kDefaultPurgeLockAge = 600.0;

// Filesystem-backed queue shared by any number of processes. Element states
// are encoded purely in file names: "<file>.tmp" while being written,
// "<file>" when committed, "<file>.lck" while locked by a consumer.
class DirQueue {
 public:
  explicit DirQueue(std::filesystem::path root, QueueOptions options = {});

  DirQueue(const DirQueue&) = delete;
  DirQueue& operator=(const DirQueue&) = delete;

  const std::filesystem::path& root() const noexcept { return root_; }
  uint32_t granularity() const noexcept { return options_.granularity; }

  ElementName add(std::string_view payload);

  // Committed, unlocked elements in name order; one directory scan each.
  std::vector<ElementName> elements() const;
  std::size_t count() const;
  std::size_t locked_count() const;
  // Every entry in any state, for diagnostics.
  std::vector<EntryInfo> inspect() const;

  // True iff this call took exclusive ownership of the element.
  bool lock(const ElementName& name);
  // The following require that this handle holds the lock.
  std::string get(const ElementName& name) const;
  void remove(const ElementName& name);
  void unlock(const ElementName& name);

  bool holds_lock(const ElementName& name) const;

  PurgeResult purge(double max_tmp_age = kDefaultPurgeTmpAge,
                    double max_lock_age = kDefaultPurgeLockAge);

  std::filesystem::path element_path(const ElementName& name) const;
  std::filesystem::path locked_path(const ElementName& name) const;

 private:
  ElementName next_name();
  void require_lock(const ElementName& name, std::string_view op) const;

  std::filesystem::path root_;
  QueueOptions options_;

  mutable std::mutex mutex_;
  uint64_t last_seconds_ = 0;
  uint32_t last_micros_ = 0;
  uint32_t last_counter_ = 0;
  bool have_last_ = false;
  std::set<ElementName> held_;
};

}  // namespace gridpipe::dirq
