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

#include "gridpipe/dirq.hpp"

#include <fcntl.h>
#include <stdio.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <ctime>

#include <fmt/format.h>

#include "gridpipe/error.hpp"

namespace gridpipe::dirq {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kTmpSuffix = ".tmp";
constexpr std::string_view kLockSuffix = ".lck";
constexpr int kMaxAddAttempts = 1000;

bool all_hex(std::string_view s) noexcept {
  return std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
  });
}

bool ends_with(std::string_view s, std::string_view suffix) noexcept {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

// Atomic rename that refuses to replace an existing target. Returns 0 or errno.
int rename_noreplace(const fs::path& from, const fs::path& to) {
#ifdef RENAME_NOREPLACE
  if (::renameat2(AT_FDCWD, from.c_str(), AT_FDCWD, to.c_str(), RENAME_NOREPLACE) == 0)
    return 0;
  if (errno != EINVAL && errno != ENOSYS) return errno;
#endif
  if (::link(from.c_str(), to.c_str()) != 0) return errno;
  if (::unlink(from.c_str()) != 0) {
    int err = errno;
    ::unlink(to.c_str());
    return err;
  }
  return 0;
}

void fsync_path(const fs::path& path, int flags) {
  int fd = ::open(path.c_str(), flags | O_CLOEXEC);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

double seconds_since(const struct stat& st, const struct timespec& now) {
  return double(now.tv_sec - st.st_mtim.tv_sec) +
         double(now.tv_nsec - st.st_mtim.tv_nsec) / 1e9;
}

std::string read_file(const fs::path& path) {
  int fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd < 0) throw IoError("cannot open " + path.string(), errno);
  std::string data;
  char buf[65536];
  for (;;) {
    ssize_t n = ::read(fd, buf, sizeof buf);
    if (n < 0) {
      if (errno == EINTR) continue;
      int err = errno;
      ::close(fd);
      throw IoError("cannot read " + path.string(), err);
    }
    if (n == 0) break;
    data.append(buf, std::size_t(n));
  }
  ::close(fd);
  return data;
}

std::vector<std::string> sorted_entries(const fs::path& dir, bool (*accept)(std::string_view)) {
  std::vector<std::string> names;
  std::error_code ec;
  for (fs::directory_iterator it(dir, ec), end; !ec && it != end; it.increment(ec)) {
    std::string name = it->path().filename().string();
    if (accept(name)) names.push_back(std::move(name));
  }
  std::sort(names.begin(), names.end());
  return names;
}

bool accept_bucket(std::string_view s) { return is_bucket_name(s); }
bool accept_element(std::string_view s) { return is_element_file_name(s); }
bool accept_locked(std::string_view s) {
  return ends_with(s, kLockSuffix) && is_element_file_name(s.substr(0, s.size() - 4));
}
bool accept_any(std::string_view) { return true; }

}  // namespace

bool is_bucket_name(std::string_view s) noexcept { return s.size() == 8 && all_hex(s); }

bool is_element_file_name(std::string_view s) noexcept { return s.size() == 14 && all_hex(s); }

ElementName ElementName::parse(std::string_view text) {
  auto slash = text.find('/');
  if (slash == std::string_view::npos || !is_bucket_name(text.substr(0, slash)) ||
      !is_element_file_name(text.substr(slash + 1)))
    throw FormatError(fmt::format("invalid element name '{}'", text));
  return {std::string(text.substr(0, slash)), std::string(text.substr(slash + 1))};
}

ElementName make_name(uint64_t seconds, uint32_t micros, uint32_t counter,
                      uint32_t granularity) {
  uint64_t bucket = seconds - seconds % granularity;
  return {fmt::format("{:08x}", bucket),
          fmt::format("{:08x}{:05x}{:01x}", seconds, micros, counter & 0xf)};
}

std::string_view to_string(EntryState state) noexcept {
  switch (state) {
    case EntryState::committed: return "committed";
    case EntryState::locked: return "locked";
    case EntryState::in_flight: return "in-flight";
  }
  return "?";
}

DirQueue::DirQueue(fs::path root, QueueOptions options)
    : root_(std::move(root)), options_(options) {
  if (options_.granularity == 0) throw UsageError("dirq granularity must be positive");
  std::error_code ec;
  auto st = fs::status(root_, ec);
  if (!ec && fs::exists(st)) {
    if (!fs::is_directory(st))
      throw IoError(fmt::format("{} exists and is not a directory", root_.string()), ENOTDIR);
    return;
  }
  fs::create_directories(root_, ec);
  if (ec) throw IoError("cannot create queue " + root_.string(), ec.value());
}

fs::path DirQueue::element_path(const ElementName& name) const {
  return root_ / name.dir / name.file;
}

fs::path DirQueue::locked_path(const ElementName& name) const {
  return root_ / name.dir / (name.file + std::string(kLockSuffix));
}

ElementName DirQueue::next_name() {
  std::lock_guard lock(mutex_);
  auto read_clock = [] {
    timespec ts{};
    ::clock_gettime(CLOCK_REALTIME, &ts);
    return std::pair<uint64_t, uint32_t>(uint64_t(ts.tv_sec), uint32_t(ts.tv_nsec / 1000));
  };
  auto [sec, usec] = read_clock();
  uint32_t counter = 0;
  if (have_last_) {
    auto now = std::pair(sec, usec);
    auto last = std::pair(last_seconds_, last_micros_);
    if (now == last && last_counter_ == 15) {
      // Counter exhausted in this microsecond: wait for the clock to move on.
      while (now == last) now = read_clock();
      std::tie(sec, usec) = now;
    } else if (now <= last) {
      // Same tick, or the clock stepped backwards: stay on the last tick.
      sec = last_seconds_;
      usec = last_micros_;
      counter = last_counter_ + 1;
      if (counter > 15) {
        counter = 0;
        if (++usec == 1000000) {
          usec = 0;
          ++sec;
        }
      }
    }
  }
  last_seconds_ = sec;
  last_micros_ = usec;
  last_counter_ = counter;
  have_last_ = true;
  return make_name(sec, usec, counter, options_.granularity);
}

ElementName DirQueue::add(std::string_view payload) {
  for (int attempt = 0; attempt < kMaxAddAttempts; ++attempt) {
    ElementName name = next_name();
    fs::path bucket = root_ / name.dir;
    if (::mkdir(bucket.c_str(), 0755) != 0 && errno != EEXIST)
      throw IoError("cannot create bucket " + bucket.string(), errno);

    fs::path final_path = bucket / name.file;
    fs::path tmp_path = bucket / (name.file + std::string(kTmpSuffix));
    int fd = ::open(tmp_path.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, options_.file_mode);
    if (fd < 0) {
      // EEXIST: another process picked the same name. ENOENT: purge removed
      // the bucket between mkdir and open.
      if (errno == EEXIST || errno == ENOENT) continue;
      throw IoError("cannot create " + tmp_path.string(), errno);
    }
    std::size_t written = 0;
    while (written < payload.size()) {
      ssize_t n = ::write(fd, payload.data() + written, payload.size() - written);
      if (n < 0) {
        if (errno == EINTR) continue;
        int err = errno;
        ::close(fd);
        ::unlink(tmp_path.c_str());
        throw IoError("cannot write " + tmp_path.string(), err);
      }
      written += std::size_t(n);
    }
    if (options_.sync && ::fsync(fd) != 0) {
      int err = errno;
      ::close(fd);
      ::unlink(tmp_path.c_str());
      throw IoError("cannot sync " + tmp_path.string(), err);
    }
    ::close(fd);

    struct stat st{};
    if (::stat(locked_path(name).c_str(), &st) == 0) {
      ::unlink(tmp_path.c_str());
      continue;
    }
    int err = rename_noreplace(tmp_path, final_path);
    if (err == EEXIST) {
      ::unlink(tmp_path.c_str());
      continue;
    }
    if (err != 0) {
      ::unlink(tmp_path.c_str());
      throw IoError("cannot publish " + final_path.string(), err);
    }
    if (options_.sync) fsync_path(bucket, O_RDONLY | O_DIRECTORY);
    return name;
  }
  throw IoError("no free element name after repeated collisions in " + root_.string(), 0);
}

std::vector<ElementName> DirQueue::elements() const {
  std::vector<ElementName> out;
  for (const auto& bucket : sorted_entries(root_, accept_bucket))
    for (auto& file : sorted_entries(root_ / bucket, accept_element))
      out.push_back({bucket, std::move(file)});
  return out;
}

std::size_t DirQueue::count() const { return elements().size(); }

std::size_t DirQueue::locked_count() const {
  std::size_t n = 0;
  for (const auto& bucket : sorted_entries(root_, accept_bucket))
    n += sorted_entries(root_ / bucket, accept_locked).size();
  return n;
}

std::vector<EntryInfo> DirQueue::inspect() const {
  std::vector<EntryInfo> out;
  for (const auto& bucket : sorted_entries(root_, accept_bucket)) {
    for (const auto& entry : sorted_entries(root_ / bucket, accept_any)) {
      std::string_view base = entry;
      EntryState state = EntryState::committed;
      if (ends_with(base, kLockSuffix)) {
        state = EntryState::locked;
        base.remove_suffix(kLockSuffix.size());
      } else if (ends_with(base, kTmpSuffix)) {
        state = EntryState::in_flight;
        base.remove_suffix(kTmpSuffix.size());
      }
      if (!is_element_file_name(base)) continue;
      std::error_code ec;
      fs::path path = root_ / bucket / entry;
      auto size = fs::file_size(path, ec);
      if (ec) continue;
      auto mtime = fs::last_write_time(path, ec);
      if (ec) continue;
      out.push_back({{bucket, std::string(base)}, state, size, mtime});
    }
  }
  return out;
}

bool DirQueue::lock(const ElementName& name) {
  fs::path from = element_path(name);
  fs::path to = locked_path(name);
  int err = rename_noreplace(from, to);
  if (err == ENOENT || err == EEXIST) return false;
  if (err != 0) throw IoError("cannot lock " + from.string(), err);
  // The lock's age is measured from the moment it was taken.
  ::utimensat(AT_FDCWD, to.c_str(), nullptr, 0);
  std::lock_guard lock(mutex_);
  held_.insert(name);
  return true;
}

bool DirQueue::holds_lock(const ElementName& name) const {
  std::lock_guard lock(mutex_);
  return held_.count(name) != 0;
}

void DirQueue::require_lock(const ElementName& name, std::string_view op) const {
  if (!holds_lock(name))
    throw UsageError(fmt::format("dirq {}: {} is not locked by this handle", op, name.str()));
}

std::string DirQueue::get(const ElementName& name) const {
  require_lock(name, "get");
  return read_file(locked_path(name));
}

void DirQueue::remove(const ElementName& name) {
  require_lock(name, "remove");
  fs::path path = locked_path(name);
  if (::unlink(path.c_str()) != 0 && errno != ENOENT)
    throw IoError("cannot remove " + path.string(), errno);
  std::lock_guard lock(mutex_);
  held_.erase(name);
}

void DirQueue::unlock(const ElementName& name) {
  require_lock(name, "unlock");
  int err = rename_noreplace(locked_path(name), element_path(name));
  {
    std::lock_guard lock(mutex_);
    held_.erase(name);
  }
  // ENOENT: purge already broke the lock and the element is back.
  if (err != 0 && err != ENOENT) throw IoError("cannot unlock " + name.str(), err);
}

PurgeResult DirQueue::purge(double max_tmp_age, double max_lock_age) {
  PurgeResult result;
  timespec now{};
  ::clock_gettime(CLOCK_REALTIME, &now);
  uint64_t current_bucket = uint64_t(now.tv_sec) - uint64_t(now.tv_sec) % options_.granularity;

  for (const auto& bucket : sorted_entries(root_, accept_bucket)) {
    fs::path dir = root_ / bucket;
    for (const auto& entry : sorted_entries(dir, accept_any)) {
      fs::path path = dir / entry;
      struct stat st{};
      if (::lstat(path.c_str(), &st) != 0) continue;
      double age = seconds_since(st, now);
      std::string_view base = entry;
      if (ends_with(base, kTmpSuffix)) {
        base.remove_suffix(kTmpSuffix.size());
        if (is_element_file_name(base) && age >= max_tmp_age && ::unlink(path.c_str()) == 0)
          ++result.tmp_removed;
      } else if (ends_with(base, kLockSuffix)) {
        base.remove_suffix(kLockSuffix.size());
        if (!is_element_file_name(base) || age < max_lock_age) continue;
        ElementName name{bucket, std::string(base)};
        if (rename_noreplace(path, element_path(name)) == 0) {
          ++result.locks_broken;
          std::lock_guard lock(mutex_);
          held_.erase(name);
        }
      }
    }
    uint64_t bucket_start = std::stoull(bucket, nullptr, 16);
    // rmdir only succeeds on empty directories, so a racing add is safe.
    if (bucket_start < current_bucket) ::rmdir(dir.c_str());
  }
  return result;
}

}  // namespace gridpipe::dirq
