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

// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "gridpipe/broker_sim.hpp"
#include "gridpipe/dirq.hpp"
#include "gridpipe/forwarder.hpp"
#include "gridpipe/metric.hpp"
#include "gridpipe/nagios.hpp"
#include "gridpipe/stomp/codec.hpp"
#include "gridpipe/stomp/session.hpp"
#include "gridpipe/supervisor.hpp"
#include "temp_dir.hpp"
#include "tls_material.hpp"

namespace fs = std::filesystem;
using namespace gridpipe;
using namespace std::chrono_literals;
using gridpipe::testing::TempDir;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Collects failed checks; the first few end up in the detail text.
struct Checks {
  std::vector<std::string> failures;
  void require(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  Outcome outcome(std::string detail) const {
    if (failures.empty()) return {true, std::move(detail)};
    std::string text;
    for (std::size_t i = 0; i < failures.size() && i < 5; ++i) text += (i ? "; " : "") + failures[i];
    if (failures.size() > 5) text += fmt::format("; and {} more", failures.size() - 5);
    return {false, text};
  }
};

template <typename Pred>
bool eventually(Pred pred, std::chrono::milliseconds timeout) {
  auto deadline = Clock::now() + timeout;
  while (Clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(10ms);
  }
  return pred();
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::vector<std::string> lines;
  std::ifstream in(path, std::ios::binary);
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

std::string tag_of(const std::string& text) {
  static const std::regex re("tag-[0-9]{5}");
  std::smatch m;
  return std::regex_search(text, m, re) ? m.str() : std::string();
}

// ---------------------------------------------------------------------------
// C1

Outcome golden_lines() {
  struct Row {
    metric::MetricEvent event;
    const char* expected;
  };
  using metric::Status;
  const std::vector<Row> rows = {
      {{"ce01.cern.ch", "org.sam.CE-JobSubmit", Status::ok, 1262304000, "Job submitted", ""},
       "[1262304000] PROCESS_SERVICE_CHECK_RESULT;ce01.cern.ch;org.sam.CE-JobSubmit;0;Job submitted\n"},
      {{"ce01.cern.ch", "org.sam.CE-JobSubmit", Status::warning, 1262304060, "Queue slow", ""},
       "[1262304060] PROCESS_SERVICE_CHECK_RESULT;ce01.cern.ch;org.sam.CE-JobSubmit;1;Queue slow\n"},
      {{"se.grid.example.org", "org.sam.SRM-Put", Status::critical, 1262304120, "SRM unreachable", ""},
       "[1262304120] PROCESS_SERVICE_CHECK_RESULT;se.grid.example.org;org.sam.SRM-Put;2;SRM unreachable\n"},
      {{"se.grid.example.org", "org.sam.SRM-Get", Status::unknown, 1262304180, "Probe timed out", ""},
       "[1262304180] PROCESS_SERVICE_CHECK_RESULT;se.grid.example.org;org.sam.SRM-Get;3;Probe timed out\n"},
      {{"wn042", "check_disk", Status::ok, 0, "DISK OK - free space: / 3326 MB (56%)", ""},
       "[0] PROCESS_SERVICE_CHECK_RESULT;wn042;check_disk;0;DISK OK - free space: / 3326 MB (56%)\n"},
      {{"bdii.example.org", "org.bdii.Entries", Status::warning, 1433116800, "entries=1200 limit=1000", ""},
       "[1433116800] PROCESS_SERVICE_CHECK_RESULT;bdii.example.org;org.bdii.Entries;1;entries=1200 limit=1000\n"},
      {{"lfc.example.org", "org.lfc.Read", Status::critical, 1433116801, "read;write failed", ""},
       "[1433116801] PROCESS_SERVICE_CHECK_RESULT;lfc.example.org;org.lfc.Read;2;read,write failed\n"},
      {{"mb.example.org", "org.activemq.Queue", Status::ok, 2147483647, "depth 0", "multi\nline details"},
       "[2147483647] PROCESS_SERVICE_CHECK_RESULT;mb.example.org;org.activemq.Queue;0;depth 0\n"},
      {{"cream.example.org", "emi.cream.CREAMCE-JobSubmit", Status::unknown, 1300000000, "", ""},
       "[1300000000] PROCESS_SERVICE_CHECK_RESULT;cream.example.org;emi.cream.CREAMCE-JobSubmit;3;\n"},
      {{"fts.example.org", "org.fts.Transfer", Status::warning, 1300000001, "rate 12 MB/s: degraded", ""},
       "[1300000001] PROCESS_SERVICE_CHECK_RESULT;fts.example.org;org.fts.Transfer;1;rate 12 MB/s: degraded\n"},
      {{"xrootd.example.org", "org.xrootd.Open", Status::critical, 4102444800, "open() errno=13 \\ EACCES", ""},
       "[4102444800] PROCESS_SERVICE_CHECK_RESULT;xrootd.example.org;org.xrootd.Open;2;open() errno=13 \\ EACCES\n"},
      {{"argus.example.org", "org.argus.PEP", Status::ok, 1500000000, "caf\xc3\xa9 \xe2\x9c\x93", ""},
       "[1500000000] PROCESS_SERVICE_CHECK_RESULT;argus.example.org;org.argus.PEP;0;caf\xc3\xa9 \xe2\x9c\x93\n"},
      {{"voms.example.org", "org.voms.Status", Status::unknown, 1500000060, "%s %d %n", ""},
       "[1500000060] PROCESS_SERVICE_CHECK_RESULT;voms.example.org;org.voms.Status;3;%s %d %n\n"},
  };
  Checks c;
  std::set<int> codes;
  for (const auto& row : rows) {
    auto check = nagios::to_passive(row.event);
    std::string got = nagios::render_for_pipe(check);
    c.require(got == row.expected, fmt::format("got '{}' for '{}'", got, row.event.service));
    // Independent oracle: the C template applied to the sanitized fields.
    char buf[8192];
    std::string code = std::to_string(metric::code(row.event.status));
    std::snprintf(buf, sizeof buf, "[%lld] PROCESS_SERVICE_CHECK_RESULT;%s;%s;%s;%s\n",
                  static_cast<long long>(row.event.timestamp), nagios::sanitize(row.event.host).c_str(),
                  nagios::sanitize(row.event.service).c_str(), code.c_str(),
                  nagios::sanitize(row.event.summary).c_str());
    c.require(got == buf, fmt::format("template oracle disagrees for '{}'", row.event.service));
    codes.insert(check.code);
  }
  c.require(codes == std::set<int>{0, 1, 2, 3}, "table does not cover all four status codes");
  c.require(rows.size() >= 12, "fewer than 12 rows");
  return c.outcome(fmt::format("{} events byte-exact", rows.size()));
}

// ---------------------------------------------------------------------------
// C2

Outcome codec_round_trip() {
  using namespace stomp;
  const Command commands[] = {Command::CONNECT,   Command::CONNECTED, Command::SEND,   Command::SUBSCRIBE,
                              Command::UNSUBSCRIBE, Command::ACK,     Command::NACK,   Command::BEGIN,
                              Command::COMMIT,    Command::ABORT,     Command::DISCONNECT, Command::MESSAGE,
                              Command::RECEIPT,   Command::ERROR};
  std::mt19937_64 rng(20100101);
  Checks c;
  std::map<Version, std::size_t> frames, special;
  for (Version v : {Version::v1_0, Version::v1_2}) {
    std::size_t with_colon = 0, with_lf = 0, with_backslash = 0;
    for (int i = 0; i < 10000; ++i) {
      Frame f(commands[rng() % std::size(commands)]);
      bool escaped = uses_escaping(f.command, v);
      std::string key_chars = escaped ? "kx-_.:\\\n\r" : "kx-_.";
      std::string value_chars = escaped ? "vy /.=:\\\n\r" : "vy /.=:\\";
      int headers = int(rng() % 7);
      for (int h = 0; h < headers; ++h) {
        std::string key(1 + rng() % 10, '\0');
        for (auto& ch : key) ch = key_chars[rng() % key_chars.size()];
        if (key == "content-length") key += "x";
        std::string value(rng() % 16, '\0');
        for (auto& ch : value) ch = value_chars[rng() % value_chars.size()];
        f.headers.emplace_back(key, value);
      }
      if (escaped && rng() % 4 == 0) f.headers.emplace_back("a:b\\c", "line\none:two\\three");
      if (may_carry_body(f.command) && rng() % 2) {
        f.body.resize(rng() % 512);
        for (auto& ch : f.body) ch = char(rng());
      }
      for (const auto& [k, val] : f.headers) {
        std::string both = k + val;
        with_colon += both.find(':') != std::string::npos;
        with_lf += both.find('\n') != std::string::npos;
        with_backslash += both.find('\\') != std::string::npos;
      }
      std::string wire = encode(f, v);
      // The encoder adds content-length for bodies; the decoded frame must
      // equal the input plus that header.
      Frame expected = f;
      if (!f.body.empty()) expected.headers.emplace_back("content-length", std::to_string(f.body.size()));

      FrameDecoder d(v);
      // Feed in random slices, with heart-beat EOLs in front.
      std::string stream = std::string(rng() % 3, '\n') + wire;
      std::optional<Frame> back;
      std::size_t pos = 0;
      while (pos < stream.size()) {
        std::size_t n = 1 + rng() % 64;
        d.feed(std::string_view(stream).substr(pos, n));
        pos += n;
        if (auto got = d.next()) {
          back = std::move(got);
          break;
        }
      }
      if (!back) back = d.next();
      if (!back || !(*back == expected)) {
        c.require(false, fmt::format("frame {} ({}) did not round-trip", i, to_string(f.command)));
        continue;
      }
      ++frames[v];
    }
    if (v == Version::v1_2) {
      special[v] = std::min({with_colon, with_lf, with_backslash});
      c.require(special[v] >= 100, "too few 1.2 headers containing ':', LF or backslash");
    }
  }
  return c.outcome(fmt::format("1.0: {} frames, 1.2: {} frames (>= {} headers with each of ':' LF '\\')",
                               frames[Version::v1_0], frames[Version::v1_2], special[Version::v1_2]));
}

// ---------------------------------------------------------------------------
// Pipeline shared by C3, C4 and C9:
// capture -> dirq -> forwarder -> broker /queue/x -> forwarder -> dirq -> mq2nagios -> file

struct PipelineOptions {
  std::size_t events = 1000;
  broker::FaultPlan faults;
  bool tls = false;
  const testing::TlsMaterial* tls_material = nullptr;
};

struct PipelineResult {
  std::vector<std::string> expected;      // one line per capture, capture order
  std::vector<std::string> lines;         // file contents
  std::vector<std::string> capture_tags;  // capture order
  std::vector<std::string> dirq_tags;     // outgoing queue order before forwarding
  std::vector<std::string> sent_tags;     // first upstream SEND of each element
  std::vector<std::string> incoming_tags; // incoming queue order before mq2nagios
  forwarder::ForwardReport up, down;
  nagios::Mq2NagiosResult sink;
  std::size_t outgoing_left = 0, incoming_left = 0;
  broker::DestinationStats broker_stats;
};

metric::Environment event_env(std::size_t i) {
  static const char* states[] = {"OK", "WARNING", "CRITICAL", "UNKNOWN"};
  return {{"NAGIOS_HOSTNAME", fmt::format("node{:02}.example.org", i % 17)},
          {"NAGIOS_SERVICEDESC", fmt::format("org.example.Probe-{}", i % 7)},
          {"NAGIOS_SERVICESTATE", states[i % 4]},
          {"NAGIOS_TIMET", std::to_string(1262304000 + i)},
          {"NAGIOS_SERVICEOUTPUT", fmt::format("run tag-{:05} done", i)},
          {"NAGIOS_LONGSERVICEOUTPUT", fmt::format("detail line 1\ndetail line 2 for {}", i)}};
}

std::vector<std::string> queue_tags(const fs::path& path) {
  dirq::DirQueue q(path);
  std::vector<std::string> tags;
  for (const auto& name : q.elements()) {
    std::ifstream in(q.element_path(name), std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    tags.push_back(tag_of(s.str()));
  }
  return tags;
}

PipelineResult run_pipeline(const fs::path& root, const PipelineOptions& opts) {
  PipelineResult r;
  broker::BrokerOptions bo;
  bo.faults = opts.faults;
  if (opts.tls) bo.tls = opts.tls_material->server_config(true);
  auto broker = broker::Broker::serve(bo);

  for (std::size_t i = 0; i < opts.events; ++i) {
    auto env = event_env(i);
    nagios::capture(env, root / "outgoing");
    r.expected.push_back(nagios::render_for_pipe(nagios::to_passive(metric::from_env(env))));
    r.capture_tags.push_back(fmt::format("tag-{:05}", i));
  }
  r.dirq_tags = queue_tags(root / "outgoing");

  std::string uri = fmt::format("{}://127.0.0.1:{}/queue/x", opts.tls ? "stomp+ssl" : "stomp", broker->port());
  auto base = [&] {
    forwarder::ForwarderConfig f;
    f.reliable = true;
    f.backoff_initial = 0.02;
    f.backoff_max = 0.2;
    f.receipt_timeout = 300ms;
    f.idle_timeout = 1000ms;
    if (opts.tls) f.tls = opts.tls_material->client_config(true);
    return f;
  };
  StopSignal never;

  std::set<std::string> sent_once;
  std::map<std::string, std::string> element_tag;
  {
    dirq::DirQueue q(root / "outgoing");
    auto names = q.elements();
    for (std::size_t i = 0; i < names.size() && i < r.dirq_tags.size(); ++i) element_tag[names[i].str()] = r.dirq_tags[i];
  }
  auto up = base();
  up.incoming = forwarder::DirQueueEndpoint{root / "outgoing"};
  up.outgoing = forwarder::broker_endpoint(stomp::BrokerUri::parse(uri));
  up.trace = [&](const forwarder::TraceEvent& e) {
    if (e.kind == forwarder::TraceEvent::Kind::sent && sent_once.insert(e.element).second)
      r.sent_tags.push_back(element_tag[e.element]);
  };
  r.up = forwarder::run(up, never);

  auto down = base();
  down.incoming = forwarder::broker_endpoint(stomp::BrokerUri::parse(uri));
  down.outgoing = forwarder::DirQueueEndpoint{root / "incoming"};
  r.down = forwarder::run(down, never);
  r.incoming_tags = queue_tags(root / "incoming");

  auto pipe = root / "nagios.cmd";
  std::ofstream(pipe).close();
  nagios::Mq2NagiosOptions mo;
  mo.once = true;
  r.sink = nagios::mq2nagios_run(root / "incoming", pipe, never, mo);
  for (auto& line : read_lines(pipe)) r.lines.push_back(line + "\n");

  r.outgoing_left = dirq::DirQueue(root / "outgoing").count() + dirq::DirQueue(root / "outgoing").locked_count();
  r.incoming_left = dirq::DirQueue(root / "incoming").count() + dirq::DirQueue(root / "incoming").locked_count();
  auto stats = broker->stats();
  if (auto it = stats.find("/queue/x"); it != stats.end()) r.broker_stats = it->second;
  return r;
}

Outcome end_to_end_clean() {
  TempDir tmp;
  auto r = run_pipeline(tmp.path(), {});
  Checks c;
  c.require(r.lines.size() == 1000, fmt::format("{} lines instead of 1000", r.lines.size()));
  std::map<std::string, int> per_tag;
  for (const auto& line : r.lines) ++per_tag[tag_of(line)];
  c.require(per_tag.size() == 1000, fmt::format("{} distinct tags", per_tag.size()));
  for (const auto& [tag, n] : per_tag) c.require(n == 1, fmt::format("{} seen {} times", tag, n));
  c.require(r.dirq_tags == r.capture_tags, "outgoing queue order differs from capture order");
  c.require(r.sent_tags == r.capture_tags, "upstream forwarder did not send in queue order");
  c.require(r.incoming_tags == r.capture_tags, "incoming queue order differs from broker order");
  c.require(r.lines == r.expected, "file lines differ from the expected lines in capture order");
  c.require(r.up.forwarded == 1000 && r.up.retried == 0, "upstream report");
  c.require(r.down.forwarded == 1000 && r.down.retried == 0, "downstream report");
  c.require(r.outgoing_left == 0 && r.incoming_left == 0, "queues not empty at the end");
  c.require(r.broker_stats.stored == 0 && r.broker_stats.pending == 0, "broker still holds messages");
  return c.outcome(fmt::format("1000 lines, 1000 unique tags, FIFO at every stage"));
}

// ---------------------------------------------------------------------------
// C4

Outcome end_to_end_faults() {
  TempDir tmp;
  PipelineOptions o;
  o.faults.apply(broker::DropConnection{50});
  o.faults.apply(broker::SwallowReceipts{0.1});
  auto r = run_pipeline(tmp.path(), o);
  Checks c;
  std::map<std::string, int> per_tag;
  for (const auto& line : r.lines) ++per_tag[tag_of(line)];
  std::size_t missing = 0, duplicates = 0;
  for (const auto& tag : r.capture_tags) {
    auto it = per_tag.find(tag);
    if (it == per_tag.end()) {
      ++missing;
    } else {
      duplicates += std::size_t(it->second - 1);
    }
  }
  c.require(missing == 0, fmt::format("{} tags lost", missing));
  c.require(per_tag.size() == 1000, fmt::format("{} distinct tags (stray lines?)", per_tag.size()));
  std::set<std::string> expected(r.expected.begin(), r.expected.end());
  for (const auto& line : r.lines) c.require(expected.count(line) == 1, "line not produced by any capture");
  c.require(r.outgoing_left == 0 && r.incoming_left == 0, "queues not empty at the end");
  c.require(r.broker_stats.stored == 0 && r.broker_stats.pending == 0, "broker still holds messages");
  c.require(r.up.retried + r.down.retried > 0, "faults never triggered a retry");
  return c.outcome(fmt::format("{} lines, 0 lost, {} duplicates (upstream retried={}, downstream retried={})",
                               r.lines.size(), duplicates, r.up.retried, r.down.retried));
}

// ---------------------------------------------------------------------------
// C5

Outcome dirq_concurrency() {
  TempDir tmp;
  Checks c;
  const int kWorkers = 4, kAdds = 250;
  auto root = tmp / "q";
  dirq::DirQueue(root).count();

  auto fork_all = [&](const std::function<void(int)>& body) {
    std::vector<pid_t> pids;
    for (int w = 0; w < kWorkers; ++w) {
      pid_t pid = ::fork();
      if (pid == 0) {
        try {
          body(w);
        } catch (...) {
          ::_exit(1);
        }
        ::_exit(0);
      }
      pids.push_back(pid);
    }
    bool ok = true;
    for (pid_t p : pids) {
      int st = 0;
      ::waitpid(p, &st, 0);
      ok = ok && WIFEXITED(st) && WEXITSTATUS(st) == 0;
    }
    return ok;
  };

  // Processes.
  c.require(fork_all([&](int w) {
              dirq::DirQueue q(root, {.sync = false});
              for (int i = 0; i < kAdds; ++i) q.add(fmt::format("p{}-{}", w, i));
            }),
            "a producer process failed");
  dirq::DirQueue q(root);
  auto names = q.elements();
  std::set<std::string> unique;
  for (const auto& n : names) unique.insert(n.str());
  c.require(q.count() == 1000, fmt::format("count {} after process adds", q.count()));
  c.require(unique.size() == 1000, fmt::format("{} unique names", unique.size()));

  c.require(fork_all([&](int w) {
              dirq::DirQueue handle(root, {.sync = false});
              std::ofstream out(tmp / fmt::format("taken-{}", w));
              for (;;) {
                auto todo = handle.elements();
                if (todo.empty()) break;
                for (const auto& n : todo) {
                  if (!handle.lock(n)) continue;
                  out << handle.get(n) << "\n";
                  handle.remove(n);
                }
              }
            }),
            "a consumer process failed");
  std::map<std::string, int> taken;
  std::vector<std::size_t> per_consumer;
  for (int w = 0; w < kWorkers; ++w) {
    auto lines = read_lines(tmp / fmt::format("taken-{}", w));
    per_consumer.push_back(lines.size());
    for (const auto& l : lines) ++taken[l];
  }
  c.require(taken.size() == 1000, fmt::format("{} distinct payloads consumed", taken.size()));
  for (const auto& [p, n] : taken) c.require(n == 1, fmt::format("{} consumed {} times", p, n));
  c.require(q.count() == 0 && q.locked_count() == 0, "queue not empty after consumers");

  // Threads, one handle each.
  auto troot = tmp / "tq";
  {
    std::vector<std::thread> threads;
    for (int w = 0; w < kWorkers; ++w)
      threads.emplace_back([&, w] {
        dirq::DirQueue h(troot, {.sync = false});
        for (int i = 0; i < kAdds; ++i) h.add(fmt::format("t{}-{}", w, i));
      });
    for (auto& t : threads) t.join();
  }
  dirq::DirQueue tq(troot);
  c.require(tq.count() == 1000, fmt::format("count {} after thread adds", tq.count()));
  std::mutex m;
  std::map<std::string, int> ttaken;
  {
    std::vector<std::thread> threads;
    for (int w = 0; w < kWorkers; ++w)
      threads.emplace_back([&] {
        dirq::DirQueue h(troot, {.sync = false});
        for (;;) {
          auto todo = h.elements();
          if (todo.empty()) break;
          for (const auto& n : todo) {
            if (!h.lock(n)) continue;
            auto payload = h.get(n);
            h.remove(n);
            std::lock_guard lock(m);
            ++ttaken[payload];
          }
        }
      });
    for (auto& t : threads) t.join();
  }
  c.require(ttaken.size() == 1000, fmt::format("{} distinct payloads consumed by threads", ttaken.size()));
  for (const auto& [p, n] : ttaken) c.require(n == 1, fmt::format("{} consumed {} times", p, n));
  c.require(tq.count() == 0 && tq.locked_count() == 0, "thread queue not empty");
  return c.outcome(fmt::format("processes and threads: 1000 unique adds, 1000 single removals (per consumer {}/{}/{}/{})",
                               per_consumer[0], per_consumer[1], per_consumer[2], per_consumer[3]));
}

// ---------------------------------------------------------------------------
// C6

Outcome crash_recovery() {
  TempDir tmp;
  Checks c;
  const std::size_t kEvents = 6;
  for (std::size_t i = 0; i < kEvents; ++i) nagios::capture(event_env(i), tmp / "outgoing");

  // A broker that never confirms, so the forwarder sits between lock and receipt.
  broker::BrokerOptions stuck_opts;
  stuck_opts.faults.apply(broker::SwallowReceipts{1.0});
  auto stuck = broker::Broker::serve(stuck_opts);
  std::string stuck_uri = fmt::format("stomp://127.0.0.1:{}/queue/x", stuck->port());

  pid_t pid = ::fork();
  if (pid == 0) {
    int devnull = ::open("/dev/null", O_WRONLY);
    ::dup2(devnull, 1);
    ::dup2(devnull, 2);
    std::string queue = (tmp / "outgoing").string();
    ::execl(GRIDPIPE_BINARY, GRIDPIPE_BINARY, "forward", "--incoming-dirq", queue.c_str(), "--outgoing-broker",
            stuck_uri.c_str(), "--reliable", "--max-in-flight", "2", "--receipt-timeout", "120",
            static_cast<char*>(nullptr));
    ::_exit(127);
  }
  dirq::DirQueue q(tmp / "outgoing");
  bool locked = eventually([&] { return q.locked_count() == 2; }, 10s);
  c.require(locked, fmt::format("forwarder never held 2 locks (held {})", q.locked_count()));
  bool sent = eventually([&] { return stuck->stats()["/queue/x"].enqueued == 2; }, 5s);
  c.require(sent, "locked elements were not sent before the kill");
  ::kill(pid, SIGKILL);
  int st = 0;
  ::waitpid(pid, &st, 0);
  c.require(WIFSIGNALED(st) && WTERMSIG(st) == SIGKILL, "forwarder did not die from SIGKILL");
  std::size_t locked_after_kill = q.locked_count();
  c.require(locked_after_kill == 2, fmt::format("{} locks left behind", locked_after_kill));
  c.require(q.count() == kEvents - 2, "unlocked count after kill");

  auto purged = q.purge(300, 0);
  c.require(purged.locks_broken == 2, fmt::format("purge broke {} locks", purged.locks_broken));
  c.require(q.count() == kEvents && q.locked_count() == 0, "elements did not return to the queue");

  // Recovery run against a healthy broker, then down to the command file.
  auto healthy = broker::Broker::serve({});
  std::string uri = fmt::format("stomp://127.0.0.1:{}/queue/x", healthy->port());
  StopSignal never;
  forwarder::ForwarderConfig up;
  up.incoming = forwarder::DirQueueEndpoint{tmp / "outgoing"};
  up.outgoing = forwarder::broker_endpoint(stomp::BrokerUri::parse(uri));
  auto up_report = forwarder::run(up, never);
  forwarder::ForwarderConfig down;
  down.incoming = forwarder::broker_endpoint(stomp::BrokerUri::parse(uri));
  down.outgoing = forwarder::DirQueueEndpoint{tmp / "incoming"};
  down.idle_timeout = 500ms;
  forwarder::run(down, never);
  std::ofstream(tmp / "nagios.cmd").close();
  nagios::Mq2NagiosOptions mo;
  mo.once = true;
  nagios::mq2nagios_run(tmp / "incoming", tmp / "nagios.cmd", never, mo);
  std::set<std::string> tags;
  for (const auto& line : read_lines(tmp / "nagios.cmd")) tags.insert(tag_of(line));
  c.require(up_report.forwarded == kEvents, fmt::format("recovery forwarded {}", up_report.forwarded));
  c.require(tags.size() == kEvents, fmt::format("{} of {} tags delivered", tags.size(), kEvents));
  c.require(q.count() == 0, "outgoing queue not drained");
  return c.outcome(fmt::format("killed with {} locked, purge broke {}, {} of {} delivered", locked_after_kill,
                               purged.locks_broken, tags.size(), kEvents));
}

// ---------------------------------------------------------------------------
// C7

Outcome heartbeat_table() {
  struct Row {
    stomp::Heartbeat client, server;
    int send, expect;
  };
  const Row rows[] = {
      {{1000, 2000}, {3000, 500}, 1000, 3000},
      {{0, 0}, {0, 0}, 0, 0},
      {{0, 0}, {3000, 500}, 0, 0},
      {{1000, 2000}, {0, 0}, 0, 0},
      {{1000, 0}, {3000, 500}, 1000, 0},
      {{0, 2000}, {3000, 500}, 0, 3000},
      {{500, 500}, {500, 500}, 500, 500},
      {{10000, 10000}, {1, 1}, 10000, 10000},
      {{1, 1}, {10000, 10000}, 10000, 10000},
      {{4000, 4000}, {0, 4000}, 4000, 0},
  };
  Checks c;
  for (const auto& row : rows) {
    auto n = stomp::negotiate_heartbeat(row.client, row.server);
    c.require(n.send_interval.count() == row.send && n.receive_timeout.count() == row.expect,
              fmt::format("({},{})/({},{}) gave ({},{})", row.client.send_ms, row.client.receive_ms, row.server.send_ms,
                          row.server.receive_ms, n.send_interval.count(), n.receive_timeout.count()));
  }
  return c.outcome(fmt::format("{} rows exact", std::size(rows)));
}

// ---------------------------------------------------------------------------
// C8

// Non-zombie processes whose parent is `ppid` or whose group is in `groups`.
std::vector<pid_t> live_processes(pid_t ppid, const std::set<pid_t>& groups) {
  std::vector<pid_t> found;
  for (const auto& e : fs::directory_iterator("/proc")) {
    std::string name = e.path().filename().string();
    if (name.empty() || !std::all_of(name.begin(), name.end(), ::isdigit)) continue;
    std::ifstream stat(e.path() / "stat");
    std::string line;
    if (!std::getline(stat, line)) continue;
    auto close = line.rfind(')');
    if (close == std::string::npos) continue;
    std::istringstream rest(line.substr(close + 2));
    char state = 0;
    long parent = 0, pgrp = 0;
    rest >> state >> parent >> pgrp;
    if (state == 'Z') continue;
    if (parent == ppid || groups.count(pid_t(pgrp))) found.push_back(pid_t(std::stol(name)));
  }
  return found;
}

Outcome supervisor_restarts_and_stop() {
  TempDir tmp;
  Checks c;
  supervisor::SupervisorOptions opts;
  opts.log_dir = tmp.path();
  opts.tick = 10ms;
  opts.grace = 1000ms;
  opts.up_after = 300ms;

  supervisor::ServiceSpec crasher;
  crasher.name = "crasher";
  crasher.command = {"/bin/sh", "-c", "exit 0"};
  crasher.backoff_initial = 0.05;
  crasher.backoff_max = 0.2;
  crasher.max_restarts = 3;
  crasher.window = 60;
  supervisor::ServiceState crasher_state{};
  unsigned crasher_restarts = 0;
  {
    supervisor::Supervisor sup({crasher}, opts);
    StopSignal stop;
    supervisor::SupervisorStatus final_status;
    std::thread t([&] { final_status = sup.run(stop); });
    bool failed = eventually([&] { return sup.status().at("crasher").state == supervisor::ServiceState::failed; }, 10s);
    std::this_thread::sleep_for(500ms);  // no further restarts may follow
    stop.request_stop();
    t.join();
    crasher_state = final_status.at("crasher").state;
    crasher_restarts = final_status.at("crasher").restarts;
    c.require(failed, "crasher never reached failed");
    c.require(crasher_restarts == 3, fmt::format("{} restarts instead of 3", crasher_restarts));
    c.require(crasher_state == supervisor::ServiceState::failed, "final state is not failed");
  }

  auto spec = [](std::string name, std::string script) {
    supervisor::ServiceSpec s;
    s.name = std::move(name);
    s.command = {"/bin/sh", "-c", std::move(script)};
    return s;
  };
  std::vector<supervisor::ServiceSpec> services = {
      spec("exec-sleep", "exec sleep 60"),
      spec("shell-with-child", "sleep 60; echo never"),
      spec("ignores-term", "trap '' TERM; sleep 60 & while :; do sleep 1; done"),
  };
  supervisor::Supervisor sup(services, opts);
  StopSignal stop;
  std::thread t([&] { sup.run(stop); });
  bool up = eventually(
      [&] {
        auto st = sup.status();
        return std::all_of(st.begin(), st.end(),
                           [](const auto& kv) { return kv.second.state == supervisor::ServiceState::up; });
      },
      10s);
  c.require(up, "services did not come up");
  std::set<pid_t> groups;
  for (const auto& [name, s] : sup.status())
    if (s.pid) groups.insert(*s.pid);
  std::size_t before = live_processes(::getpid(), groups).size();
  c.require(before >= 5, fmt::format("only {} supervised processes before stop", before));

  auto stop_at = Clock::now();
  stop.request_stop();
  auto limit = opts.grace + 2s;
  bool gone = eventually([&] { return live_processes(::getpid(), groups).empty(); }, limit);
  auto took = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - stop_at);
  t.join();
  c.require(gone, fmt::format("{} processes left {} ms after stop", live_processes(::getpid(), groups).size(),
                              took.count()));
  for (const auto& [name, s] : sup.status())
    c.require(s.state == supervisor::ServiceState::stopped && !s.pid, name + " not stopped");
  return c.outcome(fmt::format("crasher: {} restarts then failed; {} processes gone {} ms after stop (limit {} ms)",
                               crasher_restarts, before, took.count(),
                               std::chrono::duration_cast<std::chrono::milliseconds>(limit).count()));
}

// ---------------------------------------------------------------------------
// C9

Outcome tls_pipeline() {
  TempDir tmp;
  Checks c;
  auto material = testing::make_tls_material(tmp / "pki");
  PipelineOptions plain;
  plain.events = 100;
  fs::create_directories(tmp / "plain");
  auto a = run_pipeline(tmp / "plain", plain);

  PipelineOptions secure = plain;
  secure.tls = true;
  secure.tls_material = &material;
  fs::create_directories(tmp / "tls");
  auto b = run_pipeline(tmp / "tls", secure);

  c.require(material.client_config(true).verify_peer && material.server_config(true).verify_peer,
            "verification not enabled");
  c.require(a.lines.size() == 100, fmt::format("plaintext produced {} lines", a.lines.size()));
  c.require(b.lines == a.lines, "TLS output differs from plaintext output");
  c.require(b.lines == b.expected, "TLS output differs from the captured events");
  c.require(b.up.forwarded == 100 && b.down.forwarded == 100, "TLS forwarder reports");

  // Same broker setup without a client certificate must be refused.
  broker::BrokerOptions bo;
  bo.tls = material.server_config(true);
  auto broker = broker::Broker::serve(bo);
  nagios::capture(event_env(0), tmp / "anon");
  forwarder::ForwarderConfig anon;
  anon.incoming = forwarder::DirQueueEndpoint{tmp / "anon"};
  anon.outgoing =
      forwarder::broker_endpoint(stomp::BrokerUri::parse(fmt::format("stomp+ssl://127.0.0.1:{}/queue/x", broker->port())));
  anon.tls = material.client_config(false);
  anon.backoff_initial = 0.01;
  anon.backoff_max = 0.02;
  bool refused = false;
  try {
    forwarder::run(anon, StopSignal{});
  } catch (const std::exception&) {
    refused = true;
  }
  c.require(refused, "a client without certificate was accepted");
  return c.outcome("100 lines over mutual TLS, identical to plaintext; anonymous client refused");
}

struct Criterion {
  const char* id;
  const char* title;
  double limit_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::off);
  if (const char* lvl = std::getenv("GRIDPIPE_LOG_LEVEL")) spdlog::set_level(spdlog::level::from_str(lvl));
  ::signal(SIGPIPE, SIG_IGN);

  const std::vector<Criterion> criteria = {
      {"C1", "golden passive-check lines", 1, golden_lines},
      {"C2", "codec round trip", 30, codec_round_trip},
      {"C3", "end to end, no faults", 60, end_to_end_clean},
      {"C4", "end to end with faults", 120, end_to_end_faults},
      {"C5", "dirq concurrency", 30, dirq_concurrency},
      {"C6", "crash recovery", 30, crash_recovery},
      {"C7", "heartbeat table", 1, heartbeat_table},
      {"C8", "supervisor", 30, supervisor_restarts_and_stop},
      {"C9", "TLS", 60, tls_pipeline},
  };
  std::set<std::string> only(argv + 1, argv + argc);
  int failed = 0;
  for (const auto& crit : criteria) {
    if (!only.empty() && !only.count(crit.id)) continue;
    auto start = Clock::now();
    Outcome o;
    try {
      o = crit.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    double took = std::chrono::duration<double>(Clock::now() - start).count();
    bool in_time = took <= crit.limit_s;
    bool pass = o.pass && in_time;
    if (!in_time) o.detail += fmt::format("; over the {} s limit", crit.limit_s);
    std::cout << fmt::format("{} {} {} ({:.2f} s, limit {} s): {}\n", crit.id, pass ? "PASS" : "FAIL", crit.title,
                             took, crit.limit_s, o.detail)
              << std::flush;
    failed += !pass;
  }
  return failed ? 1 : 0;
}
