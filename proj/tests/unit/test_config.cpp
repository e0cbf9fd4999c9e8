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

#include <doctest.h>

#include <fstream>

#include "gridpipe/config.hpp"
#include "gridpipe/error.hpp"
#include "temp_dir.hpp"

using namespace gridpipe;
using namespace gridpipe::config;
using gridpipe::testing::TempDir;

namespace {

std::string error_of(std::string_view text) {
  try {
    parse(text, "t.ini");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

constexpr const char* kPipeline = R"(# monitoring node
[supervisor]
log-dir = /var/log/gridpipe
grace = 5

[queue outgoing]
path = /var/spool/gridpipe/outgoing
granularity = 30
purge-lock-age = 120

[queue incoming]
path = /var/spool/gridpipe/incoming

[broker central]
uri = stomp+ssl://mb.example.org:6162
login = probe
passcode = s3cret
tls-ca = /etc/grid-security/ca.pem
tls-cert = /etc/grid-security/host.pem
tls-key = /etc/grid-security/host.key
heartbeat = 1000,2000

[forwarder upload]
incoming = queue:outgoing
outgoing = broker:central
destination = /queue/grid.probe.metricOutput
loop = yes

[forwarder download]
incoming = broker:central
outgoing = queue:incoming
destination = /queue/grid.probe.metricOutput
ack-mode = client-individual
receipt-timeout = 2.5
max-in-flight = 16

; processes
[service upload]
command = gridpipe forward --config /etc/gridpipe.ini --name upload
max-restarts = 5
window = 60

[service nagios]
command = gridpipe mq2nagios --queue /var/spool/gridpipe/incoming --pipe '/var/nagios/rw/nagios.cmd'
expected = stopped
)";

}  // namespace

TEST_CASE("ini tokenizer") {
  auto sections = parse_ini("# c\n[a x]\n k = v w \n\n; c\nq=\n[b]\nz = 1 = 2\n", "s");
  REQUIRE(sections.size() == 2);
  CHECK(sections[0].kind == "a");
  CHECK(sections[0].name == "x");
  CHECK(sections[0].line == 2);
  REQUIRE(sections[0].entries.size() == 2);
  CHECK(sections[0].entries[0].key == "k");
  CHECK(sections[0].entries[0].value == "v w");
  CHECK(sections[0].entries[0].line == 3);
  CHECK(sections[0].entries[1].value == "");
  CHECK(sections[1].name == "");
  CHECK(sections[1].entries[0].value == "1 = 2");
}

TEST_CASE("ini syntax errors carry the line") {
  auto err = [](std::string_view text) {
    try {
      parse_ini(text, "f.ini");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(err("[a\n").rfind("f.ini:1:", 0) == 0);
  CHECK(err("k = v\n").rfind("f.ini:1:", 0) == 0);
  CHECK(err("[a]\n\njunk\n").rfind("f.ini:3:", 0) == 0);
  CHECK(err("[]\n").rfind("f.ini:1:", 0) == 0);
  CHECK(err("[a]\n = v\n").rfind("f.ini:2:", 0) == 0);
}

TEST_CASE("value parsers") {
  CHECK(parse_bool("yes"));
  CHECK(parse_bool("TRUE"));
  CHECK(parse_bool("1"));
  CHECK_FALSE(parse_bool("off"));
  CHECK_FALSE(parse_bool("no"));
  CHECK_THROWS_AS(parse_bool("maybe"), ConfigError);
  CHECK(parse_seconds("2.5") == 2.5);
  CHECK(parse_seconds("0") == 0);
  CHECK_THROWS_AS(parse_seconds("-1"), ConfigError);
  CHECK_THROWS_AS(parse_seconds("1s"), ConfigError);
  CHECK(parse_heartbeat_pair("1000,2000") == stomp::Heartbeat{1000, 2000});
  CHECK(parse_heartbeat_pair("0,0") == stomp::Heartbeat{0, 0});
  CHECK_THROWS_AS(parse_heartbeat_pair("1000"), ConfigError);
}

TEST_CASE("full pipeline") {
  auto c = parse(kPipeline, "gridpipe.ini");
  CHECK(c.supervisor.log_dir == "/var/log/gridpipe");
  CHECK(c.supervisor.grace == 5);

  REQUIRE(c.queues.size() == 2);
  CHECK(c.queues.at("outgoing").granularity == 30);
  CHECK(c.queues.at("outgoing").purge_lock_age == 120);
  CHECK(c.queues.at("incoming").granularity == 60);

  const auto& b = c.brokers.at("central");
  CHECK(b.uri.tls);
  CHECK(b.uri.host == "mb.example.org");
  CHECK(b.uri.port == 6162);
  CHECK(b.login == "probe");
  CHECK(b.tls.ca_file == "/etc/grid-security/ca.pem");
  CHECK(b.heartbeat == stomp::Heartbeat{1000, 2000});

  const auto& up = c.forwarders.at("upload");
  auto* in = std::get_if<forwarder::DirQueueEndpoint>(&up.incoming);
  REQUIRE(in);
  CHECK(in->path == "/var/spool/gridpipe/outgoing");
  CHECK(in->granularity == 30);
  auto* out = std::get_if<forwarder::BrokerEndpoint>(&up.outgoing);
  REQUIRE(out);
  CHECK(out->uri.destination == "/queue/grid.probe.metricOutput");
  CHECK(out->passcode == "s3cret");
  CHECK(up.loop);
  CHECK(up.reliable);
  REQUIRE(up.tls);
  CHECK(up.tls->enabled);
  CHECK(up.tls->key_file == "/etc/grid-security/host.key");
  CHECK(up.heartbeat == stomp::Heartbeat{1000, 2000});

  const auto& down = c.forwarders.at("download");
  auto* src = std::get_if<forwarder::BrokerEndpoint>(&down.incoming);
  REQUIRE(src);
  CHECK(src->ack_mode == stomp::AckMode::client_individual);
  CHECK(down.receipt_timeout == std::chrono::milliseconds(2500));
  CHECK(down.max_in_flight == 16);
  CHECK_FALSE(down.loop);
  CHECK(error_of("[forwarder f]\nincoming = stomp://h/queue/a\noutgoing = dirq:/b\nack-mode = auto\n")
            .find("client-individual") != std::string::npos);

  REQUIRE(c.services.size() == 2);
  CHECK(c.services[0].name == "upload");
  CHECK(c.services[0].command ==
        std::vector<std::string>{"gridpipe", "forward", "--config", "/etc/gridpipe.ini", "--name", "upload"});
  CHECK(c.services[0].max_restarts == 5);
  CHECK(c.services[0].window == 60);
  CHECK(c.services[0].expected_running);
  CHECK(c.services[1].command.back() == "/var/nagios/rw/nagios.cmd");
  CHECK_FALSE(c.services[1].expected_running);
}

TEST_CASE("forwarder endpoints given inline") {
  auto c = parse("[forwarder f]\nincoming = dirq:/tmp/q\noutgoing = stomp://localhost:61613/queue/x\nreliable = no\n");
  const auto& f = c.forwarders.at("f");
  CHECK(std::get<forwarder::DirQueueEndpoint>(f.incoming).path == "/tmp/q");
  auto out = std::get<forwarder::BrokerEndpoint>(f.outgoing);
  CHECK(out.uri.destination == "/queue/x");
  CHECK_FALSE(out.uri.tls);
  CHECK_FALSE(f.reliable);
  CHECK_FALSE(f.tls);
}

TEST_CASE("semantic errors") {
  CHECK(error_of("[queue q]\npath = /a\ncolour = red\n") == "t.ini:3: unknown key 'colour' in [queue q]");
  CHECK(error_of("[queue q]\npath = /a\npath = /b\n").rfind("t.ini:3:", 0) == 0);
  CHECK(error_of("[queue q]\npath = /a\n[queue q]\npath = /b\n").rfind("t.ini:3:", 0) == 0);
  CHECK(error_of("[widget w]\n").find("unknown section kind 'widget'") != std::string::npos);
  CHECK(error_of("[queue]\npath = /a\n").find("needs a name") != std::string::npos);
  CHECK(error_of("[queue q]\ngranularity = 5\n").find("needs a path") != std::string::npos);
  CHECK(error_of("[queue q]\npath = /a\ngranularity = 0\n").rfind("t.ini:3:", 0) == 0);
  CHECK(error_of("[broker b]\nlogin = x\n").find("needs a uri") != std::string::npos);
  CHECK(error_of("[broker b]\nuri = http://x\n").rfind("t.ini:2:", 0) == 0);
  CHECK(error_of("[forwarder f]\nincoming = queue:nope\noutgoing = dirq:/x\n").find("no [queue nope]") !=
        std::string::npos);
  CHECK(error_of("[forwarder f]\nincoming = dirq:/a\n").find("needs both incoming and outgoing") != std::string::npos);
  CHECK(error_of("[forwarder f]\nincoming = /a\noutgoing = dirq:/b\n").find("must be queue:NAME") != std::string::npos);
  CHECK(error_of("[forwarder f]\nincoming = dirq:/a\noutgoing = dirq:/b\n").rfind("t.ini:1: [forwarder f]", 0) == 0);
  CHECK(error_of("[service s]\ncommand = x\nexpected = sometimes\n").rfind("t.ini:3:", 0) == 0);
  CHECK(error_of("[service s]\n").find("t.ini:") == 0);
  CHECK(error_of("[service s]\ncommand = a\n[service s]\ncommand = b\n").rfind("t.ini:3:", 0) == 0);
  CHECK(error_of("[forwarder f]\nincoming = stomp://h/queue/a\noutgoing = dirq:/b\nack-mode = sometimes\n")
            .rfind("t.ini:4:", 0) == 0);
}

TEST_CASE("forward references resolve") {
  auto c = parse(
      "[forwarder f]\nincoming = queue:q\noutgoing = broker:b\n"
      "[queue q]\npath = /q\n[broker b]\nuri = stomp://h:1234/topic/t\n");
  CHECK(std::get<forwarder::BrokerEndpoint>(c.forwarders.at("f").outgoing).uri.port == 1234);
}

TEST_CASE("load from disk") {
  TempDir tmp;
  auto path = tmp / "g.ini";
  std::ofstream(path) << kPipeline;
  CHECK(load(path).forwarders.size() == 2);
  CHECK_THROWS_AS(load(tmp / "missing.ini"), ConfigError);
  std::ofstream(tmp / "bad.ini") << "[queue q]\n\n\nbogus\n";
  try {
    load(tmp / "bad.ini");
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).rfind((tmp / "bad.ini").string() + ":4:", 0) == 0);
  }
}
