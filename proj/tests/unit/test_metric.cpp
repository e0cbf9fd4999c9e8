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

#include <random>

#include "gridpipe/error.hpp"
#include "gridpipe/metric.hpp"

using namespace gridpipe;
using namespace gridpipe::metric;

namespace {

Environment example_env() {
  return {{"NAGIOS_HOSTNAME", "wn01.example.org"},
          {"NAGIOS_SERVICEDESC", "org.wlcg.CE-JobSubmit"},
          {"NAGIOS_SERVICESTATE", "OK"},
          {"NAGIOS_TIMET", "1433116800"},
          {"NAGIOS_SERVICEOUTPUT", "job ok"}};
}

// Independent rendering of the body grammar.
std::string expected_body(const MetricEvent& e) {
  std::string s;
  s += "hostName: " + e.host + "\n";
  s += "metricName: " + e.service + "\n";
  s += "metricStatus: " + std::string(to_string(e.status)) + "\n";
  s += "timestamp: " + std::to_string(e.timestamp) + "\n";
  s += "summaryData: " + e.summary + "\n";
  s += "detailsData: " + e.details + "\n";
  s += "EOT\n";
  return s;
}

}  // namespace

TEST_CASE("status table") {
  CHECK(code(Status::ok) == 0);
  CHECK(code(Status::warning) == 1);
  CHECK(code(Status::critical) == 2);
  CHECK(code(Status::unknown) == 3);
  for (int c = 0; c < 4; ++c) CHECK(code(from_code(c)) == c);
  CHECK_THROWS(from_code(4));
  CHECK_THROWS(from_code(-1));
  CHECK(parse_status("critical") == Status::critical);
  CHECK(parse_status("Warning") == Status::warning);
  CHECK_FALSE(parse_status("FINE").has_value());
}

TEST_CASE("from_env") {
  auto e = from_env(example_env());
  CHECK(e == MetricEvent{"wn01.example.org", "org.wlcg.CE-JobSubmit", Status::ok, 1433116800, "job ok", ""});

  auto env = example_env();
  env["NAGIOS_SERVICESTATE"] = "critical";
  CHECK(from_env(env).status == Status::critical);

  env = example_env();
  env["NAGIOS_LONGSERVICEOUTPUT"] = "l1\nl2";
  CHECK(from_env(env).details == "l1\nl2");

  for (const char* var : {"NAGIOS_HOSTNAME", "NAGIOS_SERVICEDESC", "NAGIOS_SERVICESTATE", "NAGIOS_TIMET",
                          "NAGIOS_SERVICEOUTPUT"}) {
    env = example_env();
    env.erase(var);
    try {
      from_env(env);
      FAIL("missing " << var << " accepted");
    } catch (const Error& err) {
      CHECK(std::string(err.what()).find(var) != std::string::npos);
    }
  }
  env = example_env();
  env["NAGIOS_TIMET"] = "12abc";
  CHECK_THROWS(from_env(env));
  env["NAGIOS_TIMET"] = "-5";
  CHECK_THROWS(from_env(env));
  env = example_env();
  env["NAGIOS_SERVICESTATE"] = "FINE";
  CHECK_THROWS(from_env(env));
}

TEST_CASE("to_message body grammar") {
  auto e = from_env(example_env());
  auto m = to_message(e);
  CHECK(m.body ==
        "hostName: wn01.example.org\nmetricName: org.wlcg.CE-JobSubmit\nmetricStatus: OK\ntimestamp: "
        "1433116800\nsummaryData: job ok\ndetailsData: \nEOT\n");
  CHECK(m.body == expected_body(e));
  CHECK(m.text);
  CHECK(m.header.at("destination-hint") == "org.wlcg.CE-JobSubmit");

  e.details = "l1\nl2";
  auto body = to_message(e).body;
  CHECK(body.substr(body.find("detailsData")) == "detailsData: l1\nl2\nEOT\n");
}

TEST_CASE("validate") {
  MetricEvent e{"h", "s", Status::ok, 0, "x", ""};
  CHECK_NOTHROW(validate(e));
  auto bad = e;
  bad.host = "";
  CHECK_THROWS_AS(validate(bad), UsageError);
  bad = e;
  bad.service = "a;b";
  CHECK_THROWS_AS(validate(bad), UsageError);
  bad = e;
  bad.summary = "a\nb";
  CHECK_THROWS_AS(validate(bad), UsageError);
  bad = e;
  bad.timestamp = -1;
  CHECK_THROWS_AS(validate(bad), UsageError);
  bad = e;
  bad.details = "a\nEOT\nb";
  CHECK_THROWS_AS(validate(bad), UsageError);
}

TEST_CASE("from_message errors") {
  auto good = to_message(from_env(example_env()));
  auto without = [&](const std::string& prefix) {
    Message m = good;
    auto pos = m.body.find(prefix);
    m.body.erase(pos, m.body.find('\n', pos) - pos + 1);
    return m;
  };
  CHECK_THROWS_AS(from_message(without("hostName")), FormatError);
  CHECK_THROWS_AS(from_message(without("timestamp")), FormatError);
  CHECK_THROWS_AS(from_message(without("EOT")), FormatError);

  Message bad_status = good;
  bad_status.body.replace(bad_status.body.find("OK"), 2, "FINE");
  CHECK_THROWS_AS(from_message(bad_status), FormatError);
  bool fallback = false;
  CHECK(from_message(bad_status, StatusPolicy::lenient, &fallback).status == Status::unknown);
  CHECK(fallback);

  Message bad_ts = good;
  bad_ts.body.replace(bad_ts.body.find("1433116800"), 10, "soon");
  CHECK_THROWS_AS(from_message(bad_ts, StatusPolicy::lenient), FormatError);
}

TEST_CASE("round trip over generated events") {
  std::mt19937 rng(23);
  auto word = [&](std::size_t max) {
    std::string s(1 + rng() % max, '\0');
    for (auto& c : s) c = "abcdefghijklmnopqrstuvwxyz0123456789.-_ :/"[rng() % 42];
    return s;
  };
  for (int i = 0; i < 3000; ++i) {
    MetricEvent e;
    e.host = word(30);
    e.service = word(40);
    e.status = from_code(int(rng() % 4));
    e.timestamp = int64_t(rng() % 4000000000u);
    e.summary = rng() % 5 ? word(80) : std::string();
    int lines = int(rng() % 4);
    for (int l = 0; l < lines; ++l) e.details += (l ? "\n" : "") + word(50);
    if (rng() % 6 == 0) e.summary += " \xc3\xa9t\xc3\xa9";
    REQUIRE(from_message(to_message(e)) == e);
  }
}
