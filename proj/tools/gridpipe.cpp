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

#include <signal.h>

#include <iostream>
#include <thread>

#include "gridpipe/cli.hpp"

extern char** environ;

int main(int argc, char** argv) {
  // Signals are taken synchronously by one thread so that long running
  // subcommands can shut down cleanly.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  sigaddset(&set, SIGHUP);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  gridpipe::StopSignal stop;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    stop.request_stop();
  });
  waiter.detach();

  gridpipe::metric::Environment env;
  for (char** e = environ; *e; ++e) {
    std::string entry(*e);
    auto eq = entry.find('=');
    if (eq != std::string::npos) env.emplace(entry.substr(0, eq), entry.substr(eq + 1));
  }
  std::vector<std::string> args(argv + 1, argv + argc);
  int code = gridpipe::cli::run(args, env, std::cout, std::cerr, stop);
  std::cout.flush();
  return code;
}
