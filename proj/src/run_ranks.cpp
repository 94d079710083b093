// Copyright 2026 The dtrain Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dtrain/transport.hpp"

#include "backends.hpp"

namespace dtrain {

std::string_view to_string(Backend b) noexcept {
  switch (b) {
    case Backend::sim: return "sim";
    case Backend::threads: return "threads";
    case Backend::tcp: return "tcp";
  }
  return "unknown";
}

Backend parse_backend(std::string_view name) {
  if (name == "sim") return Backend::sim;
  if (name == "threads") return Backend::threads;
  if (name == "tcp") return Backend::tcp;
  fail(Errc::invalid_config, "unknown backend '" + std::string(name) + "'");
}

RunStats run_ranks_void(int n_ranks, const RunOptions& opts, const std::function<void(Endpoint&)>& program) {
  if (n_ranks < 1) fail(Errc::invalid_config, "run_ranks needs at least one rank");
  switch (opts.backend) {
    case Backend::sim: {
      detail::SimWorld world(n_ranks, opts);
      return world.run(program);
    }
    case Backend::threads: return detail::run_threads(n_ranks, opts, program);
    case Backend::tcp: return detail::run_tcp(n_ranks, opts, program);
  }
  fail(Errc::invalid_config, "unknown backend");
}

}  // namespace dtrain
