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

#include <mutex>
#include <thread>

#include "backends.hpp"

namespace dtrain::detail {

bool CvEndpoint::block_until(std::unique_lock<std::mutex>& lk, const std::function<bool()>& ready, WaitKind kind) {
  const double limit = kind == WaitKind::pull ? options().pull_timeout_s : options().wait_timeout_s;
  return cv_.wait_for(lk, std::chrono::duration<double>(limit), ready);
}

void ThreadEndpoint::transmit(Message msg) {
  const RankId dst = msg.dst;
  const Tag tag = msg.tag;
  (*peers_)[static_cast<std::size_t>(dst)]->deliver(std::move(msg));
  on_delivered(dst, tag);
}

RunStats run_threads(int n_ranks, const RunOptions& opts, const std::function<void(Endpoint&)>& program) {
  const auto epoch = CvEndpoint::Clock::now();
  std::vector<std::unique_ptr<ThreadEndpoint>> eps;
  eps.reserve(static_cast<std::size_t>(n_ranks));
  for (int r = 0; r < n_ranks; ++r) {
    eps.push_back(std::make_unique<ThreadEndpoint>(r, n_ranks, opts.transport, epoch, &eps));
  }

  std::mutex err_mu;
  std::exception_ptr first_error;
  std::vector<double> finish(static_cast<std::size_t>(n_ranks), 0.0);
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(n_ranks));
  for (int r = 0; r < n_ranks; ++r) {
    threads.emplace_back([&, r] {
      auto& ep = *eps[static_cast<std::size_t>(r)];
      try {
        program(ep);
      } catch (...) {
        bool first = false;
        {
          std::lock_guard lk(err_mu);
          if (!first_error) {
            first_error = std::current_exception();
            first = true;
          }
        }
        if (first) {
          for (auto& e : eps) e->close(Errc::closed, "rank " + std::to_string(r) + " failed");
        }
      }
      finish[static_cast<std::size_t>(r)] = ep.now();
    });
  }
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);

  RunStats stats;
  for (int r = 0; r < n_ranks; ++r) {
    stats.elapsed_s = std::max(stats.elapsed_s, finish[static_cast<std::size_t>(r)]);
    stats.messages += eps[static_cast<std::size_t>(r)]->messages_sent();
  }
  return stats;
}

}  // namespace dtrain::detail
