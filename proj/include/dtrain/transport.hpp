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

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dtrain/endpoint.hpp"
#include "dtrain/sim_network.hpp"

namespace dtrain {

enum class Backend { sim, threads, tcp };

std::string_view to_string(Backend b) noexcept;
Backend parse_backend(std::string_view name);

struct RunOptions {
  Backend backend = Backend::threads;
  TransportOptions transport;
  SimParams sim;
};

struct RunStats {
  /// Latest rank finish time: virtual seconds on sim, wall seconds otherwise.
  double elapsed_s = 0.0;
  /// Simulated backend only.
  std::uint64_t network_flows = 0;
  std::uint64_t messages = 0;
};

/// Runs `program` once per rank and waits for all of them. If any rank
/// throws, every endpoint is closed so blocked peers unwind, and the first
/// error is rethrown. The simulated backend schedules ranks one at a time in
/// rank order and raises Errc::deadlock_detected when no rank can run and no
/// event is pending.
RunStats run_ranks_void(int n_ranks, const RunOptions& opts, const std::function<void(Endpoint&)>& program);

template <typename R>
struct RunResult {
  std::vector<R> results;
  RunStats stats;
};

template <typename F>
auto run_ranks(int n_ranks, const RunOptions& opts, F&& program)
    -> RunResult<std::invoke_result_t<F&, Endpoint&>> {
  using R = std::invoke_result_t<F&, Endpoint&>;
  std::vector<std::optional<R>> slots(static_cast<std::size_t>(n_ranks));
  RunStats stats = run_ranks_void(n_ranks, opts, [&](Endpoint& ep) {
    slots[static_cast<std::size_t>(ep.rank())].emplace(program(ep));
  });
  RunResult<R> out;
  out.stats = stats;
  out.results.reserve(slots.size());
  for (auto& s : slots) out.results.push_back(std::move(*s));
  return out;
}

/// One "host:port" per line; line i is rank i. Blank lines and lines starting
/// with '#' are skipped.
std::vector<std::string> read_hostfile(const std::string& path);

/// Joins a TCP job as `rank` (multi-process use). Listens on the rank's own
/// entry and connects to every peer; fails with Errc::peer_unreachable when a
/// peer cannot be reached within `connect_timeout_s`.
std::unique_ptr<Endpoint> connect_tcp(const std::vector<std::string>& hosts, RankId rank,
                                      TransportOptions options = {}, double connect_timeout_s = 30.0);

/// TCP wire frame: u64 payload length, u32 src, u32 dst, u32 tag (all little
/// endian), then the payload.
inline constexpr std::size_t kTcpHeaderBytes = 20;
Bytes encode_tcp_frame(const Message& msg);
/// Parses a 20-byte header; returns (payload length, message with empty payload).
std::pair<std::uint64_t, Message> decode_tcp_header(std::span<const std::uint8_t> header);

}  // namespace dtrain
