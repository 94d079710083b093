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
#include <string>
#include <string_view>
#include <vector>

#include "dtrain/collectives.hpp"
#include "dtrain/topology.hpp"
#include "dtrain/transport.hpp"

namespace dtrain {

enum class Scenario { allreduce, shuffle, train };

std::string_view to_string(Scenario s) noexcept;
Scenario parse_scenario(std::string_view name);

struct BenchSpec {
  Scenario scenario = Scenario::allreduce;
  std::vector<Algorithm> algorithms = {Algorithm::multicolor, Algorithm::ring, Algorithm::reduce_bcast};
  std::vector<int> n_ranks = {8};
  int colors = kDefaultColors;
  int arity = kDefaultArity;
  std::vector<std::uint64_t> payload_bytes;
  Backend backend = Backend::sim;
  int repetitions = 3;
  std::uint64_t seed = 1;
  SimParams sim;
  TransportOptions transport;
  std::size_t segment_elems = kDefaultSegmentElems;
  /// Rows whose ranks x payload exceed this are skipped as failed.
  std::uint64_t memory_budget_bytes = std::uint64_t{3} << 30;

  // shuffle
  std::vector<int> groups = {1};
  std::uint64_t segments = 0;
  /// Fixed total corpus, partitioned over the ranks (rank sweeps).
  std::uint64_t corpus_bytes = std::uint64_t{64} << 20;
  /// When non-zero, every rank holds this much instead (group sweeps).
  std::uint64_t shard_bytes = 0;
  std::uint64_t record_bytes = std::uint64_t{16} << 10;

  // train
  int workers_per_node = 2;
  int per_worker_batch = 4;
  int epochs = 3;
  std::size_t corpus_samples = 4096;
  double compute_seconds_per_sample = 2e-6;

  void validate() const;
};

/// Allreduce rows use the bus-bandwidth convention:
///   throughput_GBps = 2 * payload_bytes * (n_ranks - 1) / n_ranks / median_time_s / 1e9.
/// Shuffle rows: payload_bytes is the per-rank resident shard before the
/// shuffle and throughput is that shard over the median time. Train rows:
/// payload_bytes is the per-step allreduce payload, median_time_s the median
/// epoch time, and throughput the bus bandwidth of one epoch's allreduces.
struct BenchRow {
  std::string scenario;
  std::string algorithm;
  int n_ranks = 0;
  std::uint64_t payload_bytes = 0;
  double median_time_s = 0.0;
  double throughput_GBps = 0.0;
  std::string backend;

  bool operator==(const BenchRow&) const = default;
};

struct TrainSummary {
  std::string algorithm;
  int n_ranks = 0;
  double epoch_time_s = 0.0;
  double comm_share = 0.0;
  /// T_ref * N_ref / (T_N * N), against the smallest rank count in the sweep.
  double scaling_efficiency = 0.0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  std::vector<std::string> failures;
  std::vector<TrainSummary> train;
};

double bus_bandwidth_GBps(std::uint64_t payload_bytes, int n_ranks, double seconds);
double median(std::vector<double> v);

/// Inputs are small integers, so every summation order gives the same exact
/// result; each repetition is checked against it before its time counts.
BenchReport bench_allreduce(const BenchSpec& spec);
BenchReport bench_shuffle(const BenchSpec& spec);
BenchReport bench_train(const BenchSpec& spec);
BenchReport run_bench(const BenchSpec& spec);

inline constexpr std::string_view kCsvHeader =
    "scenario,algorithm,n_ranks,payload_bytes,median_time_s,throughput_GBps,backend";

std::string to_csv(const std::vector<BenchRow>& rows);
/// Throws Errc::format_error on a wrong header or malformed line.
std::vector<BenchRow> parse_csv(std::string_view text);
/// Throws Errc::io_error.
void emit_csv(const std::vector<BenchRow>& rows, const std::string& path);
void dump_topology(const ColorTreeSet& ts, const std::string& path);

/// Byte counts with an optional K, M or G (binary) suffix.
std::uint64_t parse_size(std::string_view text);

}  // namespace dtrain
