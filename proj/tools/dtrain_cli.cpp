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

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dtrain/bench.hpp"
#include "dtrain/dimd.hpp"
#include "dtrain/error.hpp"
#include "dtrain/topology.hpp"
#include "dtrain/transport.hpp"

namespace {

constexpr const char* kThroughputNote =
    "Allreduce throughput is bus bandwidth: 2 * payload_bytes * (n_ranks - 1) / n_ranks / median_time_s / 1e9 GB/s. "
    "Shuffle rows report the per-rank shard bytes and shard bytes / time; train rows report the per-step allreduce "
    "payload, the median epoch time, and the bus bandwidth of one epoch's allreduces.";

struct BenchArgs {
  std::vector<int> ranks;
  int colors = dtrain::kDefaultColors;
  int arity = dtrain::kDefaultArity;
  std::vector<std::string> algos;
  std::string backend = "sim";
  std::vector<std::string> payloads;
  int reps = 3;
  std::uint64_t seed = 1;
  double latency_us = 1.5;
  double bandwidth_gbps = 100.0;
  int pods = 1;
  std::vector<int> groups;
  std::uint64_t segments = 0;
  std::string out;
  std::string shard_bytes;
  std::string corpus_bytes;
  std::string record_bytes;
  std::size_t segment_elems = dtrain::kDefaultSegmentElems;
  std::string summary_out;
};

void add_bench_flags(CLI::App* cmd, BenchArgs& a) {
  cmd->add_option("--ranks", a.ranks, "Rank counts (comma separated or repeated)")->delimiter(',');
  cmd->add_option("--colors", a.colors, "Colors for multicolor allreduce")->capture_default_str();
  cmd->add_option("--arity", a.arity, "Tree arity")->capture_default_str();
  cmd->add_option("--algo", a.algos, "multicolor, ring, reduce_bcast (default: all)")->delimiter(',');
  cmd->add_option("--backend", a.backend, "sim, threads or tcp")->capture_default_str();
  cmd->add_option("--payload", a.payloads, "Payload sizes, suffixes K/M/G (repeatable)")->delimiter(',');
  cmd->add_option("--reps", a.reps, "Repetitions (>= 3); epochs for train")->capture_default_str();
  cmd->add_option("--seed", a.seed, "Seed")->capture_default_str();
  cmd->add_option("--latency-us", a.latency_us, "Simulated per-link latency")->capture_default_str();
  cmd->add_option("--bandwidth-gbps", a.bandwidth_gbps, "Simulated per-direction link rate")->capture_default_str();
  cmd->add_option("--pods", a.pods, "Simulated pods")->capture_default_str();
  cmd->add_option("--groups", a.groups, "Shuffle group counts")->delimiter(',');
  cmd->add_option("--segments", a.segments, "Shuffle segments (0: one per GiB)")->capture_default_str();
  cmd->add_option("--shard-bytes", a.shard_bytes, "Shuffle: fixed per-rank shard instead of a fixed corpus");
  cmd->add_option("--corpus-bytes", a.corpus_bytes, "Shuffle: total corpus partitioned over the ranks (default 64M)");
  cmd->add_option("--record-bytes", a.record_bytes, "Shuffle: record size (default 16K)");
  cmd->add_option("--segment-elems", a.segment_elems, "Allreduce pipeline segment in floats")->capture_default_str();
  cmd->add_option("--out", a.out, "CSV output path (default stdout)");
  cmd->add_option("--summary-out", a.summary_out, "Train: scaling summary CSV path");
}

dtrain::BenchSpec make_spec(dtrain::Scenario scenario, const BenchArgs& a) {
  dtrain::BenchSpec s;
  s.scenario = scenario;
  if (!a.ranks.empty()) s.n_ranks = a.ranks;
  else if (scenario == dtrain::Scenario::train) s.n_ranks = {2, 4, 8};
  s.colors = a.colors;
  s.arity = a.arity;
  if (!a.algos.empty()) {
    s.algorithms.clear();
    for (const auto& n : a.algos) s.algorithms.push_back(dtrain::parse_algorithm(n));
  }
  s.backend = dtrain::parse_backend(a.backend);
  for (const auto& p : a.payloads) s.payload_bytes.push_back(dtrain::parse_size(p));
  s.repetitions = a.reps;
  s.seed = a.seed;
  s.sim.latency_s = a.latency_us * 1e-6;
  s.sim.bandwidth_Bps = a.bandwidth_gbps * 1e9 / 8.0;
  s.sim.pods = a.pods;
  if (!a.groups.empty()) s.groups = a.groups;
  s.segments = a.segments;
  if (!a.shard_bytes.empty()) s.shard_bytes = dtrain::parse_size(a.shard_bytes);
  if (!a.corpus_bytes.empty()) s.corpus_bytes = dtrain::parse_size(a.corpus_bytes);
  if (!a.record_bytes.empty()) s.record_bytes = dtrain::parse_size(a.record_bytes);
  s.segment_elems = a.segment_elems;
  return s;
}

int run_bench_cmd(dtrain::Scenario scenario, const BenchArgs& a) {
  dtrain::BenchSpec spec;
  try {
    spec = make_spec(scenario, a);
    spec.validate();
  } catch (const dtrain::Error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  }
  const auto report = dtrain::run_bench(spec);
  if (a.out.empty()) {
    std::cout << dtrain::to_csv(report.rows);
  } else {
    dtrain::emit_csv(report.rows, a.out);
  }
  if (!report.train.empty()) {
    std::string text = "algorithm,n_ranks,epoch_time_s,comm_share,scaling_efficiency\n";
    char line[256];
    for (const auto& t : report.train) {
      std::snprintf(line, sizeof line, "%s,%d,%.9g,%.6f,%.6f\n", t.algorithm.c_str(), t.n_ranks, t.epoch_time_s,
                    t.comm_share, t.scaling_efficiency);
      text += line;
    }
    if (a.summary_out.empty()) {
      std::cerr << text;
    } else {
      std::FILE* f = std::fopen(a.summary_out.c_str(), "w");
      if (!f) dtrain::fail(dtrain::Errc::io_error, "cannot open " + a.summary_out);
      std::fputs(text.c_str(), f);
      std::fclose(f);
    }
  }
  for (const auto& f : report.failures) std::cerr << "skipped: " << f << "\n";
  return report.failures.empty() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed training communication stack: collectives, dataset store and benchmarks"};
  app.footer(kThroughputNote);
  app.require_subcommand(1);

  auto* bench = app.add_subcommand("bench", "Run a benchmark and emit CSV");
  bench->require_subcommand(1);
  bench->footer(kThroughputNote);
  BenchArgs ar_args, sh_args, tr_args;
  auto* b_ar = bench->add_subcommand("allreduce", "Allreduce throughput sweep");
  add_bench_flags(b_ar, ar_args);
  auto* b_sh = bench->add_subcommand("shuffle", "Shuffle time over rank and group sweeps");
  add_bench_flags(b_sh, sh_args);
  auto* b_tr = bench->add_subcommand("train", "Epoch time per allreduce scheme");
  add_bench_flags(b_tr, tr_args);

  auto* topo = app.add_subcommand("topo", "Topology tools");
  topo->require_subcommand(1);
  auto* t_dump = topo->add_subcommand("dump", "Print the multicolor tree set as JSON");
  int t_ranks = 8, t_colors = dtrain::kDefaultColors, t_arity = dtrain::kDefaultArity;
  std::string t_out;
  t_dump->add_option("--ranks", t_ranks)->capture_default_str();
  t_dump->add_option("--colors", t_colors)->capture_default_str();
  t_dump->add_option("--arity", t_arity)->capture_default_str();
  t_dump->add_option("--out", t_out, "Output path (default stdout)");

  auto* dimd = app.add_subcommand("dimd", "Dataset store tools");
  dimd->require_subcommand(1);
  std::string blob_path, index_path;
  auto* d_build = dimd->add_subcommand("build", "Write a synthetic blob and index");
  std::size_t d_records = 1000, d_min = 16, d_max = 256;
  std::uint32_t d_classes = 10;
  std::uint64_t d_seed = 1;
  d_build->add_option("--blob", blob_path)->required();
  d_build->add_option("--index", index_path)->required();
  d_build->add_option("--records", d_records)->capture_default_str();
  d_build->add_option("--min-len", d_min)->capture_default_str();
  d_build->add_option("--max-len", d_max)->capture_default_str();
  d_build->add_option("--classes", d_classes)->capture_default_str();
  d_build->add_option("--seed", d_seed)->capture_default_str();

  auto* d_verify = dimd->add_subcommand("verify", "Check that an index matches its blob");
  d_verify->add_option("--blob", blob_path)->required();
  d_verify->add_option("--index", index_path)->required();

  auto* d_shuffle = dimd->add_subcommand("shuffle", "Load partitions, shuffle within groups, check conservation");
  int s_ranks = 4, s_groups = 1;
  std::uint64_t s_segments = 0, s_seed = 1;
  std::string s_backend = "threads";
  d_shuffle->add_option("--blob", blob_path)->required();
  d_shuffle->add_option("--index", index_path)->required();
  d_shuffle->add_option("--ranks", s_ranks)->capture_default_str();
  d_shuffle->add_option("--groups", s_groups)->capture_default_str();
  d_shuffle->add_option("--segments", s_segments)->capture_default_str();
  d_shuffle->add_option("--seed", s_seed)->capture_default_str();
  d_shuffle->add_option("--backend", s_backend)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (b_ar->parsed()) return run_bench_cmd(dtrain::Scenario::allreduce, ar_args);
    if (b_sh->parsed()) return run_bench_cmd(dtrain::Scenario::shuffle, sh_args);
    if (b_tr->parsed()) return run_bench_cmd(dtrain::Scenario::train, tr_args);

    if (t_dump->parsed()) {
      const auto ts = dtrain::build_multicolor_trees(t_ranks, t_colors, t_arity);
      if (t_out.empty()) {
        std::cout << dtrain::to_json(ts).dump(2) << "\n";
      } else {
        dtrain::dump_topology(ts, t_out);
      }
      return 0;
    }

    if (d_build->parsed()) {
      const auto records = dtrain::make_random_records(d_records, d_min, d_max, d_classes, d_seed);
      dtrain::write_blob_files(records, blob_path, index_path);
      std::cout << "wrote " << records.size() << " records\n";
      return 0;
    }

    if (d_verify->parsed()) {
      const auto blob = dtrain::read_file(blob_path);
      const auto index = dtrain::parse_index(dtrain::read_file(index_path), blob.size());
      std::uint64_t covered = 0;
      for (const auto& e : index) covered += e.length;
      std::cout << index.size() << " records, " << covered << " of " << blob.size() << " blob bytes indexed\n";
      return 0;
    }

    if (d_shuffle->parsed()) {
      if (s_groups < 1 || s_ranks % s_groups != 0) {
        dtrain::fail(dtrain::Errc::group_mismatch, "--groups must divide --ranks");
      }
      const int S = s_ranks / s_groups;
      dtrain::RunOptions ro;
      ro.backend = dtrain::parse_backend(s_backend);
      auto res = dtrain::run_ranks(s_ranks, ro, [&](dtrain::Endpoint& ep) {
        auto store = dtrain::load_partition(blob_path, index_path, ep.rank(), s_ranks, S);
        const auto before = store.size();
        auto out = dtrain::shuffle_all(ep, store, s_segments, s_seed);
        return std::make_pair(before, out.size());
      });
      for (int r = 0; r < s_ranks; ++r) {
        const auto& [b, a] = res.results[static_cast<std::size_t>(r)];
        std::cout << "rank " << r << " group " << r / S << ": " << b << " -> " << a << " records\n";
      }
      return 0;
    }
  } catch (const dtrain::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
