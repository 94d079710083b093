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

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dtrain/bench.hpp"
#include "dtrain/dimd.hpp"
#include "dtrain/rng.hpp"

namespace dtrain {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

const fs::path kGolden = DTRAIN_GOLDEN_DIR;

std::vector<BenchRow> golden_rows() {
  return {
      {"allreduce", "multicolor", 16, 67108864, 0.011240129920190486, 11.194632170040574, "sim"},
      {"shuffle", "groups=4", 32, 2097152, 0.5, 0.004194304, "threads"},
      {"train", "ring", 8, 4194304, 1e-300, 123456789.0, "tcp"},
  };
}

std::vector<Record> golden_records() {
  Bytes ramp(300);
  for (int i = 0; i < 300; ++i) ramp[i] = static_cast<std::uint8_t>(i % 256);
  return {Record{Bytes{'a', 'b', 'c'}, 1}, Record{Bytes{'d', 'e'}, 7}, Record{ramp, 65536}};
}

TEST(Golden, CsvSchema) {
  EXPECT_EQ(to_csv(golden_rows()), slurp(kGolden / "bench.csv"));
  EXPECT_EQ(parse_csv(slurp(kGolden / "bench.csv")), golden_rows());
}

TEST(Golden, DimdFilesByteExact) {
  const auto files = build_blob(golden_records());
  const std::string blob = slurp(kGolden / "small.blob");
  const std::string index = slurp(kGolden / "small.idx");
  EXPECT_EQ(std::string(files.blob.begin(), files.blob.end()), blob);
  EXPECT_EQ(std::string(files.index.begin(), files.index.end()), index);
  const auto store =
      load_partition((kGolden / "small.blob").string(), (kGolden / "small.idx").string(), 0, 1, 1);
  EXPECT_EQ(store.records(), golden_records());
  EXPECT_EQ(encode_index(store.index), files.index);
}

TEST(Csv, EmptyAndSingleRow) {
  EXPECT_EQ(to_csv({}), std::string(kCsvHeader) + "\n");
  const std::string one = to_csv({golden_rows()[0]});
  EXPECT_EQ(std::count(one.begin(), one.end(), '\n'), 2);
}

TEST(Csv, RoundTripOfArbitraryDoubles) {
  std::vector<BenchRow> rows;
  for (std::uint64_t i = 0; i < 200; ++i) {
    const double t = std::ldexp(static_cast<double>(counter_hash(1, i) >> 11), -static_cast<int>(i % 90));
    rows.push_back({"allreduce", "ring", static_cast<int>(i), counter_hash(2, i), t, 1.0 / (t + 1.0), "sim"});
  }
  EXPECT_EQ(parse_csv(to_csv(rows)), rows);
}

TEST(Csv, MalformedInputRejected) {
  for (const std::string bad : {std::string("nope\n"), std::string(kCsvHeader) + "\na,b,1,2,3\n",
                                std::string(kCsvHeader) + "\na,b,x,2,3,4,c\n"}) {
    try {
      parse_csv(bad);
      ADD_FAILURE() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::format_error);
    }
  }
}

TEST(Csv, EmitToUnwritablePathFails) {
  try {
    emit_csv({}, "/nonexistent-dir/x.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::io_error);
  }
}

TEST(Csv, TopologyDumpParsesBack) {
  const auto path = fs::temp_directory_path() / "dtrain_topo_test.json";
  const auto ts = build_multicolor_trees(8, 4, 4);
  dump_topology(ts, path.string());
  EXPECT_EQ(tree_set_from_json(nlohmann::json::parse(slurp(path))).trees[1].interior, (std::vector<RankId>{2, 3}));
  fs::remove(path);
}

TEST(Sizes, Suffixes) {
  EXPECT_EQ(parse_size("4096"), 4096u);
  EXPECT_EQ(parse_size("4K"), 4096u);
  EXPECT_EQ(parse_size("64M"), 64u << 20);
  EXPECT_EQ(parse_size("64MiB"), 64u << 20);
  EXPECT_EQ(parse_size("2G"), std::uint64_t{2} << 30);
  EXPECT_EQ(parse_size("2GB"), std::uint64_t{2} << 30);
  EXPECT_THROW(parse_size("K"), Error);
  EXPECT_THROW(parse_size("4T"), Error);
  EXPECT_THROW(parse_size("-4"), Error);
}

TEST(Metrics, BusBandwidthConvention) {
  EXPECT_DOUBLE_EQ(bus_bandwidth_GBps(1000000000, 4, 1.5), 2.0 * 1e9 * 3.0 / 4.0 / 1.5 / 1e9);
  EXPECT_EQ(bus_bandwidth_GBps(0, 4, 1.0), 0.0);
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
}

TEST(BenchConfig, Validation) {
  BenchSpec s;
  s.repetitions = 2;
  EXPECT_THROW(s.validate(), Error);
  s = BenchSpec{};
  s.n_ranks = {};
  EXPECT_THROW(s.validate(), Error);
  s = BenchSpec{};
  s.algorithms = {};
  EXPECT_THROW(s.validate(), Error);
}

BenchSpec small_allreduce() {
  BenchSpec s;
  s.n_ranks = {4};
  s.payload_bytes = {4096, 1 << 20};
  return s;
}

TEST(BenchAllreduce, SimOutputIsReproducible) {
  const auto a = run_bench(small_allreduce());
  const auto b = run_bench(small_allreduce());
  EXPECT_TRUE(a.failures.empty());
  ASSERT_EQ(a.rows.size(), 6u);
  EXPECT_EQ(to_csv(a.rows), to_csv(b.rows));
  for (const auto& r : a.rows) {
    EXPECT_GT(r.median_time_s, 0.0);
    EXPECT_DOUBLE_EQ(r.throughput_GBps, bus_bandwidth_GBps(r.payload_bytes, r.n_ranks, r.median_time_s));
  }
}

TEST(BenchAllreduce, EmptyPayloadRow) {
  BenchSpec s = small_allreduce();
  s.payload_bytes = {0};
  const auto rep = run_bench(s);
  ASSERT_EQ(rep.rows.size(), 3u);
  for (const auto& r : rep.rows) {
    EXPECT_EQ(r.throughput_GBps, 0.0);
    EXPECT_GE(r.median_time_s, 0.0);
    EXPECT_LT(r.median_time_s, 1e-3);
  }
}

TEST(BenchAllreduce, OverBudgetRowsReportedAsFailures) {
  BenchSpec s = small_allreduce();
  s.payload_bytes = {1 << 20};
  s.memory_budget_bytes = 1 << 20;
  const auto rep = run_bench(s);
  EXPECT_TRUE(rep.rows.empty());
  EXPECT_EQ(rep.failures.size(), 3u);
}

TEST(BenchAllreduce, ThreadsBackendRowsPresent) {
  BenchSpec s = small_allreduce();
  s.backend = Backend::threads;
  const auto rep = run_bench(s);
  EXPECT_TRUE(rep.failures.empty());
  EXPECT_EQ(rep.rows.size(), 6u);
  for (const auto& r : rep.rows) EXPECT_EQ(r.backend, "threads");
}

TEST(BenchShuffle, ShardHalvesAsRanksDouble) {
  BenchSpec s;
  s.scenario = Scenario::shuffle;
  s.n_ranks = {8, 16};
  s.groups = {1};
  s.corpus_bytes = 8 << 20;
  s.record_bytes = 16 << 10;
  // One group spanning every rank: fully partitioned.
  s.groups = {1};
  const auto rep = run_bench(s);
  ASSERT_TRUE(rep.failures.empty()) << rep.failures.front();
  ASSERT_EQ(rep.rows.size(), 2u);
  EXPECT_EQ(rep.rows[0].payload_bytes, 2 * rep.rows[1].payload_bytes);
  EXPECT_EQ(rep.rows[0].payload_bytes, (8u << 20) / 8);
}

TEST(BenchShuffle, SingleRankIsLocalOnly) {
  BenchSpec s;
  s.scenario = Scenario::shuffle;
  s.n_ranks = {1};
  s.corpus_bytes = 1 << 20;
  const auto rep = run_bench(s);
  ASSERT_EQ(rep.rows.size(), 1u);
  // Pack, unpack and permute are charged at memory speed; nothing crosses
  // the network.
  EXPECT_GT(rep.rows[0].median_time_s, 0.0);
  EXPECT_LT(rep.rows[0].median_time_s, 4.0 * (1 << 20) / s.sim.memory_Bps);
}

TEST(BenchShuffle, GroupsMustDivideRanks) {
  BenchSpec s;
  s.scenario = Scenario::shuffle;
  s.n_ranks = {6};
  s.groups = {4};
  const auto rep = run_bench(s);
  EXPECT_TRUE(rep.rows.empty());
  EXPECT_EQ(rep.failures.size(), 1u);
}

BenchSpec comm_heavy_train() {
  BenchSpec s;
  s.scenario = Scenario::train;
  s.n_ranks = {2, 4, 8};
  s.payload_bytes = {4 << 20};
  s.corpus_samples = 1024;
  return s;
}

TEST(BenchTrain, SingleRankSameTimeForEveryAlgorithm) {
  BenchSpec s = comm_heavy_train();
  s.n_ranks = {1};
  const auto rep = run_bench(s);
  ASSERT_EQ(rep.rows.size(), 3u);
  EXPECT_EQ(rep.rows[0].median_time_s, rep.rows[1].median_time_s);
  EXPECT_EQ(rep.rows[1].median_time_s, rep.rows[2].median_time_s);
}

TEST(BenchTrain, MulticolorFastestAndBestScaling) {
  const auto rep = run_bench(comm_heavy_train());
  ASSERT_TRUE(rep.failures.empty());
  auto find = [&](const std::string& a, int n) {
    for (const auto& t : rep.train) {
      if (t.algorithm == a && t.n_ranks == n) return t;
    }
    ADD_FAILURE() << a << " " << n;
    return TrainSummary{};
  };
  for (int n : {4, 8}) {
    EXPECT_LT(find("multicolor", n).epoch_time_s, find("ring", n).epoch_time_s) << n;
    EXPECT_LT(find("ring", n).epoch_time_s, find("reduce_bcast", n).epoch_time_s) << n;
  }
  EXPECT_GT(find("multicolor", 8).scaling_efficiency, find("ring", 8).scaling_efficiency);
  EXPECT_GT(find("multicolor", 8).scaling_efficiency, find("reduce_bcast", 8).scaling_efficiency);
  EXPECT_EQ(find("ring", 2).scaling_efficiency, 1.0);
}

TEST(BenchTrain, MoreBandwidthLowersCommShare) {
  BenchSpec s = comm_heavy_train();
  s.n_ranks = {4};
  s.algorithms = {Algorithm::multicolor, Algorithm::ring, Algorithm::reduce_bcast};
  std::vector<std::vector<double>> shares;
  for (double bw : {6.25e9, 12.5e9, 25e9, 50e9}) {
    s.sim.bandwidth_Bps = bw;
    const auto rep = run_bench(s);
    ASSERT_EQ(rep.train.size(), 3u);
    std::vector<double> v;
    for (const auto& t : rep.train) v.push_back(t.comm_share);
    shares.push_back(v);
  }
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t i = 1; i < shares.size(); ++i) EXPECT_LT(shares[i][a], shares[i - 1][a]) << a << " " << i;
  }
}

}  // namespace
}  // namespace dtrain
