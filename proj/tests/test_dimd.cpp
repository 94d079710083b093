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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "dtrain/collectives.hpp"
#include "dtrain/dimd.hpp"
#include "dtrain/rng.hpp"
#include "dtrain/transport.hpp"

namespace dtrain {
namespace {

namespace fs = std::filesystem;

Record rec(std::initializer_list<std::uint8_t> bytes, std::uint32_t label) { return Record{Bytes(bytes), label}; }

std::vector<Record> sorted(std::vector<Record> v) {
  std::sort(v.begin(), v.end());
  return v;
}

fs::path temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("dtrain_test_" + name + "_" + std::to_string(::getpid()));
  fs::create_directories(p);
  return p;
}

RunOptions sim() {
  RunOptions o;
  o.backend = Backend::sim;
  return o;
}

TEST(Blob, SingleRecordIndex) {
  const std::vector<Record> rs = {Record{Bytes(5, 9), 3}};
  const auto files = build_blob(rs);
  EXPECT_EQ(files.blob, Bytes(5, 9));
  const auto idx = parse_index(files.index, files.blob.size());
  ASSERT_EQ(idx.size(), 1u);
  EXPECT_EQ(idx[0], (IndexEntry{0, 5, 3}));
}

TEST(Blob, OffsetsArePrefixSums) {
  const std::vector<Record> rs = {Record{Bytes(2), 0}, Record{Bytes(4), 1}, Record{Bytes(1), 2}};
  const auto idx = parse_index(build_blob(rs).index);
  ASSERT_EQ(idx.size(), 3u);
  EXPECT_EQ(idx[0].offset, 0u);
  EXPECT_EQ(idx[1].offset, 2u);
  EXPECT_EQ(idx[2].offset, 6u);
}

TEST(Blob, IndexLayoutIsLittleEndian) {
  const std::vector<Record> rs = {Record{Bytes(0x0102, 1), 0x0a0b0c0d}};
  const Bytes idx = build_blob(rs).index;
  ASSERT_EQ(idx.size(), kIndexHeaderBytes + kIndexEntryBytes);
  const Bytes want = {'D', 'I', 'M', 'D', 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0,
                      0,   0,   0,   0,   0, 0, 0, 0, 2, 1, 0, 0, 0x0d, 0x0c, 0x0b, 0x0a};
  EXPECT_EQ(idx, want);
}

TEST(Blob, FileRoundTripOfRandomRecords) {
  const auto rs = make_random_records(1000, 1, 300, 17, 5);
  const auto dir = temp_dir("roundtrip");
  write_blob_files(rs, (dir / "b").string(), (dir / "i").string());
  const auto store = load_partition((dir / "b").string(), (dir / "i").string(), 0, 1, 1);
  EXPECT_EQ(store.records(), rs);
  fs::remove_all(dir);
}

TEST(Blob, EmptyRecordRejected) {
  const std::vector<Record> rs = {Record{Bytes{}, 0}};
  EXPECT_THROW(build_blob(rs), Error);
}

TEST(Index, MalformedInputsRejected) {
  const std::vector<Record> rs = {rec({1, 2}, 0), rec({3}, 1)};
  const Bytes good = build_blob(rs).index;
  auto expect_format_error = [](const Bytes& b, std::uint64_t blob = UINT64_MAX) {
    try {
      parse_index(b, blob);
      ADD_FAILURE() << "accepted";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::format_error);
    }
  };
  Bytes bad_magic = good;
  bad_magic[0] = 'X';
  expect_format_error(bad_magic);
  Bytes bad_version = good;
  bad_version[4] = 2;
  expect_format_error(bad_version);
  expect_format_error(Bytes(good.begin(), good.end() - 1));
  Bytes trailing = good;
  trailing.push_back(0);
  expect_format_error(trailing);
  expect_format_error(good, 2);
  const std::vector<IndexEntry> overlap = {{0, 4, 0}, {2, 4, 0}};
  expect_format_error(encode_index(overlap));
  const std::vector<IndexEntry> zero = {{0, 0, 0}};
  expect_format_error(encode_index(zero));
  EXPECT_EQ(parse_index(good, 3).size(), 2u);
}

TEST(Partition, ModRule) {
  std::vector<Record> rs;
  for (std::uint8_t i = 0; i < 6; ++i) rs.push_back(rec({i}, i));
  const auto s = partition_records(rs, 0, 2, 2);
  EXPECT_EQ(s.records(), (std::vector<Record>{rs[0], rs[2], rs[4]}));
  EXPECT_EQ(s.group_id, 0);
  EXPECT_EQ(s.rank_in_group, 0);
  const auto t = partition_records(rs, 3, 4, 2);
  EXPECT_EQ(t.group_id, 1);
  EXPECT_EQ(t.rank_in_group, 1);
  EXPECT_EQ(t.records(), (std::vector<Record>{rs[1], rs[3], rs[5]}));
}

TEST(Partition, GroupOfOneHoldsEverything) {
  const auto rs = make_random_records(50, 1, 10, 3, 1);
  EXPECT_EQ(partition_records(rs, 2, 4, 1).records(), rs);
}

TEST(Partition, UnionOfGroupIsDataset) {
  for (std::uint64_t t = 0; t < 20; ++t) {
    const auto rs = make_random_records(uniform_below(counter_hash(2, t), 200), 1, 20, 5, t);
    for (int S : {1, 2, 3, 4, 6}) {
      const int n = 12;
      for (int g = 0; g < n / S; ++g) {
        std::vector<Record> all;
        for (int r = g * S; r < (g + 1) * S; ++r) {
          auto part = partition_records(rs, r, n, S).records();
          all.insert(all.end(), part.begin(), part.end());
        }
        EXPECT_EQ(sorted(all), sorted(rs));
      }
    }
  }
}

TEST(Partition, GroupSizeMustDivideRanks) {
  const auto rs = make_random_records(5, 1, 3, 2, 1);
  const auto dir = temp_dir("mismatch");
  write_blob_files(rs, (dir / "b").string(), (dir / "i").string());
  try {
    load_partition((dir / "b").string(), (dir / "i").string(), 0, 6, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::group_mismatch);
  }
  fs::remove_all(dir);
}

TEST(Batch, SingleRecordRepeated) {
  const std::vector<Record> rs = {rec({7, 7}, 2)};
  const auto store = make_store(rs);
  const auto b = random_batch(store, {.batch_size = 4, .rng_seed = 3, .step = 0});
  EXPECT_EQ(b, std::vector<Record>(4, rs[0]));
}

TEST(Batch, DeterministicPerSeedAndStep) {
  const auto store = make_store(make_random_records(100, 1, 5, 3, 2));
  const BatchRequest r{.batch_size = 32, .rng_seed = 11, .step = 5};
  EXPECT_EQ(random_batch_indices(store, r), random_batch_indices(store, r));
  EXPECT_NE(random_batch_indices(store, r), random_batch_indices(store, {.batch_size = 32, .rng_seed = 11, .step = 6}));
  EXPECT_NE(random_batch_indices(store, r), random_batch_indices(store, {.batch_size = 32, .rng_seed = 12, .step = 5}));
}

TEST(Batch, UniformFrequencies) {
  const auto store = make_store(make_random_records(10, 1, 4, 2, 3));
  std::vector<int> counts(10, 0);
  for (std::uint64_t step = 0; step < 100; ++step) {
    for (auto i : random_batch_indices(store, {.batch_size = 1000, .rng_seed = 99, .step = step})) ++counts[i];
  }
  const double sigma = std::sqrt(1e5 * 0.1 * 0.9);
  double chi2 = 0.0;
  for (int c : counts) {
    EXPECT_LE(std::fabs(c - 1e4), 3 * sigma);
    chi2 += (c - 1e4) * (c - 1e4) / 1e4;
  }
  EXPECT_LT(chi2, 27.88);  // 99.9th percentile, 9 degrees of freedom
}

TEST(Batch, EmptyShardRejected) {
  try {
    random_batch_indices(ShardStore{}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_shard);
  }
}

std::vector<ShardStore> shuffle_world(const std::vector<Record>& rs, int n, int S, std::uint64_t m, std::uint64_t seed,
                                      Backend b = Backend::sim) {
  RunOptions o;
  o.backend = b;
  auto res = run_ranks(n, o, [&](Endpoint& ep) {
    return shuffle_all(ep, partition_records(rs, ep.rank(), n, S), m, seed);
  });
  return res.results;
}

TEST(Shuffle, GroupOfOneIsLocalPermutation) {
  const auto rs = make_random_records(200, 1, 30, 4, 6);
  const auto out = shuffle_world(rs, 1, 1, 0, 42);
  EXPECT_EQ(sorted(out[0].records()), sorted(rs));
  EXPECT_NE(out[0].records(), rs);
  EXPECT_EQ(parse_index(encode_index(out[0].index), out[0].blob.size()), out[0].index);
}

TEST(Shuffle, SeedSendingEverythingToRankZero) {
  // Search for a seed whose four draws all pick destination 0.
  std::uint64_t seed = 0;
  for (;; ++seed) {
    bool all_zero = true;
    for (int r = 0; r < 2; ++r) {
      for (std::size_t i = 0; i < 2; ++i) all_zero = all_zero && shuffle_destination(seed, 0, r, i, 2) == 0;
    }
    if (all_zero) break;
  }
  std::vector<Record> rs;
  for (std::uint8_t i = 0; i < 4; ++i) rs.push_back(rec({i, i}, i));
  const auto out = shuffle_world(rs, 2, 2, 1, seed);
  EXPECT_EQ(out[0].size(), 4u);
  EXPECT_EQ(out[1].size(), 0u);
  EXPECT_EQ(sorted(out[0].records()), sorted(rs));
}

TEST(Shuffle, FourRanksConserveAndBalance) {
  const auto rs = make_random_records(1000, 1, 64, 10, 7);
  for (Backend b : {Backend::sim, Backend::threads}) {
    const auto out = shuffle_world(rs, 4, 4, 3, 1234, b);
    std::vector<Record> all;
    const double sigma = std::sqrt(1000 * 0.25 * 0.75);
    for (const auto& s : out) {
      EXPECT_LE(std::fabs(static_cast<double>(s.size()) - 250.0), 3 * sigma);
      auto part = s.records();
      all.insert(all.end(), part.begin(), part.end());
    }
    EXPECT_EQ(sorted(all), sorted(rs));
  }
}

TEST(Shuffle, SameSeedSameResult) {
  const auto rs = make_random_records(300, 1, 40, 3, 8);
  const auto a = shuffle_world(rs, 3, 3, 2, 77);
  const auto b = shuffle_world(rs, 3, 3, 2, 77, Backend::threads);
  for (int r = 0; r < 3; ++r) {
    EXPECT_EQ(a[r].blob, b[r].blob);
    EXPECT_EQ(a[r].index, b[r].index);
  }
}

TEST(Shuffle, PairGroupsExchangeOnlyWithinPair) {
  const auto rs = make_random_records(640, 1, 16, 5, 9);
  const int n = 32;
  const int S = 2;
  const auto out = shuffle_world(rs, n, S, 1, 5);
  for (int g = 0; g < n / S; ++g) {
    std::vector<Record> before;
    std::vector<Record> after;
    for (int r = g * S; r < (g + 1) * S; ++r) {
      auto in = partition_records(rs, r, n, S).records();
      before.insert(before.end(), in.begin(), in.end());
      auto o = out[r].records();
      after.insert(after.end(), o.begin(), o.end());
      EXPECT_EQ(out[r].group_id, g);
    }
    EXPECT_EQ(sorted(after), sorted(before)) << "group " << g;
  }
}

TEST(Shuffle, DestinationsBinomialOverSeeds) {
  // 200 seeds x 1000 records, S = 4: per-seed counts of destination 0 and
  // their pooled mean both sit within 3 sigma of Binomial(1000, 1/4).
  const double sigma = std::sqrt(1000 * 0.25 * 0.75);
  double total = 0.0;
  int outside = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    int c = 0;
    for (std::size_t i = 0; i < 1000; ++i) c += shuffle_destination(seed, 0, 1, i, 4) == 0 ? 1 : 0;
    outside += std::fabs(c - 250.0) > 3 * sigma ? 1 : 0;
    total += c;
  }
  EXPECT_LE(outside, 3);
  EXPECT_LE(std::fabs(total / 200.0 - 250.0), 3 * sigma / std::sqrt(200.0));
}

TEST(Shuffle, MismatchedArgumentsRejected) {
  const auto rs = make_random_records(20, 1, 5, 2, 10);
  EXPECT_THROW(run_ranks_void(2, sim(), [&](Endpoint& ep) {
                 shuffle_all(ep, partition_records(rs, ep.rank(), 2, 2), 1, 5 + ep.rank());
               }),
               Error);
}

TEST(Plan, LargeShardWithSparseOffsets) {
  // 40 records of 150 MiB: a 6 GiB shard described by its index alone.
  std::vector<IndexEntry> idx;
  std::uint64_t off = 0;
  for (std::uint32_t i = 0; i < 40; ++i) {
    idx.push_back({off, 150u << 20, i});
    off += 150u << 20;
  }
  ASSERT_GT(off, std::uint64_t{4} << 30);
  for (int S : {1, 2, 4}) {
    const auto plan = plan_shuffle(idx, S, 0, 0, 3, 1);
    EXPECT_LT(plan.max_slice_bytes, kMaxSliceBytes);
    std::uint64_t framed = 0;
    for (std::uint64_t t = 0; t < plan.rounds; ++t) {
      const auto [b, e] = segment_bounds(idx.size(), plan.rounds, t);
      EXPECT_LE(b, e);
      for (auto bytes : round_slice_bytes(idx, plan.destination, S, plan.rounds, t)) {
        EXPECT_LT(bytes, kMaxSliceBytes);
        framed += bytes;
      }
    }
    EXPECT_EQ(framed, off + 40 * kFrameHeaderBytes);
    // Any power-of-two refinement keeps the bound.
    for (auto bytes : round_slice_bytes(idx, plan.destination, S, plan.rounds * 4, 3)) EXPECT_LT(bytes, kMaxSliceBytes);
  }
}

TEST(Plan, DefaultSegments) {
  EXPECT_EQ(default_segments(0), 1u);
  EXPECT_EQ(default_segments(std::uint64_t{1} << 30), 1u);
  EXPECT_EQ(default_segments((std::uint64_t{1} << 30) + 1), 2u);
  EXPECT_EQ(default_segments(std::uint64_t{5} << 30), 5u);
}

TEST(Plan, SegmentBoundsCoverAndNest) {
  for (std::size_t n : {0ul, 1ul, 10ul, 1001ul}) {
    for (std::uint64_t rounds : {1u, 2u, 8u}) {
      std::size_t next = 0;
      for (std::uint64_t t = 0; t < rounds; ++t) {
        const auto [b, e] = segment_bounds(n, rounds, t);
        EXPECT_EQ(b, next);
        next = e;
        if (rounds > 1 && t % 2 == 0) {
          EXPECT_EQ(b, segment_bounds(n, rounds / 2, t / 2).first);
        }
      }
      EXPECT_EQ(next, n);
    }
  }
}

TEST(Plan, RecordTooLargeToFrame) {
  const std::vector<IndexEntry> idx = {{0, static_cast<std::uint32_t>(kMaxSliceBytes - 4), 0}};
  try {
    plan_shuffle(idx, 2, 0, 0, 1, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::segment_overflow);
  }
}

}  // namespace
}  // namespace dtrain
