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

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dtrain/endpoint.hpp"

namespace dtrain {

struct Record {
  Bytes bytes;
  std::uint32_t label = 0;

  bool operator==(const Record&) const = default;
  auto operator<=>(const Record&) const = default;
};

struct IndexEntry {
  std::uint64_t offset = 0;
  std::uint32_t length = 0;
  std::uint32_t label = 0;

  bool operator==(const IndexEntry&) const = default;
};

/// One rank's resident partition: concatenated record bytes plus an index.
struct ShardStore {
  Bytes blob;
  std::vector<IndexEntry> index;
  int group_id = 0;
  int group_size = 1;
  int rank_in_group = 0;

  std::size_t size() const noexcept { return index.size(); }
  bool empty() const noexcept { return index.empty(); }
  std::span<const std::uint8_t> bytes(std::size_t i) const;
  Record record(std::size_t i) const;
  std::vector<Record> records() const;
};

inline constexpr std::uint32_t kIndexVersion = 1;
inline constexpr std::size_t kIndexHeaderBytes = 16;
inline constexpr std::size_t kIndexEntryBytes = 16;
/// Records, and shuffle slices, must stay below 2^31 bytes.
inline constexpr std::uint64_t kMaxRecordBytes = std::uint64_t{1} << 31;
/// Each shuffled record travels as (u32 length, u32 label, bytes).
inline constexpr std::uint64_t kFrameHeaderBytes = 8;

struct BlobFiles {
  Bytes blob;
  Bytes index;
};

/// Concatenates records and encodes the matching index file. Throws
/// Errc::record_too_large for a record of 2^31 bytes or more, and
/// Errc::invalid_config for an empty record.
BlobFiles build_blob(std::span<const Record> records);

/// Index file: "DIMD", u32 version, u64 count, then count x (u64 offset,
/// u32 length, u32 label); all little endian.
Bytes encode_index(std::span<const IndexEntry> index);
/// Throws Errc::format_error on a bad header, truncated or trailing bytes,
/// unsorted or overlapping entries, zero lengths, or (when blob_size is
/// given) entries past the end of the blob.
std::vector<IndexEntry> parse_index(std::span<const std::uint8_t> bytes, std::uint64_t blob_size = UINT64_MAX);

void write_file(const std::string& path, std::span<const std::uint8_t> bytes);
Bytes read_file(const std::string& path);
void write_blob_files(std::span<const Record> records, const std::string& blob_path, const std::string& index_path);

/// Ranks form consecutive groups of `group_size`; within a group, record i
/// belongs to rank_in_group == i mod group_size. Throws Errc::group_mismatch
/// unless group_size divides n_ranks.
ShardStore load_partition(const std::string& blob_path, const std::string& index_path, RankId rank, int n_ranks,
                          int group_size);
/// Same rule applied to an in-memory dataset.
ShardStore partition_records(std::span<const Record> records, RankId rank, int n_ranks, int group_size);
ShardStore make_store(std::span<const Record> records, int group_id = 0, int group_size = 1, int rank_in_group = 0);

struct BatchRequest {
  std::size_t batch_size = 1;
  std::uint64_t rng_seed = 0;
  std::uint64_t step = 0;
};

/// Record positions drawn uniformly with replacement; draw j of a step is a
/// pure function of (rng_seed, step, j). Throws Errc::empty_shard.
std::vector<std::size_t> random_batch_indices(const ShardStore& store, const BatchRequest& req);
std::vector<Record> random_batch(const ShardStore& store, const BatchRequest& req);

/// Destination (rank within the group) of local record `i` in a shuffle.
int shuffle_destination(std::uint64_t seed, int group_id, int rank_in_group, std::size_t i, int group_size);

/// Default segment count: one segment per started GiB of shard.
std::uint64_t default_segments(std::uint64_t shard_bytes);

struct ShufflePlan {
  std::vector<int> destination;
  /// Contiguous record segments, one alltoallv round each.
  std::uint64_t rounds = 1;
  std::uint64_t max_slice_bytes = 0;
};

/// Plans one rank's shuffle from its index alone. Starts from `m_segments`
/// rounds and doubles until every per-destination slice of every round is
/// below 2^31 bytes. Segment boundaries of a doubled plan refine the previous
/// ones, so any larger power-of-two multiple also honours the bound. Throws
/// Errc::segment_overflow when a single framed record cannot fit.
ShufflePlan plan_shuffle(std::span<const IndexEntry> index, int group_size, int rank_in_group, int group_id,
                         std::uint64_t seed, std::uint64_t m_segments);
/// Records [begin, end) forming round t of `rounds` over n records.
std::pair<std::size_t, std::size_t> segment_bounds(std::size_t n, std::uint64_t rounds, std::uint64_t t);
/// Framed bytes per destination for round t.
std::vector<std::uint64_t> round_slice_bytes(std::span<const IndexEntry> index, const std::vector<int>& destination,
                                             int group_size, std::uint64_t rounds, std::uint64_t t);

/// Communicator over the store's group.
Comm group_comm(Endpoint& ep, const ShardStore& store);

/// Collective over the store's group. Every record moves to a random rank of
/// the group in m_segments alltoallv rounds (0 picks default_segments of the
/// largest shard), then each rank permutes what it received and rebuilds its
/// index. All members must pass the same m_segments and seed.
ShardStore shuffle_all(Endpoint& ep, const ShardStore& store, std::uint64_t m_segments, std::uint64_t seed);
/// As shuffle_all over an explicit communicator whose size is the group size.
ShardStore shuffle_group(Comm& group, const ShardStore& store, std::uint64_t m_segments, std::uint64_t seed);

/// Records of random bytes with lengths in [min_len, max_len] and labels in
/// [0, classes).
std::vector<Record> make_random_records(std::size_t count, std::size_t min_len, std::size_t max_len,
                                        std::uint32_t classes, std::uint64_t seed);

}  // namespace dtrain
