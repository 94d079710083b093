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

#include "dtrain/dimd.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>

#include "dtrain/collectives.hpp"
#include "dtrain/error.hpp"
#include "dtrain/rng.hpp"

namespace dtrain {

namespace {

constexpr char kMagic[4] = {'D', 'I', 'M', 'D'};
constexpr std::uint64_t kGiB = std::uint64_t{1} << 30;

// Counter streams, so shuffle destinations, permutations and batches never
// share draws.
constexpr std::uint64_t kStreamDest = 0x6465737400000000ULL;
constexpr std::uint64_t kStreamPerm = 0x7065726d00000000ULL;

template <typename T>
void put_le(Bytes& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v = static_cast<T>(v | (static_cast<T>(p[i]) << (8 * i)));
  return v;
}

void check_group(int n_ranks, int group_size) {
  if (group_size < 1 || n_ranks < 1 || n_ranks % group_size != 0) {
    fail(Errc::group_mismatch,
         "group size " + std::to_string(group_size) + " does not divide " + std::to_string(n_ranks) + " ranks");
  }
}

}  // namespace

std::span<const std::uint8_t> ShardStore::bytes(std::size_t i) const {
  const auto& e = index.at(i);
  return std::span<const std::uint8_t>(blob).subspan(e.offset, e.length);
}

Record ShardStore::record(std::size_t i) const {
  const auto b = bytes(i);
  return Record{Bytes(b.begin(), b.end()), index[i].label};
}

std::vector<Record> ShardStore::records() const {
  std::vector<Record> out;
  out.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) out.push_back(record(i));
  return out;
}

BlobFiles build_blob(std::span<const Record> records) {
  BlobFiles f;
  std::vector<IndexEntry> index;
  index.reserve(records.size());
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto len = records[i].bytes.size();
    if (len == 0) fail(Errc::invalid_config, "record " + std::to_string(i) + " is empty");
    if (len >= kMaxRecordBytes) {
      fail(Errc::record_too_large, "record " + std::to_string(i) + " has " + std::to_string(len) + " bytes");
    }
    index.push_back(IndexEntry{total, static_cast<std::uint32_t>(len), records[i].label});
    total += len;
  }
  f.blob.reserve(total);
  for (const auto& r : records) f.blob.insert(f.blob.end(), r.bytes.begin(), r.bytes.end());
  f.index = encode_index(index);
  return f;
}

Bytes encode_index(std::span<const IndexEntry> index) {
  Bytes out;
  out.reserve(kIndexHeaderBytes + kIndexEntryBytes * index.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kIndexVersion);
  put_le<std::uint64_t>(out, index.size());
  for (const auto& e : index) {
    put_le<std::uint64_t>(out, e.offset);
    put_le<std::uint32_t>(out, e.length);
    put_le<std::uint32_t>(out, e.label);
  }
  return out;
}

std::vector<IndexEntry> parse_index(std::span<const std::uint8_t> bytes, std::uint64_t blob_size) {
  if (bytes.size() < kIndexHeaderBytes) fail(Errc::format_error, "index shorter than its header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) fail(Errc::format_error, "bad index magic");
  const auto version = get_le<std::uint32_t>(bytes.data() + 4);
  if (version != kIndexVersion) fail(Errc::format_error, "unsupported index version " + std::to_string(version));
  const auto count = get_le<std::uint64_t>(bytes.data() + 8);
  const std::uint64_t body = bytes.size() - kIndexHeaderBytes;
  if (body % kIndexEntryBytes != 0 || body / kIndexEntryBytes != count) {
    fail(Errc::format_error, "index declares " + std::to_string(count) + " entries but holds " +
                                 std::to_string(body) + " bytes of entries");
  }
  std::vector<IndexEntry> out;
  out.reserve(count);
  std::uint64_t prev_end = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto* p = bytes.data() + kIndexHeaderBytes + kIndexEntryBytes * i;
    IndexEntry e{get_le<std::uint64_t>(p), get_le<std::uint32_t>(p + 8), get_le<std::uint32_t>(p + 12)};
    if (e.length == 0) fail(Errc::format_error, "entry " + std::to_string(i) + " has zero length");
    if (e.offset < prev_end) fail(Errc::format_error, "entry " + std::to_string(i) + " overlaps or is out of order");
    if (e.offset + e.length > blob_size) {
      fail(Errc::format_error, "entry " + std::to_string(i) + " runs past the end of the blob");
    }
    prev_end = e.offset + e.length;
    out.push_back(e);
  }
  return out;
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(Errc::io_error, "cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(Errc::io_error, "write to " + path + " failed");
}

Bytes read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) fail(Errc::io_error, "cannot open " + path);
  const auto size = f.tellg();
  if (size < 0) fail(Errc::io_error, "cannot size " + path);
  Bytes out(static_cast<std::size_t>(size));
  f.seekg(0);
  f.read(reinterpret_cast<char*>(out.data()), size);
  if (!f) fail(Errc::io_error, "read of " + path + " failed");
  return out;
}

void write_blob_files(std::span<const Record> records, const std::string& blob_path, const std::string& index_path) {
  const auto files = build_blob(records);
  write_file(blob_path, files.blob);
  write_file(index_path, files.index);
}

namespace {

ShardStore select_partition(std::span<const std::uint8_t> blob, std::span<const IndexEntry> index, RankId rank,
                            int n_ranks, int group_size) {
  check_group(n_ranks, group_size);
  if (rank < 0 || rank >= n_ranks) fail(Errc::invalid_config, "rank out of range");
  ShardStore s;
  s.group_size = group_size;
  s.group_id = rank / group_size;
  s.rank_in_group = rank % group_size;
  std::uint64_t total = 0;
  for (std::size_t i = static_cast<std::size_t>(s.rank_in_group); i < index.size(); i += static_cast<std::size_t>(group_size)) {
    total += index[i].length;
  }
  s.blob.reserve(total);
  for (std::size_t i = static_cast<std::size_t>(s.rank_in_group); i < index.size(); i += static_cast<std::size_t>(group_size)) {
    const auto& e = index[i];
    s.index.push_back(IndexEntry{s.blob.size(), e.length, e.label});
    const auto b = blob.subspan(e.offset, e.length);
    s.blob.insert(s.blob.end(), b.begin(), b.end());
  }
  return s;
}

}  // namespace

ShardStore load_partition(const std::string& blob_path, const std::string& index_path, RankId rank, int n_ranks,
                          int group_size) {
  check_group(n_ranks, group_size);
  const Bytes blob = read_file(blob_path);
  const auto index = parse_index(read_file(index_path), blob.size());
  return select_partition(blob, index, rank, n_ranks, group_size);
}

ShardStore partition_records(std::span<const Record> records, RankId rank, int n_ranks, int group_size) {
  check_group(n_ranks, group_size);
  ShardStore s;
  s.group_size = group_size;
  s.group_id = rank / group_size;
  s.rank_in_group = rank % group_size;
  for (std::size_t i = static_cast<std::size_t>(s.rank_in_group); i < records.size(); i += static_cast<std::size_t>(group_size)) {
    const auto& r = records[i];
    s.index.push_back(IndexEntry{s.blob.size(), static_cast<std::uint32_t>(r.bytes.size()), r.label});
    s.blob.insert(s.blob.end(), r.bytes.begin(), r.bytes.end());
  }
  return s;
}

ShardStore make_store(std::span<const Record> records, int group_id, int group_size, int rank_in_group) {
  if (group_size < 1 || rank_in_group < 0 || rank_in_group >= group_size) {
    fail(Errc::invalid_config, "rank in group out of range");
  }
  ShardStore s;
  s.group_id = group_id;
  s.group_size = group_size;
  s.rank_in_group = rank_in_group;
  for (const auto& r : records) {
    s.index.push_back(IndexEntry{s.blob.size(), static_cast<std::uint32_t>(r.bytes.size()), r.label});
    s.blob.insert(s.blob.end(), r.bytes.begin(), r.bytes.end());
  }
  return s;
}

std::vector<std::size_t> random_batch_indices(const ShardStore& store, const BatchRequest& req) {
  if (store.empty()) fail(Errc::empty_shard, "random batch from an empty shard");
  if (req.batch_size == 0) fail(Errc::invalid_config, "batch size must be >= 1");
  std::vector<std::size_t> out(req.batch_size);
  for (std::size_t j = 0; j < req.batch_size; ++j) {
    out[j] = static_cast<std::size_t>(uniform_below(counter_hash(req.rng_seed, req.step, j), store.size()));
  }
  return out;
}

std::vector<Record> random_batch(const ShardStore& store, const BatchRequest& req) {
  std::vector<Record> out;
  for (auto i : random_batch_indices(store, req)) out.push_back(store.record(i));
  return out;
}

int shuffle_destination(std::uint64_t seed, int group_id, int rank_in_group, std::size_t i, int group_size) {
  const std::uint64_t who = (static_cast<std::uint64_t>(group_id) << 32) | static_cast<std::uint32_t>(rank_in_group);
  return static_cast<int>(uniform_below(counter_hash(seed, kStreamDest | 1, who, i), static_cast<std::uint64_t>(group_size)));
}

std::uint64_t default_segments(std::uint64_t shard_bytes) { return std::max<std::uint64_t>(1, (shard_bytes + kGiB - 1) / kGiB); }

std::pair<std::size_t, std::size_t> segment_bounds(std::size_t n, std::uint64_t rounds, std::uint64_t t) {
  const auto edge = [&](std::uint64_t j) {
    return static_cast<std::size_t>(static_cast<unsigned __int128>(n) * j / rounds);
  };
  return {edge(t), edge(t + 1)};
}

std::vector<std::uint64_t> round_slice_bytes(std::span<const IndexEntry> index, const std::vector<int>& destination,
                                             int group_size, std::uint64_t rounds, std::uint64_t t) {
  std::vector<std::uint64_t> out(static_cast<std::size_t>(group_size), 0);
  const auto [b, e] = segment_bounds(index.size(), rounds, t);
  for (std::size_t i = b; i < e; ++i) {
    out[static_cast<std::size_t>(destination[i])] += kFrameHeaderBytes + index[i].length;
  }
  return out;
}

ShufflePlan plan_shuffle(std::span<const IndexEntry> index, int group_size, int rank_in_group, int group_id,
                         std::uint64_t seed, std::uint64_t m_segments) {
  if (group_size < 1) fail(Errc::group_mismatch, "group size must be >= 1");
  if (m_segments == 0) fail(Errc::invalid_config, "segment count must be >= 1");
  ShufflePlan plan;
  plan.destination.resize(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (kFrameHeaderBytes + index[i].length >= kMaxSliceBytes) {
      fail(Errc::segment_overflow, "record " + std::to_string(i) + " of " + std::to_string(index[i].length) +
                                       " bytes cannot fit a 32-bit slice");
    }
    plan.destination[i] = shuffle_destination(seed, group_id, rank_in_group, i, group_size);
  }
  plan.rounds = m_segments;
  for (;;) {
    std::uint64_t worst = 0;
    for (std::uint64_t t = 0; t < plan.rounds; ++t) {
      for (auto b : round_slice_bytes(index, plan.destination, group_size, plan.rounds, t)) worst = std::max(worst, b);
    }
    if (worst < kMaxSliceBytes) {
      plan.max_slice_bytes = worst;
      return plan;
    }
    plan.rounds *= 2;
  }
}

Comm group_comm(Endpoint& ep, const ShardStore& store) {
  check_group(ep.size(), store.group_size);
  if (store.group_id != ep.rank() / store.group_size || store.rank_in_group != ep.rank() % store.group_size) {
    fail(Errc::group_mismatch, "store group does not match rank " + std::to_string(ep.rank()));
  }
  std::vector<RankId> members;
  for (int i = 0; i < store.group_size; ++i) members.push_back(store.group_id * store.group_size + i);
  return Comm(ep, std::move(members));
}

ShardStore shuffle_all(Endpoint& ep, const ShardStore& store, std::uint64_t m_segments, std::uint64_t seed) {
  Comm g = group_comm(ep, store);
  return shuffle_group(g, store, m_segments, seed);
}

ShardStore shuffle_group(Comm& group, const ShardStore& store, std::uint64_t m_segments, std::uint64_t seed) {
  const int S = group.size();
  const int r = group.rank();
  if (store.group_size != S || store.rank_in_group != r) {
    fail(Errc::group_mismatch, "store describes rank " + std::to_string(store.rank_in_group) + " of " +
                                   std::to_string(store.group_size) + ", communicator has rank " +
                                   std::to_string(r) + " of " + std::to_string(S));
  }

  // Agree on the segment count and seed.
  const std::uint64_t mine[3] = {m_segments, seed, store.blob.size()};
  const auto all = allgather_u64(group, mine);
  std::uint64_t max_shard = 0;
  for (const auto& v : all) {
    if (v[0] != m_segments || v[1] != seed) {
      fail(Errc::invalid_config, "shuffle members disagree on segment count or seed");
    }
    max_shard = std::max(max_shard, v[2]);
  }
  const std::uint64_t m = m_segments == 0 ? default_segments(max_shard) : m_segments;

  ShufflePlan plan = plan_shuffle(store.index, S, r, store.group_id, seed, m);
  std::uint64_t rounds = plan.rounds;
  if (S > 1) {
    const std::uint64_t local = plan.rounds;
    for (const auto& v : allgather_u64(group, std::span<const std::uint64_t>(&local, 1))) rounds = std::max(rounds, v[0]);
  }

  // X': everything received, in (round, source, sender order).
  Bytes recv_blob;
  std::vector<IndexEntry> recv_index;
  for (std::uint64_t t = 0; t < rounds; ++t) {
    const auto [b, e] = segment_bounds(store.size(), rounds, t);
    const auto lens = round_slice_bytes(store.index, plan.destination, S, rounds, t);
    VarPayload send;
    send.lengths = lens;
    send.offsets.resize(lens.size());
    std::uint64_t total = 0;
    for (std::size_t d = 0; d < lens.size(); ++d) {
      send.offsets[d] = total;
      total += lens[d];
    }
    send.data.resize(total);
    std::vector<std::uint64_t> cursor = send.offsets;
    for (std::size_t i = b; i < e; ++i) {
      const auto& ent = store.index[i];
      auto* p = send.data.data() + cursor[static_cast<std::size_t>(plan.destination[i])];
      for (int k = 0; k < 4; ++k) p[k] = static_cast<std::uint8_t>(ent.length >> (8 * k));
      for (int k = 0; k < 4; ++k) p[4 + k] = static_cast<std::uint8_t>(ent.label >> (8 * k));
      std::memcpy(p + kFrameHeaderBytes, store.blob.data() + ent.offset, ent.length);
      cursor[static_cast<std::size_t>(plan.destination[i])] += kFrameHeaderBytes + ent.length;
    }
    group.charge_copy(total);

    VarPayload got = S > 1 ? alltoallv(group, send) : std::move(send);
    group.charge_copy(got.data.size());
    recv_blob.reserve(recv_blob.size() + got.data.size());
    std::size_t pos = 0;
    while (pos < got.data.size()) {
      if (got.data.size() - pos < kFrameHeaderBytes) fail(Errc::format_error, "truncated shuffle frame");
      const auto len = get_le<std::uint32_t>(got.data.data() + pos);
      const auto label = get_le<std::uint32_t>(got.data.data() + pos + 4);
      pos += kFrameHeaderBytes;
      if (got.data.size() - pos < len) fail(Errc::format_error, "truncated shuffle record");
      recv_index.push_back(IndexEntry{recv_blob.size(), len, label});
      recv_blob.insert(recv_blob.end(), got.data.begin() + static_cast<std::ptrdiff_t>(pos),
                       got.data.begin() + static_cast<std::ptrdiff_t>(pos + len));
      pos += len;
    }
  }

  // Local Fisher-Yates permutation of X'.
  const std::size_t n = recv_index.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  const std::uint64_t who = (static_cast<std::uint64_t>(store.group_id) << 32) | static_cast<std::uint32_t>(r);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_below(counter_hash(seed, kStreamPerm | 1, who, i), i));
    std::swap(perm[i - 1], perm[j]);
  }
  ShardStore out;
  out.group_id = store.group_id;
  out.group_size = store.group_size;
  out.rank_in_group = store.rank_in_group;
  out.blob.reserve(recv_blob.size());
  out.index.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    const auto& src = recv_index[perm[t]];
    out.index.push_back(IndexEntry{out.blob.size(), src.length, src.label});
    out.blob.insert(out.blob.end(), recv_blob.begin() + static_cast<std::ptrdiff_t>(src.offset),
                    recv_blob.begin() + static_cast<std::ptrdiff_t>(src.offset + src.length));
  }
  group.charge_copy(out.blob.size());
  return out;
}

std::vector<Record> make_random_records(std::size_t count, std::size_t min_len, std::size_t max_len,
                                        std::uint32_t classes, std::uint64_t seed) {
  if (min_len == 0 || max_len < min_len || classes == 0) fail(Errc::invalid_config, "bad record generator bounds");
  std::vector<Record> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto len = min_len + static_cast<std::size_t>(uniform_below(counter_hash(seed, i, 0), max_len - min_len + 1));
    out[i].label = static_cast<std::uint32_t>(uniform_below(counter_hash(seed, i, 1), classes));
    out[i].bytes.resize(len);
    for (std::size_t k = 0; k < len; k += 8) {
      const auto h = counter_hash(seed, i, 2, k);
      for (std::size_t b = 0; b < 8 && k + b < len; ++b) out[i].bytes[k + b] = static_cast<std::uint8_t>(h >> (8 * b));
    }
  }
  return out;
}

}  // namespace dtrain
