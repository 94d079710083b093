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

#include "dtrain/collectives.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <optional>
#include <string>

#include "dtrain/error.hpp"

namespace dtrain {

namespace {

// Tag layout below the transport's reserved bits: bits 27-29 name the
// operation family, the rest is per-family.
constexpr Tag kKindShift = 27;
constexpr Tag kKindHeader = 1;
constexpr Tag kKindTree = 2;
constexpr Tag kKindReduceBcast = 3;
constexpr Tag kKindAlltoallv = 4;

constexpr Tag kPhaseBit = Tag{1} << 26;
constexpr int kColorShift = 20;
constexpr int kMaxTagColors = 64;
constexpr std::size_t kMaxTagSegments = std::size_t{1} << 20;

Tag kind_tag(Tag kind, Tag sub) { return (kind << kKindShift) | sub; }

Tag tree_tag(bool down, int color, std::size_t seg) {
  return kind_tag(kKindTree, (down ? kPhaseBit : 0) | (static_cast<Tag>(color) << kColorShift) |
                                 static_cast<Tag>(seg));
}

std::span<const std::uint8_t> float_bytes(std::span<const float> v) {
  return {reinterpret_cast<const std::uint8_t*>(v.data()), v.size() * sizeof(float)};
}

void add_bytes(std::span<float> dst, const Bytes& src) {
  if (src.size() != dst.size() * sizeof(float)) {
    fail(Errc::length_mismatch, "segment of " + std::to_string(src.size()) + " bytes, expected " +
                                    std::to_string(dst.size() * sizeof(float)));
  }
  // Staged through a small aligned block so the add loop vectorizes.
  constexpr std::size_t kBlock = 1024;
  float tmp[kBlock];
  for (std::size_t i = 0; i < dst.size(); i += kBlock) {
    const std::size_t n = std::min(kBlock, dst.size() - i);
    std::memcpy(tmp, src.data() + i * sizeof(float), n * sizeof(float));
    elementwise_add(dst.subspan(i, n), std::span<const float>(tmp, n));
  }
}

void copy_bytes(std::span<float> dst, const Bytes& src) {
  if (src.size() != dst.size() * sizeof(float)) {
    fail(Errc::length_mismatch, "segment of " + std::to_string(src.size()) + " bytes, expected " +
                                    std::to_string(dst.size() * sizeof(float)));
  }
  if (!src.empty()) std::memcpy(dst.data(), src.data(), src.size());
}

void put_u64(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void check_finite([[maybe_unused]] std::span<const float> buf) {
#ifndef NDEBUG
  for (float x : buf) {
    if (!std::isfinite(x)) fail(Errc::invalid_config, "non-finite value in allreduce input");
  }
#endif
}

/// Every rank learns every rank's element count; all throw together on a
/// disagreement.
void check_lengths(Comm& comm, std::size_t len) {
  if (comm.size() == 1) return;
  const std::uint64_t mine = len;
  const auto all = allgather_u64(comm, std::span<const std::uint64_t>(&mine, 1));
  for (int r = 0; r < comm.size(); ++r) {
    if (all[static_cast<std::size_t>(r)][0] != mine) {
      fail(Errc::length_mismatch, "rank " + std::to_string(comm.global(r)) + " holds " +
                                      std::to_string(all[static_cast<std::size_t>(r)][0]) +
                                      " elements, rank " + std::to_string(comm.global(comm.rank())) +
                                      " holds " + std::to_string(mine));
    }
  }
}

/// This rank's part in one tree: reduce `chunk` toward the root, then take
/// the root's result back down.
struct TreeTask {
  int color = 0;
  std::optional<int> parent;
  std::vector<int> children;
  std::span<float> chunk;
  std::size_t seg_elems = 1;
  std::size_t nseg = 0;

  std::size_t up_posted = 0;
  std::size_t up_done = 0;
  std::size_t next_child = 0;
  std::size_t down_posted = 0;
  std::size_t down_done = 0;

  std::span<float> segment(std::size_t s) const {
    const std::size_t begin = s * seg_elems;
    return chunk.subspan(begin, std::min(seg_elems, chunk.size() - begin));
  }
  bool done() const { return up_done == nseg && down_done == nseg; }
};

TreeTask make_task(const ColorTree& tree, int me, std::span<float> chunk, std::size_t seg_elems) {
  TreeTask t;
  t.color = tree.color;
  t.parent = tree.parent[static_cast<std::size_t>(me)];
  t.children = tree.children[static_cast<std::size_t>(me)];
  t.chunk = chunk;
  t.seg_elems = seg_elems;
  t.nseg = (chunk.size() + seg_elems - 1) / seg_elems;
  if (t.nseg > kMaxTagSegments) {
    fail(Errc::invalid_config, "chunk needs " + std::to_string(t.nseg) + " segments; raise segment_elems");
  }
  return t;
}

void run_tree_tasks(Comm& comm, std::vector<TreeTask>& tasks, int depth) {
  const auto window = static_cast<std::size_t>(depth);
  for (auto& t : tasks) {
    if (t.children.empty()) {
      t.up_posted = t.up_done = t.nseg;
      if (t.parent) {
        for (std::size_t s = 0; s < t.nseg; ++s) comm.expose_view(tree_tag(false, t.color, s), float_bytes(t.segment(s)));
      }
    }
    if (!t.parent) t.down_posted = t.down_done = t.nseg;
  }

  std::vector<ChannelKey> keys;
  for (;;) {
    bool progress = false;
    bool all_done = true;
    for (auto& t : tasks) {
      while (t.up_posted < t.nseg && t.up_posted - t.up_done < window) {
        for (int ch : t.children) comm.post_pull(ch, tree_tag(false, t.color, t.up_posted));
        ++t.up_posted;
        progress = true;
      }
      while (t.up_done < t.up_posted) {
        const auto seg = t.segment(t.up_done);
        const Tag up = tree_tag(false, t.color, t.up_done);
        while (t.next_child < t.children.size()) {
          auto reply = comm.try_pull(t.children[t.next_child], up);
          if (!reply) break;
          add_bytes(seg, *reply);
          ++t.next_child;
          progress = true;
        }
        if (t.next_child < t.children.size()) break;
        t.next_child = 0;
        if (t.parent) {
          comm.expose_view(up, float_bytes(seg));
        } else {
          comm.expose_view(tree_tag(true, t.color, t.up_done), float_bytes(seg), static_cast<int>(t.children.size()));
        }
        ++t.up_done;
        progress = true;
      }
      if (t.parent) {
        while (t.down_posted < t.nseg && t.down_posted - t.down_done < window) {
          comm.post_pull(*t.parent, tree_tag(true, t.color, t.down_posted));
          ++t.down_posted;
          progress = true;
        }
        while (t.down_done < t.down_posted) {
          const Tag down = tree_tag(true, t.color, t.down_done);
          auto reply = comm.try_pull(*t.parent, down);
          if (!reply) break;
          const auto seg = t.segment(t.down_done);
          copy_bytes(seg, *reply);
          if (!t.children.empty()) comm.expose_view(down, float_bytes(seg), static_cast<int>(t.children.size()));
          ++t.down_done;
          progress = true;
        }
      }
      all_done = all_done && t.done();
    }
    if (all_done) break;
    if (progress) continue;

    keys.clear();
    for (const auto& t : tasks) {
      if (t.up_done < t.up_posted) {
        keys.push_back(comm.pull_key(t.children[t.next_child], tree_tag(false, t.color, t.up_done)));
      }
      if (t.parent && t.down_done < t.down_posted) {
        keys.push_back(comm.pull_key(*t.parent, tree_tag(true, t.color, t.down_done)));
      }
    }
    comm.wait_any(keys);
  }
  comm.wait_exposures_drained();
}

}  // namespace

std::string_view to_string(Algorithm a) noexcept {
  switch (a) {
    case Algorithm::multicolor: return "multicolor";
    case Algorithm::ring: return "ring";
    case Algorithm::reduce_bcast: return "reduce_bcast";
  }
  return "unknown";
}

Algorithm parse_algorithm(std::string_view name) {
  if (name == "multicolor") return Algorithm::multicolor;
  if (name == "ring") return Algorithm::ring;
  if (name == "reduce_bcast") return Algorithm::reduce_bcast;
  fail(Errc::invalid_config, "unknown algorithm '" + std::string(name) + "'");
}

void elementwise_add(std::span<float> dst, std::span<const float> src) {
  if (dst.size() != src.size()) {
    fail(Errc::length_mismatch,
         "elementwise_add of " + std::to_string(dst.size()) + " and " + std::to_string(src.size()) + " elements");
  }
  float* __restrict d = dst.data();
  const float* __restrict s = src.data();
  const std::size_t n = dst.size();
  for (std::size_t i = 0; i < n; ++i) d[i] += s[i];
}

void allreduce_multicolor(Comm& comm, std::span<float> buf, const ColorTreeSet& ts, std::size_t segment_elems,
                          int pipeline_depth) {
  if (ts.n_ranks != comm.size()) {
    fail(Errc::invalid_config, "tree set built for " + std::to_string(ts.n_ranks) + " ranks, communicator has " +
                                   std::to_string(comm.size()));
  }
  if (segment_elems == 0 || pipeline_depth < 1) fail(Errc::invalid_config, "segment size and depth must be >= 1");
  if (ts.k > kMaxTagColors) fail(Errc::invalid_config, "at most 64 colors");
  check_finite(buf);
  if (comm.size() == 1) return;
  check_lengths(comm, buf.size());

  const ChunkPlan plan = make_chunk_plan(buf.size(), ts.k);
  std::vector<TreeTask> tasks;
  for (const auto& ch : plan.chunks) {
    if (ch.len == 0) continue;
    tasks.push_back(make_task(ts.trees[static_cast<std::size_t>(ch.color)], comm.rank(),
                              buf.subspan(ch.start, ch.len), segment_elems));
  }
  run_tree_tasks(comm, tasks, pipeline_depth);
}

void allreduce_ring(Comm& comm, std::span<float> buf, const RingOrder& ring, std::size_t segment_elems,
                    int pipeline_depth) {
  if (static_cast<int>(ring.order.size()) != comm.size()) {
    fail(Errc::invalid_config, "ring order does not match communicator size");
  }
  if (segment_elems == 0 || pipeline_depth < 1) fail(Errc::invalid_config, "segment size and depth must be >= 1");
  check_finite(buf);
  if (comm.size() == 1) return;
  check_lengths(comm, buf.size());
  if (buf.empty()) return;

  std::vector<TreeTask> tasks;
  tasks.push_back(make_task(ring_as_tree(ring), comm.rank(), buf, segment_elems));
  run_tree_tasks(comm, tasks, pipeline_depth);
}

void reduce_then_broadcast(Comm& comm, std::span<float> buf, RankId root) {
  const int n = comm.size();
  if (root < 0 || root >= n) fail(Errc::invalid_config, "root " + std::to_string(root) + " out of range");
  check_finite(buf);
  if (n == 1) return;
  check_lengths(comm, buf.size());

  const std::size_t piece_elems = std::max<std::size_t>(1, comm.endpoint().options().max_segment_bytes / sizeof(float));
  const std::size_t npieces = (buf.size() + piece_elems - 1) / piece_elems;
  if (npieces > kMaxTagSegments) fail(Errc::invalid_config, "payload too large for the piece tag space");
  auto piece = [&](std::size_t p) {
    const std::size_t begin = p * piece_elems;
    return buf.subspan(begin, std::min(piece_elems, buf.size() - begin));
  };
  auto up_tag = [](std::size_t p) { return kind_tag(kKindReduceBcast, static_cast<Tag>(p)); };
  auto down_tag = [](std::size_t p) { return kind_tag(kKindReduceBcast, kPhaseBit | static_cast<Tag>(p)); };
  const std::size_t window = kDefaultPipelineDepth;
  const int me = comm.rank();

  if (me != root) {
    for (std::size_t p = 0; p < npieces; ++p) comm.expose_view(up_tag(p), float_bytes(piece(p)));
    std::size_t posted = 0;
    for (std::size_t p = 0; p < npieces; ++p) {
      while (posted < npieces && posted - p < window) comm.post_pull(root, down_tag(posted++));
      copy_bytes(piece(p), comm.wait_pull(root, down_tag(p)));
    }
    comm.wait_exposures_drained();
    return;
  }

  // Root: fold (rank, piece) pairs in ascending rank order per piece.
  std::vector<std::pair<int, std::size_t>> order;
  for (std::size_t p = 0; p < npieces; ++p) {
    for (int r = 0; r < n; ++r) {
      if (r != root) order.emplace_back(r, p);
    }
  }
  std::size_t posted = 0;
  std::size_t consumed = 0;
  auto post_more = [&] {
    while (posted < order.size() && posted - consumed < window) {
      comm.post_pull(order[posted].first, up_tag(order[posted].second));
      ++posted;
    }
  };
  std::vector<float> acc;
  for (std::size_t p = 0; p < npieces; ++p) {
    const auto mine = piece(p);
    acc.assign(mine.size(), 0.0f);
    for (int r = 0; r < n; ++r) {
      if (r == root) {
        if (r == 0) {
          std::copy(mine.begin(), mine.end(), acc.begin());
        } else {
          elementwise_add(acc, mine);
        }
        continue;
      }
      post_more();
      Bytes reply = comm.wait_pull(r, up_tag(p));
      ++consumed;
      if (r == 0) {
        copy_bytes(acc, reply);
      } else {
        add_bytes(acc, reply);
      }
    }
    std::copy(acc.begin(), acc.end(), mine.begin());
    comm.expose_view(down_tag(p), float_bytes(mine), n - 1);
  }
  comm.wait_exposures_drained();
}

void allreduce(Comm& comm, std::span<float> buf, const AllreduceOptions& opts) {
  if (comm.size() == 1) {
    check_finite(buf);
    return;
  }
  switch (opts.algorithm) {
    case Algorithm::multicolor: {
      const int k = std::min(opts.colors, comm.size());
      const auto ts = build_multicolor_trees(comm.size(), k, opts.arity);
      allreduce_multicolor(comm, buf, ts, opts.segment_elems, opts.pipeline_depth);
      return;
    }
    case Algorithm::ring:
      allreduce_ring(comm, buf, build_ring(comm.size(), opts.root), opts.segment_elems, opts.pipeline_depth);
      return;
    case Algorithm::reduce_bcast:
      reduce_then_broadcast(comm, buf, opts.root);
      return;
  }
}

void allreduce(Endpoint& ep, std::span<float> buf, const AllreduceOptions& opts) {
  Comm world(ep);
  allreduce(world, buf, opts);
}

std::span<const std::uint8_t> VarPayload::slice(std::size_t peer) const {
  return std::span<const std::uint8_t>(data).subspan(offsets.at(peer), lengths.at(peer));
}

VarPayload VarPayload::pack(const std::vector<Bytes>& slices) {
  VarPayload v;
  std::size_t total = 0;
  for (const auto& s : slices) total += s.size();
  v.data.reserve(total);
  for (const auto& s : slices) {
    v.offsets.push_back(v.data.size());
    v.lengths.push_back(s.size());
    v.data.insert(v.data.end(), s.begin(), s.end());
  }
  return v;
}

VarPayload alltoallv(Comm& comm, const VarPayload& send, std::span<const std::uint64_t> expected_recv) {
  const int n = comm.size();
  const auto un = static_cast<std::size_t>(n);
  if (send.lengths.size() != un || send.offsets.size() != un) {
    fail(Errc::length_mismatch, "alltoallv needs one length and offset per rank");
  }
  std::uint64_t prev_end = 0;
  for (std::size_t i = 0; i < un; ++i) {
    if (send.lengths[i] >= kMaxSliceBytes) {
      fail(Errc::offset_overflow, "slice to rank " + std::to_string(comm.global(static_cast<int>(i))) + " is " +
                                      std::to_string(send.lengths[i]) + " bytes");
    }
    if (send.offsets[i] < prev_end || send.offsets[i] + send.lengths[i] > send.data.size()) {
      fail(Errc::length_mismatch, "alltoallv slices must be in order, disjoint and inside the buffer");
    }
    prev_end = send.offsets[i] + send.lengths[i];
  }
  if (!expected_recv.empty() && expected_recv.size() != un) {
    fail(Errc::length_mismatch, "expected receive lengths need one entry per rank");
  }

  const int me = comm.rank();
  const Tag len_tag = kind_tag(kKindAlltoallv, 0);

  VarPayload out;
  out.lengths.assign(un, 0);
  out.lengths[static_cast<std::size_t>(me)] = send.lengths[static_cast<std::size_t>(me)];
  for (int r = 0; r < n; ++r) {
    if (r == me) continue;
    Bytes b;
    put_u64(b, send.lengths[static_cast<std::size_t>(r)]);
    comm.send(r, len_tag, std::move(b));
  }
  for (int r = 0; r < n; ++r) {
    if (r == me) continue;
    const Bytes b = comm.recv(r, len_tag);
    if (b.size() != 8) fail(Errc::length_mismatch, "malformed length announcement");
    out.lengths[static_cast<std::size_t>(r)] = get_u64(b.data());
  }
  bool mismatch = false;
  for (std::size_t r = 0; r < un && !expected_recv.empty(); ++r) mismatch = mismatch || expected_recv[r] != out.lengths[r];
  if (mismatch) fail(Errc::length_mismatch, "announced lengths differ from the expected receive lengths");

  out.offsets.assign(un, 0);
  std::uint64_t total = 0;
  for (std::size_t r = 0; r < un; ++r) {
    out.offsets[r] = total;
    total += out.lengths[r];
  }
  out.data.resize(total);
  {
    const auto self = send.slice(static_cast<std::size_t>(me));
    std::copy(self.begin(), self.end(), out.data.begin() + static_cast<std::ptrdiff_t>(out.offsets[static_cast<std::size_t>(me)]));
  }

  // Each round's data moves only once both partners have reached it: the
  // sender exposes its slice and the partner pulls it, so the rounds stay
  // disjoint pairwise swaps even when ranks drift apart.
  const std::size_t max_msg = comm.endpoint().options().max_segment_bytes;
  int rounds = 1;
  while (rounds < n) rounds <<= 1;
  for (int round = 1; round < rounds; ++round) {
    const int partner = me ^ round;
    if (partner >= n) continue;
    const auto up = static_cast<std::size_t>(partner);
    const Tag tag = kind_tag(kKindAlltoallv, static_cast<Tag>(round));
    const auto slice = send.slice(up);
    for (std::size_t off = 0; off < slice.size(); off += max_msg) {
      comm.expose_view(tag, slice.subspan(off, std::min(max_msg, slice.size() - off)));
    }
    const std::uint64_t want = out.lengths[up];
    for (std::uint64_t off = 0; off < want; off += max_msg) comm.post_pull(partner, tag);
    for (std::uint64_t off = 0; off < want; off += max_msg) {
      const Bytes b = comm.wait_pull(partner, tag);
      if (b.size() != std::min<std::uint64_t>(max_msg, want - off)) {
        fail(Errc::length_mismatch, "peer exposed a slice of unexpected length");
      }
      std::copy(b.begin(), b.end(), out.data.begin() + static_cast<std::ptrdiff_t>(out.offsets[up] + off));
    }
  }
  comm.wait_exposures_drained();
  return out;
}

VarPayload alltoallv(Endpoint& ep, const VarPayload& send) {
  Comm world(ep);
  return alltoallv(world, send);
}

std::vector<std::vector<std::uint64_t>> allgather_u64(Comm& comm, std::span<const std::uint64_t> values) {
  const int n = comm.size();
  const int me = comm.rank();
  const Tag tag = kind_tag(kKindHeader, 0);
  std::vector<std::vector<std::uint64_t>> all(static_cast<std::size_t>(n));
  all[static_cast<std::size_t>(me)].assign(values.begin(), values.end());
  Bytes b;
  for (auto v : values) put_u64(b, v);
  for (int r = 0; r < n; ++r) {
    if (r != me) comm.send(r, tag, b);
  }
  for (int r = 0; r < n; ++r) {
    if (r == me) continue;
    const Bytes got = comm.recv(r, tag);
    if (got.size() != b.size()) {
      fail(Errc::length_mismatch, "allgather contributions differ in length (" + std::to_string(got.size() / 8) +
                                      " vs " + std::to_string(values.size()) + ")");
    }
    auto& dst = all[static_cast<std::size_t>(r)];
    for (std::size_t i = 0; i < values.size(); ++i) dst.push_back(get_u64(got.data() + 8 * i));
  }
  return all;
}

void barrier(Comm& comm) {
  if (comm.size() == 1) return;
  allgather_u64(comm, {});
}

}  // namespace dtrain
