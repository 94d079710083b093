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
#include <string_view>
#include <vector>

#include "dtrain/endpoint.hpp"
#include "dtrain/topology.hpp"

namespace dtrain {

using GradientBuffer = std::vector<float>;

enum class Algorithm { multicolor, ring, reduce_bcast };

std::string_view to_string(Algorithm a) noexcept;
Algorithm parse_algorithm(std::string_view name);

/// 64 Ki floats (256 KiB) per pipelined segment.
inline constexpr std::size_t kDefaultSegmentElems = std::size_t{1} << 16;
inline constexpr int kDefaultPipelineDepth = 4;

struct AllreduceOptions {
  Algorithm algorithm = Algorithm::multicolor;
  int colors = kDefaultColors;
  int arity = kDefaultArity;
  RankId root = 0;
  std::size_t segment_elems = kDefaultSegmentElems;
  int pipeline_depth = kDefaultPipelineDepth;
};

/// dst[i] += src[i]. Throws Errc::length_mismatch on unequal lengths.
void elementwise_add(std::span<float> dst, std::span<const float> src);

/// Pipelined tree allreduce over the k color trees; chunk c of the payload is
/// reduced up tree c (parents pull child partial sums, folding them into the
/// local segment in child-list order) and broadcast back down it. Colors make
/// progress independently.
void allreduce_multicolor(Comm& comm, std::span<float> buf, const ColorTreeSet& ts,
                          std::size_t segment_elems = kDefaultSegmentElems,
                          int pipeline_depth = kDefaultPipelineDepth);

/// Segments accumulate hop by hop along the ring toward the root, then the
/// reduced segments travel back around the ring in the opposite direction.
void allreduce_ring(Comm& comm, std::span<float> buf, const RingOrder& ring,
                    std::size_t segment_elems = kDefaultSegmentElems, int pipeline_depth = kDefaultPipelineDepth);

/// Naive baseline: the root pulls every full buffer, sums in ascending rank
/// order, and every rank pulls the result back.
void reduce_then_broadcast(Comm& comm, std::span<float> buf, RankId root = 0);

/// Dispatches on opts.algorithm; a single-rank communicator returns at once.
void allreduce(Comm& comm, std::span<float> buf, const AllreduceOptions& opts = {});

/// Per-destination (or per-source, for received payloads) slices of one byte
/// buffer.
struct VarPayload {
  Bytes data;
  std::vector<std::uint64_t> lengths;
  std::vector<std::uint64_t> offsets;

  std::span<const std::uint8_t> slice(std::size_t peer) const;
  /// Packs the given slices back to back.
  static VarPayload pack(const std::vector<Bytes>& slices);
};

/// Any single slice must stay below this (the 32-bit count limit of MPI
/// collectives).
inline constexpr std::uint64_t kMaxSliceBytes = std::uint64_t{1} << 31;

/// Personalized all-to-all exchange of variable-length slices. After a length
/// exchange, rounds pair rank r with r XOR round so each round is a set of
/// disjoint pairwise swaps. The result is ordered by source rank. If
/// `expected_recv` is non-empty it must match the lengths peers announce.
VarPayload alltoallv(Comm& comm, const VarPayload& send, std::span<const std::uint64_t> expected_recv = {});

/// Every rank contributes `values` (same length everywhere); returns all
/// contributions indexed by rank.
std::vector<std::vector<std::uint64_t>> allgather_u64(Comm& comm, std::span<const std::uint64_t> values);

void barrier(Comm& comm);

// Endpoint conveniences for the world communicator.
void allreduce(Endpoint& ep, std::span<float> buf, const AllreduceOptions& opts = {});
VarPayload alltoallv(Endpoint& ep, const VarPayload& send);

}  // namespace dtrain
