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
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace dtrain {

using RankId = int;

/// One spanning tree of a multi-color allreduce. Vectors are indexed by rank.
struct ColorTree {
  int color = 0;
  RankId root = 0;
  std::vector<std::optional<RankId>> parent;
  std::vector<std::vector<RankId>> children;
  /// Root plus every non-leaf node, ascending.
  std::vector<RankId> interior;

  int n_ranks() const noexcept { return static_cast<int>(parent.size()); }
  bool is_interior(RankId r) const;
  /// Longest root-to-leaf path, in edges.
  int depth() const;
};

struct Chunk {
  int color = 0;
  std::size_t start = 0;
  std::size_t len = 0;

  bool operator==(const Chunk&) const = default;
};

struct ChunkPlan {
  std::size_t payload_len = 0;
  std::vector<Chunk> chunks;
};

struct ColorTreeSet {
  int k = 1;
  int arity = 1;
  int n_ranks = 0;
  std::vector<ColorTree> trees;
  ChunkPlan plan;
};

struct RingOrder {
  std::vector<RankId> order;
  RankId root = 0;
};

enum class Violation {
  span,
  acyclicity,
  root,
  parent_child_mismatch,
  arity_bound,
  interior_mismatch,
  color_index,
  disjointness,
  chunk_coverage,
};

std::string to_string(Violation v);

struct ValidationIssue {
  Violation kind;
  std::string detail;
};

using ValidationReport = std::vector<ValidationIssue>;

inline constexpr int kDefaultColors = 4;
inline constexpr int kDefaultArity = 4;

/// Builds k breadth-first trees of the given arity. Color c lays ranks out in
/// the order (i + c*ceil(n/k)) mod n, so the interior of each tree is a
/// contiguous window that does not overlap the other colors' windows.
/// Throws Errc::invalid_config for bad parameters and
/// Errc::disjointness_violation when two colors share an interior node.
ColorTreeSet build_multicolor_trees(int n_ranks, int k = kDefaultColors,
                                    int arity = kDefaultArity);

/// BFS tree over an explicit rank sequence: seq[0] is the root and the
/// children of position i are positions arity*i+1 .. arity*i+arity.
ColorTree build_bfs_tree(int color, const std::vector<RankId>& seq, int arity);

RingOrder build_ring(int n_ranks, RankId root = 0);

/// The ring as a chain tree: root <- order[n-1] <- ... <- order[1]. Reducing up
/// this tree walks the ring toward the root, broadcasting down it walks back.
ColorTree ring_as_tree(const RingOrder& ring);

ChunkPlan make_chunk_plan(std::size_t payload_len, int k);

/// Never throws; an empty report means every invariant holds.
ValidationReport validate_tree_set(const ColorTreeSet& ts);

/// Checks a single tree (span, root, acyclicity, parent/children agreement,
/// arity bound, interior set).
ValidationReport validate_tree(const ColorTree& tree, int arity);

nlohmann::json to_json(const ColorTreeSet& ts);
ColorTreeSet tree_set_from_json(const nlohmann::json& j);

}  // namespace dtrain
