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

#include "dtrain/topology.hpp"

#include <algorithm>
#include <set>

#include "dtrain/error.hpp"

namespace dtrain {

bool ColorTree::is_interior(RankId r) const {
  return std::binary_search(interior.begin(), interior.end(), r);
}

int ColorTree::depth() const {
  int best = 0;
  std::vector<std::pair<RankId, int>> stack{{root, 0}};
  while (!stack.empty()) {
    auto [node, d] = stack.back();
    stack.pop_back();
    best = std::max(best, d);
    if (node < 0 || node >= n_ranks() || d > n_ranks()) continue;
    for (RankId c : children[static_cast<std::size_t>(node)]) stack.emplace_back(c, d + 1);
  }
  return best;
}

std::string to_string(Violation v) {
  switch (v) {
    case Violation::span: return "SpanViolation";
    case Violation::acyclicity: return "AcyclicityViolation";
    case Violation::root: return "RootViolation";
    case Violation::parent_child_mismatch: return "ParentChildMismatch";
    case Violation::arity_bound: return "ArityViolation";
    case Violation::interior_mismatch: return "InteriorMismatch";
    case Violation::color_index: return "ColorIndexViolation";
    case Violation::disjointness: return "DisjointnessViolation";
    case Violation::chunk_coverage: return "ChunkCoverageViolation";
  }
  return "Unknown";
}

ColorTree build_bfs_tree(int color, const std::vector<RankId>& seq, int arity) {
  const auto n = seq.size();
  int max_rank = -1;
  for (RankId r : seq) max_rank = std::max(max_rank, r);
  ColorTree t;
  t.color = color;
  t.root = seq.empty() ? 0 : seq.front();
  t.parent.assign(static_cast<std::size_t>(max_rank + 1), std::nullopt);
  t.children.assign(static_cast<std::size_t>(max_rank + 1), {});
  const auto a = static_cast<std::size_t>(arity);
  for (std::size_t i = 1; i < n; ++i) {
    const RankId p = seq[(i - 1) / a];
    t.parent[static_cast<std::size_t>(seq[i])] = p;
    t.children[static_cast<std::size_t>(p)].push_back(seq[i]);
  }
  for (std::size_t r = 0; r < t.children.size(); ++r) {
    if (!t.children[r].empty() || static_cast<RankId>(r) == t.root) {
      t.interior.push_back(static_cast<RankId>(r));
    }
  }
  return t;
}

ColorTreeSet build_multicolor_trees(int n_ranks, int k, int arity) {
  if (n_ranks < 2) fail(Errc::invalid_config, "multi-color trees need at least 2 ranks");
  if (k < 1) fail(Errc::invalid_config, "color count must be >= 1");
  if (k > n_ranks) {
    fail(Errc::invalid_config,
         "color count " + std::to_string(k) + " exceeds rank count " + std::to_string(n_ranks));
  }
  if (arity < 1) fail(Errc::invalid_config, "arity must be >= 1");

  ColorTreeSet ts;
  ts.k = k;
  ts.arity = arity;
  ts.n_ranks = n_ranks;
  const int shift = (n_ranks + k - 1) / k;
  std::vector<RankId> seq(static_cast<std::size_t>(n_ranks));
  for (int c = 0; c < k; ++c) {
    for (int i = 0; i < n_ranks; ++i) seq[static_cast<std::size_t>(i)] = (i + c * shift) % n_ranks;
    ts.trees.push_back(build_bfs_tree(c, seq, arity));
  }
  ts.plan = make_chunk_plan(0, k);

  for (const auto& issue : validate_tree_set(ts)) {
    if (issue.kind == Violation::disjointness) {
      fail(Errc::disjointness_violation,
           "(n=" + std::to_string(n_ranks) + ", k=" + std::to_string(k) +
               ", arity=" + std::to_string(arity) + "): " + issue.detail);
    }
  }
  return ts;
}

RingOrder build_ring(int n_ranks, RankId root) {
  if (n_ranks < 1) fail(Errc::invalid_config, "ring needs at least one rank");
  if (root < 0 || root >= n_ranks) {
    fail(Errc::invalid_config,
         "ring root " + std::to_string(root) + " outside [0, " + std::to_string(n_ranks) + ")");
  }
  RingOrder ring;
  ring.root = root;
  ring.order.resize(static_cast<std::size_t>(n_ranks));
  for (int i = 0; i < n_ranks; ++i) ring.order[static_cast<std::size_t>(i)] = (root + i) % n_ranks;
  return ring;
}

ColorTree ring_as_tree(const RingOrder& ring) {
  std::vector<RankId> seq;
  seq.reserve(ring.order.size());
  seq.push_back(ring.order.front());
  for (std::size_t i = ring.order.size() - 1; i >= 1; --i) seq.push_back(ring.order[i]);
  return build_bfs_tree(0, seq, 1);
}

ChunkPlan make_chunk_plan(std::size_t payload_len, int k) {
  if (k < 1) fail(Errc::invalid_config, "chunk plan needs k >= 1");
  ChunkPlan plan;
  plan.payload_len = payload_len;
  const auto kk = static_cast<std::size_t>(k);
  const std::size_t base = payload_len / kk;
  const std::size_t extra = payload_len % kk;
  std::size_t start = 0;
  for (std::size_t c = 0; c < kk; ++c) {
    const std::size_t len = base + (c < extra ? 1 : 0);
    plan.chunks.push_back({static_cast<int>(c), start, len});
    start += len;
  }
  return plan;
}

ValidationReport validate_tree(const ColorTree& t, int arity) {
  ValidationReport report;
  const int n = t.n_ranks();
  auto add = [&](Violation v, std::string d) {
    report.push_back({v, "color " + std::to_string(t.color) + ": " + std::move(d)});
  };
  if (static_cast<int>(t.children.size()) != n) {
    add(Violation::parent_child_mismatch, "parent and children tables differ in size");
    return report;
  }
  if (t.root < 0 || t.root >= n) {
    add(Violation::root, "root " + std::to_string(t.root) + " out of range");
    return report;
  }

  int roots = 0;
  for (int r = 0; r < n; ++r) {
    const auto& p = t.parent[static_cast<std::size_t>(r)];
    if (!p) {
      ++roots;
      if (r != t.root) add(Violation::root, "rank " + std::to_string(r) + " has no parent but is not the root");
      continue;
    }
    if (*p < 0 || *p >= n) {
      add(Violation::parent_child_mismatch, "rank " + std::to_string(r) + " has out-of-range parent");
      continue;
    }
    const auto& sib = t.children[static_cast<std::size_t>(*p)];
    if (std::count(sib.begin(), sib.end(), r) != 1) {
      add(Violation::parent_child_mismatch,
          "rank " + std::to_string(r) + " missing from child list of its parent " + std::to_string(*p));
    }
  }
  if (roots != 1) add(Violation::root, std::to_string(roots) + " parentless ranks");
  if (t.parent[static_cast<std::size_t>(t.root)]) add(Violation::root, "root has a parent");

  for (int r = 0; r < n; ++r) {
    const auto& ch = t.children[static_cast<std::size_t>(r)];
    if (static_cast<int>(ch.size()) > arity) {
      add(Violation::arity_bound, "rank " + std::to_string(r) + " has " + std::to_string(ch.size()) +
                                      " children, arity " + std::to_string(arity));
    }
    for (RankId c : ch) {
      if (c < 0 || c >= n || t.parent[static_cast<std::size_t>(c)] != r) {
        add(Violation::parent_child_mismatch,
            "child " + std::to_string(c) + " of rank " + std::to_string(r) + " does not point back");
      }
    }
  }

  // Walk from the root; anything unreached is outside the span, anything
  // reached twice closes a cycle.
  std::vector<int> seen(static_cast<std::size_t>(n), 0);
  std::vector<RankId> stack{t.root};
  while (!stack.empty()) {
    const RankId v = stack.back();
    stack.pop_back();
    if (v < 0 || v >= n) continue;
    if (seen[static_cast<std::size_t>(v)]++) {
      add(Violation::acyclicity, "rank " + std::to_string(v) + " reached twice");
      continue;
    }
    for (RankId c : t.children[static_cast<std::size_t>(v)]) stack.push_back(c);
  }
  for (int r = 0; r < n; ++r) {
    if (!seen[static_cast<std::size_t>(r)]) add(Violation::span, "rank " + std::to_string(r) + " not spanned");
  }

  std::vector<RankId> expected;
  for (int r = 0; r < n; ++r) {
    if (r == t.root || !t.children[static_cast<std::size_t>(r)].empty()) expected.push_back(r);
  }
  if (expected != t.interior) add(Violation::interior_mismatch, "interior set disagrees with child lists");
  return report;
}

ValidationReport validate_tree_set(const ColorTreeSet& ts) {
  ValidationReport report;
  if (static_cast<int>(ts.trees.size()) != ts.k) {
    report.push_back({Violation::color_index, "expected " + std::to_string(ts.k) + " trees, found " +
                                                  std::to_string(ts.trees.size())});
  }
  for (std::size_t c = 0; c < ts.trees.size(); ++c) {
    const auto& t = ts.trees[c];
    if (t.color != static_cast<int>(c)) {
      report.push_back({Violation::color_index, "tree " + std::to_string(c) + " has color " + std::to_string(t.color)});
    }
    if (t.n_ranks() != ts.n_ranks) {
      report.push_back({Violation::span, "tree " + std::to_string(c) + " covers " + std::to_string(t.n_ranks()) +
                                             " ranks, expected " + std::to_string(ts.n_ranks)});
    }
    auto sub = validate_tree(t, ts.arity);
    report.insert(report.end(), sub.begin(), sub.end());
  }

  for (std::size_t a = 0; a < ts.trees.size(); ++a) {
    for (std::size_t b = a + 1; b < ts.trees.size(); ++b) {
      std::vector<RankId> shared;
      std::set_intersection(ts.trees[a].interior.begin(), ts.trees[a].interior.end(),
                            ts.trees[b].interior.begin(), ts.trees[b].interior.end(),
                            std::back_inserter(shared));
      for (RankId r : shared) {
        report.push_back({Violation::disjointness, "rank " + std::to_string(r) + " is interior in colors " +
                                                       std::to_string(a) + " and " + std::to_string(b)});
      }
    }
  }

  const auto& plan = ts.plan;
  if (static_cast<int>(plan.chunks.size()) != ts.k) {
    report.push_back({Violation::chunk_coverage, "plan has " + std::to_string(plan.chunks.size()) +
                                                     " chunks for k=" + std::to_string(ts.k)});
  }
  std::size_t cursor = 0;
  for (std::size_t c = 0; c < plan.chunks.size(); ++c) {
    const auto& ch = plan.chunks[c];
    if (ch.start != cursor) {
      report.push_back({Violation::chunk_coverage, "chunk " + std::to_string(c) + " starts at " +
                                                       std::to_string(ch.start) + ", expected " +
                                                       std::to_string(cursor)});
    }
    if (ch.color != static_cast<int>(c)) {
      report.push_back({Violation::chunk_coverage, "chunk " + std::to_string(c) + " mapped to color " +
                                                       std::to_string(ch.color)});
    }
    cursor = ch.start + ch.len;
  }
  if (cursor != plan.payload_len) {
    report.push_back({Violation::chunk_coverage, "chunks end at " + std::to_string(cursor) +
                                                     ", payload is " + std::to_string(plan.payload_len)});
  }
  return report;
}

nlohmann::json to_json(const ColorTreeSet& ts) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : ts.trees) {
    nlohmann::json parent = nlohmann::json::array();
    for (const auto& p : t.parent) parent.push_back(p ? nlohmann::json(*p) : nlohmann::json(nullptr));
    trees.push_back({{"color", t.color},
                     {"root", t.root},
                     {"parent", parent},
                     {"children", t.children},
                     {"interior", t.interior}});
  }
  nlohmann::json chunks = nlohmann::json::array();
  for (const auto& c : ts.plan.chunks) chunks.push_back({{"color", c.color}, {"start", c.start}, {"len", c.len}});
  return {{"k", ts.k},
          {"arity", ts.arity},
          {"n_ranks", ts.n_ranks},
          {"trees", trees},
          {"plan", {{"payload_len", ts.plan.payload_len}, {"chunks", chunks}}}};
}

ColorTreeSet tree_set_from_json(const nlohmann::json& j) {
  try {
    ColorTreeSet ts;
    ts.k = j.at("k").get<int>();
    ts.arity = j.at("arity").get<int>();
    ts.n_ranks = j.at("n_ranks").get<int>();
    for (const auto& jt : j.at("trees")) {
      ColorTree t;
      t.color = jt.at("color").get<int>();
      t.root = jt.at("root").get<RankId>();
      for (const auto& p : jt.at("parent")) {
        t.parent.push_back(p.is_null() ? std::nullopt : std::optional<RankId>(p.get<RankId>()));
      }
      t.children = jt.at("children").get<std::vector<std::vector<RankId>>>();
      t.interior = jt.at("interior").get<std::vector<RankId>>();
      ts.trees.push_back(std::move(t));
    }
    const auto& jp = j.at("plan");
    ts.plan.payload_len = jp.at("payload_len").get<std::size_t>();
    for (const auto& jc : jp.at("chunks")) {
      ts.plan.chunks.push_back({jc.at("color").get<int>(), jc.at("start").get<std::size_t>(),
                                jc.at("len").get<std::size_t>()});
    }
    return ts;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::format_error, std::string("tree set json: ") + e.what());
  }
}

}  // namespace dtrain
