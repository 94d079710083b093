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

#include "dtrain/collectives.hpp"
#include "dtrain/transport.hpp"
#include "oracles.hpp"

namespace dtrain {
namespace {

using oracle::Inputs;

RunOptions on(Backend b) {
  RunOptions o;
  o.backend = b;
  return o;
}

// Runs `opts` over copies of `in` and returns every rank's result.
Inputs run_allreduce(const Inputs& in, const AllreduceOptions& opts, Backend backend = Backend::sim) {
  const int n = static_cast<int>(in.size());
  auto res = run_ranks(n, on(backend), [&](Endpoint& ep) {
    std::vector<float> buf = in[ep.rank()];
    allreduce(ep, buf, opts);
    return buf;
  });
  return res.results;
}

std::vector<float> matched_oracle(const Inputs& in, const AllreduceOptions& o) {
  const int n = static_cast<int>(in.size());
  if (n == 1) return in[0];
  switch (o.algorithm) {
    case Algorithm::multicolor:
      return oracle::multicolor_sum(in, build_multicolor_trees(n, std::min(o.colors, n), o.arity));
    case Algorithm::ring: return oracle::ring_sum(in, build_ring(n, o.root).order);
    case Algorithm::reduce_bcast: return oracle::rank_order_sum(in);
  }
  return {};
}

TEST(ElementwiseAdd, Examples) {
  std::vector<float> a = {1, 2};
  elementwise_add(a, std::vector<float>{3, 4});
  EXPECT_EQ(a, (std::vector<float>{4, 6}));
  std::vector<float> x = oracle::random_floats(1, 33);
  const auto x0 = x;
  elementwise_add(x, std::vector<float>(33, 0.0f));
  EXPECT_EQ(x, x0);
  std::vector<float> short_one(3);
  EXPECT_THROW(elementwise_add(short_one, std::vector<float>(4)), Error);
}

TEST(ElementwiseAdd, MatchesScalarLoop) {
  for (std::uint64_t t = 0; t < 10; ++t) {
    const std::size_t n = 1 + uniform_below(counter_hash(9, t), 5000);
    std::vector<float> d = oracle::random_floats(counter_hash(10, t), n, 100.0f);
    const std::vector<float> s = oracle::random_floats(counter_hash(11, t), n, 100.0f);
    std::vector<float> want = d;
    for (std::size_t i = 0; i < n; ++i) want[i] = want[i] + s[i];
    elementwise_add(d, s);
    EXPECT_TRUE(oracle::bitwise_equal(d, want));
  }
}

TEST(Multicolor, TwoRanksOneColor) {
  const auto out = run_allreduce({{1, 2}, {10, 20}}, {.algorithm = Algorithm::multicolor, .colors = 1});
  for (const auto& v : out) EXPECT_EQ(v, (std::vector<float>{11, 22}));
}

TEST(Multicolor, EightRanksConstantVectors) {
  Inputs in;
  for (int r = 0; r < 8; ++r) in.push_back(std::vector<float>(999, static_cast<float>(r)));
  const auto out = run_allreduce(in, {.algorithm = Algorithm::multicolor, .colors = 4, .arity = 4, .segment_elems = 37});
  for (const auto& v : out) EXPECT_EQ(v, std::vector<float>(999, 28.0f));
}

TEST(Multicolor, EightRanksMatchTreeOrderOracleBitwise) {
  const Inputs in = oracle::random_inputs(3, 8, 1000);
  const AllreduceOptions o{.algorithm = Algorithm::multicolor, .colors = 4, .arity = 4, .segment_elems = 64};
  const auto want = oracle::multicolor_sum(in, build_multicolor_trees(8, 4, 4));
  for (const auto& v : run_allreduce(in, o)) EXPECT_TRUE(oracle::bitwise_equal(v, want));
}

TEST(Ring, SingleRankUnchanged) {
  const auto out = run_allreduce({{1.5f, -2.0f}}, {.algorithm = Algorithm::ring});
  EXPECT_EQ(out[0], (std::vector<float>{1.5f, -2.0f}));
}

TEST(Ring, ThreeRanks) {
  const auto out = run_allreduce({{1}, {2}, {3}}, {.algorithm = Algorithm::ring});
  for (const auto& v : out) EXPECT_EQ(v, std::vector<float>{6});
}

TEST(Ring, EightRanksMatchRingOrderOracleBitwise) {
  const Inputs in = oracle::random_inputs(4, 8, 1000);
  const auto want = oracle::ring_sum(in, build_ring(8, 0).order);
  for (const auto& v : run_allreduce(in, {.algorithm = Algorithm::ring, .segment_elems = 100})) {
    EXPECT_TRUE(oracle::bitwise_equal(v, want));
  }
}

TEST(Ring, NonZeroRootUsesRotatedOrder) {
  const Inputs in = oracle::random_inputs(5, 5, 300);
  const auto want = oracle::ring_sum(in, build_ring(5, 3).order);
  for (const auto& v : run_allreduce(in, {.algorithm = Algorithm::ring, .root = 3, .segment_elems = 64})) {
    EXPECT_TRUE(oracle::bitwise_equal(v, want));
  }
}

TEST(ReduceBcast, TwoRanksEqualsRing) {
  const Inputs in = oracle::random_inputs(6, 2, 777);
  const auto a = run_allreduce(in, {.algorithm = Algorithm::reduce_bcast});
  const auto b = run_allreduce(in, {.algorithm = Algorithm::ring});
  EXPECT_TRUE(oracle::bitwise_equal(a[0], b[0]));
}

TEST(ReduceBcast, OneHot) {
  Inputs in(4, std::vector<float>(4, 0.0f));
  for (int r = 0; r < 4; ++r) in[r][r] = 1.0f;
  for (const auto& v : run_allreduce(in, {.algorithm = Algorithm::reduce_bcast})) {
    EXPECT_EQ(v, std::vector<float>(4, 1.0f));
  }
}

TEST(ReduceBcast, EightRanksMatchRankOrderOracleBitwise) {
  const Inputs in = oracle::random_inputs(7, 8, 1000);
  const auto want = oracle::rank_order_sum(in);
  for (const auto& v : run_allreduce(in, {.algorithm = Algorithm::reduce_bcast})) {
    EXPECT_TRUE(oracle::bitwise_equal(v, want));
  }
}

TEST(ReduceBcast, NonZeroRootStillFoldsInRankOrder) {
  const Inputs in = oracle::random_inputs(8, 4, 100);
  const auto want = oracle::rank_order_sum(in);
  for (const auto& v : run_allreduce(in, {.algorithm = Algorithm::reduce_bcast, .root = 2})) {
    EXPECT_TRUE(oracle::bitwise_equal(v, want));
  }
}

TEST(Allreduce, PiecesLargerThanOneSegment) {
  // 4 MiB segments: 1.5 M floats force several pieces and tree segments.
  const Inputs in = oracle::random_inputs(12, 3, 1536 * 1024 + 5);
  for (Algorithm a : {Algorithm::multicolor, Algorithm::ring, Algorithm::reduce_bcast}) {
    const AllreduceOptions o{.algorithm = a, .colors = 2, .arity = 2};
    const auto want = matched_oracle(in, o);
    for (const auto& v : run_allreduce(in, o)) EXPECT_TRUE(oracle::bitwise_equal(v, want)) << to_string(a);
  }
}

struct Case {
  Algorithm algo;
  Backend backend;
  int n;
};

class Sweep : public ::testing::TestWithParam<Case> {};

TEST_P(Sweep, MatchesOraclesForRaggedLengths) {
  const auto [algo, backend, n] = GetParam();
  for (std::size_t len : {0ul, 1ul, 7ul, 1000ul, 1003ul}) {
    const Inputs in = oracle::random_inputs(counter_hash(n, len, static_cast<int>(algo)), n, len);
    const AllreduceOptions o{.algorithm = algo, .segment_elems = 128};
    const auto want = matched_oracle(in, o);
    const auto out = run_allreduce(in, o, backend);
    for (int r = 0; r < n; ++r) {
      EXPECT_TRUE(oracle::bitwise_equal(out[r], want)) << "rank " << r << " len " << len;
      if (len > 0) EXPECT_LE(oracle::max_rel_error(out[r], in), 1e-5);
    }
  }
}

std::vector<Case> sweep_cases() {
  std::vector<Case> v;
  for (Algorithm a : {Algorithm::multicolor, Algorithm::ring, Algorithm::reduce_bcast}) {
    for (Backend b : {Backend::sim, Backend::threads, Backend::tcp}) {
      for (int n : {1, 2, 3, 4, 8, 16}) {
        if (b == Backend::tcp && n > 8) continue;
        v.push_back({a, b, n});
      }
    }
  }
  return v;
}

INSTANTIATE_TEST_SUITE_P(All, Sweep, ::testing::ValuesIn(sweep_cases()), [](const auto& info) {
  return std::string(to_string(info.param.algo)) + "_" + std::string(to_string(info.param.backend)) + "_n" +
         std::to_string(info.param.n);
});

TEST(Allreduce, CrossAlgorithmWithinTolerance) {
  const Inputs in = oracle::random_inputs(13, 16, 4099);
  const auto mc = run_allreduce(in, {.algorithm = Algorithm::multicolor, .segment_elems = 256})[0];
  const auto ring = run_allreduce(in, {.algorithm = Algorithm::ring, .segment_elems = 256})[0];
  const auto rb = run_allreduce(in, {.algorithm = Algorithm::reduce_bcast})[0];
  for (std::size_t i = 0; i < mc.size(); ++i) {
    double scale = 0.0;
    for (const auto& v : in) scale += std::fabs(v[i]);
    EXPECT_LE(std::fabs(mc[i] - ring[i]), 1e-5 * scale);
    EXPECT_LE(std::fabs(mc[i] - rb[i]), 1e-5 * scale);
  }
}

TEST(Allreduce, RepeatedRunsBitwiseIdentical) {
  const Inputs in = oracle::random_inputs(14, 6, 2000);
  for (Backend b : {Backend::sim, Backend::threads}) {
    const auto a = run_allreduce(in, {.algorithm = Algorithm::multicolor, .colors = 2, .segment_elems = 50}, b);
    const auto c = run_allreduce(in, {.algorithm = Algorithm::multicolor, .colors = 2, .segment_elems = 50}, b);
    EXPECT_EQ(a, c);
  }
}

TEST(Allreduce, LengthDisagreementDetected) {
  for (Algorithm a : {Algorithm::multicolor, Algorithm::ring, Algorithm::reduce_bcast}) {
    try {
      run_allreduce({std::vector<float>(10), std::vector<float>(11), std::vector<float>(10)}, {.algorithm = a});
      ADD_FAILURE() << to_string(a);
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::length_mismatch) << to_string(a);
    }
  }
}

TEST(Allreduce, MulticolorOnSubCommunicator) {
  const Inputs in = oracle::random_inputs(15, 6, 500);
  auto res = run_ranks(6, on(Backend::sim), [&](Endpoint& ep) {
    std::vector<float> buf = in[ep.rank()];
    std::vector<RankId> members = ep.rank() % 2 == 0 ? std::vector<RankId>{0, 2, 4} : std::vector<RankId>{1, 3, 5};
    Comm c(ep, members);
    allreduce(c, buf, {.algorithm = Algorithm::multicolor, .colors = 2, .arity = 2});
    return buf;
  });
  const Inputs even = {in[0], in[2], in[4]};
  const auto want = oracle::multicolor_sum(even, build_multicolor_trees(3, 2, 2));
  EXPECT_TRUE(oracle::bitwise_equal(res.results[2], want));
}

TEST(Allreduce, AlgorithmNames) {
  for (Algorithm a : {Algorithm::multicolor, Algorithm::ring, Algorithm::reduce_bcast}) {
    EXPECT_EQ(parse_algorithm(to_string(a)), a);
  }
  EXPECT_THROW(parse_algorithm("tree"), Error);
}

std::vector<VarPayload> run_alltoallv(const std::vector<std::vector<Bytes>>& send, Backend b = Backend::sim) {
  const int n = static_cast<int>(send.size());
  auto res = run_ranks(n, on(b), [&](Endpoint& ep) { return alltoallv(ep, VarPayload::pack(send[ep.rank()])); });
  return res.results;
}

TEST(Alltoallv, TwoRankSwap) {
  const auto out = run_alltoallv({{Bytes{}, Bytes{'a', 'b'}}, {Bytes{'x', 'y', 'z'}, Bytes{}}});
  EXPECT_EQ(out[0].data, (Bytes{'x', 'y', 'z'}));
  EXPECT_EQ(out[1].data, (Bytes{'a', 'b'}));
  EXPECT_EQ(out[0].lengths, (std::vector<std::uint64_t>{0, 3}));
}

TEST(Alltoallv, AllEmpty) {
  const auto out = run_alltoallv(std::vector<std::vector<Bytes>>(4, std::vector<Bytes>(4)));
  for (const auto& p : out) {
    EXPECT_TRUE(p.data.empty());
    EXPECT_EQ(p.lengths, std::vector<std::uint64_t>(4, 0));
  }
}

std::vector<std::vector<Bytes>> random_matrix(std::uint64_t seed, int n, std::size_t max_len) {
  std::vector<std::vector<Bytes>> send(n, std::vector<Bytes>(n));
  for (int s = 0; s < n; ++s) {
    for (int d = 0; d < n; ++d) {
      const auto len = uniform_below(counter_hash(seed, s, d), max_len + 1);
      for (std::uint64_t i = 0; i < len; ++i) send[s][d].push_back(static_cast<std::uint8_t>(counter_hash(seed, s, d, i)));
    }
  }
  return send;
}

TEST(Alltoallv, RandomPayloadsMatchPermutationOracle) {
  for (Backend b : {Backend::sim, Backend::threads, Backend::tcp}) {
    for (int n : {1, 3, 4, 7}) {
      const auto send = random_matrix(counter_hash(16, n), n, 3000);
      const auto out = run_alltoallv(send, b);
      std::uint64_t sent = 0;
      std::uint64_t received = 0;
      for (int r = 0; r < n; ++r) {
        const auto want = oracle::alltoallv_expected(send, r);
        for (int s = 0; s < n; ++s) {
          const auto got = out[r].slice(s);
          EXPECT_EQ(Bytes(got.begin(), got.end()), want[s]) << to_string(b) << " n=" << n;
          sent += send[s][r].size();
        }
        received += out[r].data.size();
      }
      EXPECT_EQ(sent, received);
    }
  }
}

TEST(Alltoallv, SlicesLargerThanOneSegment) {
  RunOptions o = on(Backend::sim);
  o.transport.max_segment_bytes = 1000;
  std::vector<std::vector<Bytes>> send = random_matrix(17, 3, 4500);
  auto res = run_ranks(3, o, [&](Endpoint& ep) { return alltoallv(ep, VarPayload::pack(send[ep.rank()])); });
  for (int r = 0; r < 3; ++r) {
    for (int s = 0; s < 3; ++s) {
      const auto got = res.results[r].slice(s);
      EXPECT_EQ(Bytes(got.begin(), got.end()), send[s][r]);
    }
  }
}

TEST(Alltoallv, OversizedSliceRejected) {
  try {
    run_ranks_void(2, on(Backend::sim), [](Endpoint& ep) {
      VarPayload p;
      p.lengths = {0, kMaxSliceBytes};
      p.offsets = {0, 0};
      alltoallv(ep, p);
    });
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::offset_overflow);
  }
}

TEST(Alltoallv, OverlappingSlicesRejected) {
  try {
    run_ranks_void(2, on(Backend::sim), [](Endpoint& ep) {
      VarPayload p;
      p.data = Bytes(4);
      p.lengths = {3, 3};
      p.offsets = {0, 1};
      alltoallv(ep, p);
    });
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::length_mismatch);
  }
}

TEST(Alltoallv, InconsistentExpectedLengthsRejected) {
  try {
    run_ranks_void(2, on(Backend::sim), [](Endpoint& ep) {
      Comm c(ep);
      const auto p = VarPayload::pack({Bytes(2), Bytes(2)});
      const std::vector<std::uint64_t> expect = {2, 5};
      alltoallv(c, p, expect);
    });
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::length_mismatch);
  }
}

TEST(Allgather, CollectsEveryRank) {
  auto res = run_ranks(5, on(Backend::sim), [](Endpoint& ep) {
    Comm c(ep);
    const std::vector<std::uint64_t> mine = {static_cast<std::uint64_t>(ep.rank()), 100u + ep.rank()};
    return allgather_u64(c, mine);
  });
  for (const auto& all : res.results) {
    for (int r = 0; r < 5; ++r) EXPECT_EQ(all[r], (std::vector<std::uint64_t>{std::uint64_t(r), 100u + r}));
  }
}

}  // namespace
}  // namespace dtrain
