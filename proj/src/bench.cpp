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

#include "dtrain/bench.hpp"

#include <cstring>
#include <algorithm>
#include <cstdio>
#include <map>

#include "dtrain/dimd.hpp"
#include "dtrain/error.hpp"
#include "dtrain/rng.hpp"
#include "dtrain/sgd.hpp"

namespace dtrain {

std::string_view to_string(Scenario s) noexcept {
  switch (s) {
    case Scenario::allreduce: return "allreduce";
    case Scenario::shuffle: return "shuffle";
    case Scenario::train: return "train";
  }
  return "unknown";
}

Scenario parse_scenario(std::string_view name) {
  if (name == "allreduce") return Scenario::allreduce;
  if (name == "shuffle") return Scenario::shuffle;
  if (name == "train") return Scenario::train;
  fail(Errc::invalid_config, "unknown scenario '" + std::string(name) + "'");
}

void BenchSpec::validate() const {
  if (repetitions < 3) fail(Errc::invalid_config, "timing scenarios need at least 3 repetitions");
  if (n_ranks.empty()) fail(Errc::invalid_config, "rank sweep is empty");
  for (int n : n_ranks) {
    if (n < 1) fail(Errc::invalid_config, "rank counts must be >= 1");
  }
  if (scenario != Scenario::shuffle && algorithms.empty()) fail(Errc::invalid_config, "no algorithm selected");
  if (scenario == Scenario::shuffle) {
    if (groups.empty()) fail(Errc::invalid_config, "group sweep is empty");
    if (record_bytes == 0 || record_bytes >= kMaxRecordBytes) fail(Errc::invalid_config, "bad record size");
  }
  if (segment_elems == 0) fail(Errc::invalid_config, "segment size must be >= 1");
}

double bus_bandwidth_GBps(std::uint64_t payload_bytes, int n_ranks, double seconds) {
  if (n_ranks < 2 || !(seconds > 0.0)) return 0.0;
  return 2.0 * static_cast<double>(payload_bytes) * (n_ranks - 1) / n_ranks / seconds / 1e9;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

namespace {

std::vector<std::uint64_t> default_payloads() {
  std::vector<std::uint64_t> out;
  for (std::uint64_t p = 4 << 10; p <= (std::uint64_t{256} << 20); p *= 4) out.push_back(p);
  return out;
}

RunOptions run_options(const BenchSpec& spec) {
  RunOptions ro;
  ro.backend = spec.backend;
  ro.transport = spec.transport;
  ro.sim = spec.sim;
  return ro;
}

// Element i of rank r is a(i) + c(r), both small integers, so every
// summation order gives the same exact result.
constexpr std::uint64_t kPeriod = 17;

std::uint64_t pattern_start(std::uint64_t seed) { return (seed * 97) % kPeriod; }
constexpr std::uint64_t kPatternStep = 2654435761ULL % kPeriod;

float term_r(std::uint64_t seed, int r) {
  return static_cast<float>(static_cast<int>((static_cast<std::uint64_t>(r) * 40503ULL + seed * 31) % 5) - 2);
}

/// scale * a(i) + offset for i in [0, kTile), a whole number of periods.
constexpr std::size_t kTile = kPeriod * 1024;

std::vector<float> pattern_tile(std::uint64_t seed, float scale, float offset) {
  std::vector<float> t(kTile);
  std::uint64_t cur = pattern_start(seed);
  for (auto& x : t) {
    x = scale * static_cast<float>(static_cast<int>(cur) - 8) + offset;
    cur += kPatternStep;
    if (cur >= kPeriod) cur -= kPeriod;
  }
  return t;
}

void fill_tiled(std::span<float> dst, const std::vector<float>& tile) {
  for (std::size_t i = 0; i < dst.size(); i += kTile) {
    std::memcpy(dst.data() + i, tile.data(), std::min(kTile, dst.size() - i) * sizeof(float));
  }
}

/// Index of the first element differing from the tiled pattern, or dst.size().
std::size_t first_mismatch(std::span<const float> got, const std::vector<float>& tile) {
  for (std::size_t i = 0; i < got.size(); i += kTile) {
    const std::size_t n = std::min(kTile, got.size() - i);
    std::size_t bad = 0;
    for (std::size_t j = 0; j < n; ++j) bad += got[i + j] != tile[j];
    if (bad != 0) {
      for (std::size_t j = 0; j < n; ++j) {
        if (got[i + j] != tile[j]) return i + j;
      }
    }
  }
  return got.size();
}

std::vector<double> max_over_ranks(const std::vector<std::vector<double>>& per_rank) {
  std::vector<double> out(per_rank.front().size(), 0.0);
  for (const auto& v : per_rank) {
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(out[i], v[i]);
  }
  return out;
}

std::string bytes_label(std::uint64_t b) { return std::to_string(b) + " bytes"; }

// Eight bytes per step; record contents are checked, not authenticated.
std::uint64_t content_hash(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ bytes.size();
  std::size_t i = 0;
  for (; i + 8 <= bytes.size(); i += 8) {
    std::uint64_t w;
    std::memcpy(&w, bytes.data() + i, 8);
    h = (h ^ w) * 0x9e3779b97f4a7c15ULL;
    h ^= h >> 32;
  }
  for (; i < bytes.size(); ++i) h = (h ^ bytes[i]) * 0x100000001b3ULL;
  return h;
}

/// Order-independent (count, hash sum) of a shard.
std::array<std::uint64_t, 2> fingerprint(const ShardStore& s) {
  std::uint64_t sum = 0;
  for (std::size_t i = 0; i < s.size(); ++i) sum += mix64(content_hash(s.bytes(i)) ^ s.index[i].label);
  return {s.size(), sum};
}

Record bench_record(std::uint64_t seed, std::uint64_t id, std::uint64_t len) {
  Record r;
  r.label = static_cast<std::uint32_t>(id % 1000);
  r.bytes.resize(len);
  for (std::uint64_t k = 0; k < len; k += 8) {
    const auto h = counter_hash(seed, id, k);
    for (std::uint64_t b = 0; b < 8 && k + b < len; ++b) r.bytes[k + b] = static_cast<std::uint8_t>(h >> (8 * b));
  }
  return r;
}

}  // namespace

BenchReport bench_allreduce(const BenchSpec& spec) {
  spec.validate();
  BenchReport rep;
  const auto payloads = spec.payload_bytes.empty() ? default_payloads() : spec.payload_bytes;
  const RunOptions ro = run_options(spec);
  for (int n : spec.n_ranks) {
    for (Algorithm algo : spec.algorithms) {
      for (std::uint64_t p : payloads) {
        const std::size_t elems = p / sizeof(float);
        const std::uint64_t bytes = elems * sizeof(float);
        const std::string label = std::string(to_string(algo)) + " n=" + std::to_string(n) + " " + bytes_label(bytes);
        if (static_cast<std::uint64_t>(n) * bytes > spec.memory_budget_bytes) {
          rep.failures.push_back(label + ": exceeds the memory budget");
          continue;
        }
        AllreduceOptions ao;
        ao.algorithm = algo;
        ao.colors = spec.colors;
        ao.arity = spec.arity;
        ao.segment_elems = spec.segment_elems;
        try {
          auto res = run_ranks(n, ro, [&](Endpoint& ep) {
            Comm world(ep);
            std::vector<float> buf(elems);
            std::vector<double> times;
            for (int r = 0; r < spec.repetitions; ++r) {
              const std::uint64_t s = spec.seed + static_cast<std::uint64_t>(r);
              const float mine = term_r(s, ep.rank());
              float others = 0.0f;
              for (int q = 0; q < n; ++q) others += term_r(s, q);
              fill_tiled(buf, pattern_tile(s, 1.0f, mine));
              barrier(world);
              const double t0 = ep.now();
              allreduce(world, buf, ao);
              times.push_back(ep.now() - t0);
              const std::size_t bad = first_mismatch(buf, pattern_tile(s, static_cast<float>(n), others));
              if (bad != elems) {
                fail(Errc::divergence_detected, "element " + std::to_string(bad) + " differs from the oracle");
              }
            }
            return times;
          });
          const double t = median(max_over_ranks(res.results));
          rep.rows.push_back(BenchRow{"allreduce", std::string(to_string(algo)), n, bytes, t,
                                      bus_bandwidth_GBps(bytes, n, t), std::string(to_string(spec.backend))});
        } catch (const Error& e) {
          rep.failures.push_back(label + ": " + e.what());
        }
      }
    }
  }
  return rep;
}

BenchReport bench_shuffle(const BenchSpec& spec) {
  spec.validate();
  BenchReport rep;
  const RunOptions ro = run_options(spec);
  for (int n : spec.n_ranks) {
    for (int g : spec.groups) {
      const std::string label = "shuffle n=" + std::to_string(n) + " groups=" + std::to_string(g);
      if (g < 1 || n % g != 0) {
        rep.failures.push_back(label + ": group count must divide the rank count");
        continue;
      }
      const int S = n / g;
      std::uint64_t per_rank_records = 0;
      if (spec.shard_bytes > 0) {
        per_rank_records = std::max<std::uint64_t>(1, spec.shard_bytes / spec.record_bytes);
      } else {
        const std::uint64_t total = spec.corpus_bytes / spec.record_bytes;
        if (total % static_cast<std::uint64_t>(S) != 0 || total == 0) {
          rep.failures.push_back(label + ": corpus records do not divide evenly over the group");
          continue;
        }
        per_rank_records = total / static_cast<std::uint64_t>(S);
      }
      const std::uint64_t shard = per_rank_records * spec.record_bytes;
      if (3 * shard * static_cast<std::uint64_t>(n) > spec.memory_budget_bytes) {
        rep.failures.push_back(label + ": exceeds the memory budget");
        continue;
      }
      try {
        auto res = run_ranks(n, ro, [&](Endpoint& ep) {
          ShardStore store;
          store.group_size = S;
          store.group_id = ep.rank() / S;
          store.rank_in_group = ep.rank() % S;
          store.blob.reserve(shard);
          for (std::uint64_t j = 0; j < per_rank_records; ++j) {
            // Fixed shard: ids unique per rank. Fixed corpus: record i of the
            // group's copy lives on rank i mod S.
            const std::uint64_t id = spec.shard_bytes > 0
                                         ? static_cast<std::uint64_t>(ep.rank()) * per_rank_records + j
                                         : j * static_cast<std::uint64_t>(S) + static_cast<std::uint64_t>(store.rank_in_group);
            const Record r = bench_record(spec.seed, id, spec.record_bytes);
            store.index.push_back(IndexEntry{store.blob.size(), static_cast<std::uint32_t>(r.bytes.size()), r.label});
            store.blob.insert(store.blob.end(), r.bytes.begin(), r.bytes.end());
          }
          Comm world(ep);
          Comm group = group_comm(ep, store);
          const auto before = fingerprint(store);
          std::vector<double> times;
          for (int r = 0; r < spec.repetitions; ++r) {
            barrier(world);
            const double t0 = ep.now();
            const ShardStore out = shuffle_group(group, store, spec.segments, spec.seed + static_cast<std::uint64_t>(r));
            times.push_back(ep.now() - t0);
            const auto after = fingerprint(out);
            const auto b = allgather_u64(group, before);
            const auto a = allgather_u64(group, after);
            std::uint64_t bc = 0, bs = 0, ac = 0, as = 0;
            for (int q = 0; q < S; ++q) {
              bc += b[static_cast<std::size_t>(q)][0];
              bs += b[static_cast<std::size_t>(q)][1];
              ac += a[static_cast<std::size_t>(q)][0];
              as += a[static_cast<std::size_t>(q)][1];
            }
            if (bc != ac || bs != as) fail(Errc::divergence_detected, "shuffle did not conserve the group's records");
          }
          return std::make_pair(times, store.blob.size());
        });
        std::vector<std::vector<double>> times;
        for (const auto& r : res.results) times.push_back(r.first);
        const double t = median(max_over_ranks(times));
        const std::uint64_t resident = res.results.front().second;
        rep.rows.push_back(BenchRow{"shuffle", "groups=" + std::to_string(g), n, resident, t,
                                    t > 0.0 ? static_cast<double>(resident) / t / 1e9 : 0.0,
                                    std::string(to_string(spec.backend))});
      } catch (const Error& e) {
        rep.failures.push_back(label + ": " + e.what());
      }
    }
  }
  return rep;
}

BenchReport bench_train(const BenchSpec& spec) {
  spec.validate();
  BenchReport rep;
  const RunOptions ro = run_options(spec);
  const std::uint64_t payload = spec.payload_bytes.empty() ? (std::uint64_t{4} << 20) : spec.payload_bytes.front();
  const std::size_t payload_elems = std::max<std::size_t>(kParams, payload / sizeof(float));
  const auto corpus = make_separable_corpus(spec.corpus_samples, spec.seed);
  std::map<std::string, std::pair<int, double>> reference;
  auto ranks = spec.n_ranks;
  std::sort(ranks.begin(), ranks.end());

  for (Algorithm algo : spec.algorithms) {
    for (int n : ranks) {
      const std::string label = std::string(to_string(algo)) + " train n=" + std::to_string(n);
      if (static_cast<std::uint64_t>(n) * payload_elems * sizeof(float) * 2 > spec.memory_budget_bytes) {
        rep.failures.push_back(label + ": exceeds the memory budget");
        continue;
      }
      TrainConfig cfg;
      cfg.n_nodes = n;
      cfg.workers_per_node = spec.workers_per_node;
      cfg.per_worker_batch = spec.per_worker_batch;
      cfg.epochs = spec.repetitions;
      cfg.seed = spec.seed;
      cfg.allreduce.algorithm = algo;
      cfg.allreduce.colors = spec.colors;
      cfg.allreduce.arity = spec.arity;
      cfg.allreduce.segment_elems = spec.segment_elems;
      cfg.shuffle_every_epochs = 0;
      cfg.grad_payload_elems = payload_elems;
      cfg.compute_seconds_per_sample = spec.compute_seconds_per_sample;
      cfg.check_replicas = false;
      try {
        const TrainResult res = train(cfg, corpus, ro);
        for (const auto& m : res.models) {
          if (!(m == res.models.front())) fail(Errc::divergence_detected, "replicas diverged");
        }
        std::vector<double> epoch_times;
        double comm = 0.0;
        double total = 0.0;
        for (const auto& h : res.history) {
          epoch_times.push_back(h.epoch_time_s);
          comm += h.comm_s;
          total += h.epoch_time_s;
        }
        const double t = median(epoch_times);
        const std::uint64_t steps = res.history.front().step;
        const double per_step = t > 0.0 ? t / static_cast<double>(steps) : 0.0;
        const std::uint64_t pbytes = payload_elems * sizeof(float);
        rep.rows.push_back(BenchRow{"train", std::string(to_string(algo)), n, pbytes, t,
                                    bus_bandwidth_GBps(pbytes, n, per_step), std::string(to_string(spec.backend))});
        TrainSummary s;
        s.algorithm = std::string(to_string(algo));
        s.n_ranks = n;
        s.epoch_time_s = t;
        s.comm_share = total > 0.0 ? comm / total : 0.0;
        auto [it, fresh] = reference.try_emplace(s.algorithm, n, t);
        const auto [n_ref, t_ref] = it->second;
        s.scaling_efficiency = t > 0.0 ? (t_ref * n_ref) / (t * n) : 1.0;
        rep.train.push_back(s);
      } catch (const Error& e) {
        rep.failures.push_back(label + ": " + e.what());
      }
    }
  }
  return rep;
}

BenchReport run_bench(const BenchSpec& spec) {
  switch (spec.scenario) {
    case Scenario::allreduce: return bench_allreduce(spec);
    case Scenario::shuffle: return bench_shuffle(spec);
    case Scenario::train: return bench_train(spec);
  }
  fail(Errc::invalid_config, "unknown scenario");
}

}  // namespace dtrain
