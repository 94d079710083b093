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

#include "dtrain/sgd.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "dtrain/error.hpp"
#include "dtrain/rng.hpp"

namespace dtrain {

namespace {

constexpr std::uint64_t kStreamInit = 0x696e6974ULL;
constexpr std::uint64_t kStreamTeacher = 0x7465616368ULL;
constexpr std::uint64_t kStreamFeature = 0x66656174ULL;
constexpr std::uint64_t kStreamShuffle = 0x7368756666ULL;

float uniform_pm(std::uint64_t h, float scale) { return (2.0f * unit_float(h) - 1.0f) * scale; }

struct Forward {
  std::array<double, kHidden> h{};
  std::array<double, kClasses> p{};
};

Forward forward(const ToyModel& m, const std::array<float, kInputs>& x) {
  Forward f;
  const float* w = m.w.data();
  for (int j = 0; j < kHidden; ++j) {
    double a = w[kB1 + j];
    for (int i = 0; i < kInputs; ++i) a += static_cast<double>(w[kW1 + j * kInputs + i]) * x[i];
    f.h[j] = std::tanh(a);
  }
  std::array<double, kClasses> z{};
  double zmax = -INFINITY;
  for (int c = 0; c < kClasses; ++c) {
    double a = w[kB2 + c];
    for (int j = 0; j < kHidden; ++j) a += static_cast<double>(w[kW2 + c * kHidden + j]) * f.h[j];
    z[c] = a;
    zmax = std::max(zmax, a);
  }
  double total = 0.0;
  for (int c = 0; c < kClasses; ++c) {
    f.p[c] = std::exp(z[c] - zmax);
    total += f.p[c];
  }
  for (auto& p : f.p) p /= total;
  return f;
}

void check_label(const Sample& s) {
  if (s.label >= static_cast<std::uint32_t>(kClasses)) {
    fail(Errc::invalid_config, "label " + std::to_string(s.label) + " outside the model's classes");
  }
}

void accumulate_sample(const ToyModel& m, const Sample& s, std::span<float> g) {
  check_label(s);
  const Forward f = forward(m, s.x);
  const float* w = m.w.data();
  std::array<double, kClasses> dz{};
  for (int c = 0; c < kClasses; ++c) dz[c] = f.p[c] - (static_cast<std::uint32_t>(c) == s.label ? 1.0 : 0.0);
  for (int c = 0; c < kClasses; ++c) {
    g[kB2 + c] += static_cast<float>(dz[c]);
    for (int j = 0; j < kHidden; ++j) g[kW2 + c * kHidden + j] += static_cast<float>(dz[c] * f.h[j]);
  }
  for (int j = 0; j < kHidden; ++j) {
    double dh = 0.0;
    for (int c = 0; c < kClasses; ++c) dh += static_cast<double>(w[kW2 + c * kHidden + j]) * dz[c];
    const double da = dh * (1.0 - f.h[j] * f.h[j]);
    g[kB1 + j] += static_cast<float>(da);
    for (int i = 0; i < kInputs; ++i) g[kW1 + j * kInputs + i] += static_cast<float>(da * s.x[i]);
  }
}

}  // namespace

ToyModel ToyModel::init(std::uint64_t seed) {
  ToyModel m;
  const float s1 = 1.0f / std::sqrt(static_cast<float>(kInputs));
  const float s2 = 1.0f / std::sqrt(static_cast<float>(kHidden));
  for (std::size_t i = kW1; i < kB1; ++i) m.w[i] = uniform_pm(counter_hash(seed, kStreamInit, i), s1);
  for (std::size_t i = kW2; i < kB2; ++i) m.w[i] = uniform_pm(counter_hash(seed, kStreamInit, i), s2);
  return m;
}

Record encode_sample(const Sample& s) {
  Record r;
  r.label = s.label;
  r.bytes.resize(kInputs * 4);
  for (int i = 0; i < kInputs; ++i) {
    const auto u = std::bit_cast<std::uint32_t>(s.x[i]);
    for (int b = 0; b < 4; ++b) r.bytes[static_cast<std::size_t>(4 * i + b)] = static_cast<std::uint8_t>(u >> (8 * b));
  }
  return r;
}

Sample decode_sample(std::span<const std::uint8_t> bytes, std::uint32_t label) {
  if (bytes.size() != kInputs * 4) {
    fail(Errc::format_error, "sample record of " + std::to_string(bytes.size()) + " bytes, expected 64");
  }
  Sample s;
  s.label = label;
  for (int i = 0; i < kInputs; ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(bytes[static_cast<std::size_t>(4 * i + b)]) << (8 * b);
    s.x[i] = std::bit_cast<float>(u);
  }
  return s;
}

std::vector<Sample> decode_samples(const ShardStore& store, std::span<const std::size_t> which) {
  std::vector<Sample> out;
  out.reserve(which.size());
  for (auto i : which) out.push_back(decode_sample(store.bytes(i), store.index[i].label));
  return out;
}

std::array<float, kClasses> predict(const ToyModel& m, const std::array<float, kInputs>& x) {
  const Forward f = forward(m, x);
  std::array<float, kClasses> out{};
  for (int c = 0; c < kClasses; ++c) out[c] = static_cast<float>(f.p[c]);
  return out;
}

float sample_loss(const ToyModel& m, const Sample& s) {
  check_label(s);
  const Forward f = forward(m, s.x);
  return static_cast<float>(-std::log(std::max(f.p[s.label], 1e-300)));
}

float loss(const ToyModel& m, std::span<const Sample> batch) {
  if (batch.empty()) fail(Errc::invalid_config, "loss of an empty batch");
  double total = 0.0;
  for (const auto& s : batch) total += sample_loss(m, s);
  return static_cast<float>(total / static_cast<double>(batch.size()));
}

GradientBuffer grad_sum(const ToyModel& m, std::span<const Sample> batch) {
  if (m.w.size() != kParams) fail(Errc::length_mismatch, "model has the wrong parameter count");
  GradientBuffer g(kParams, 0.0f);
  for (const auto& s : batch) accumulate_sample(m, s, g);
  return g;
}

GradientBuffer grad(const ToyModel& m, std::span<const Sample> batch) {
  if (batch.empty()) fail(Errc::invalid_config, "gradient of an empty batch");
  GradientBuffer g = grad_sum(m, batch);
  const auto n = static_cast<float>(batch.size());
  for (auto& v : g) v /= n;
  return g;
}

double LrSchedule::target() const {
  return base_lr * static_cast<double>(per_worker_batch) * static_cast<double>(total_workers) / 256.0;
}

double lr_at(const LrSchedule& s, double epoch) {
  const double target = s.target();
  if (epoch < s.warmup_epochs) return s.base_lr + (target - s.base_lr) * (epoch / s.warmup_epochs);
  const double drops = std::floor((epoch - s.warmup_epochs) / s.drop_every);
  return target * std::pow(s.drop_factor, -drops);
}

LrSchedule TrainConfig::schedule() const {
  return LrSchedule{base_lr, per_worker_batch, n_nodes * workers_per_node, warmup_epochs, drop_every, drop_factor};
}

void TrainConfig::validate() const {
  if (n_nodes < 1 || workers_per_node < 1 || per_worker_batch < 1 || epochs < 1 || steps_per_epoch < 0) {
    fail(Errc::invalid_config, "training counts must be >= 1");
  }
  if (!(drop_factor > 1.0) || !(drop_every > 0.0) || warmup_epochs < 0.0 || !(base_lr > 0.0)) {
    fail(Errc::invalid_config, "bad learning-rate schedule");
  }
  const int g = group_size == 0 ? n_nodes : group_size;
  if (g < 1 || n_nodes % g != 0) fail(Errc::group_mismatch, "group size must divide the node count");
  if (shuffle_every_epochs < 0) fail(Errc::invalid_config, "shuffle cadence must be >= 0");
}

std::vector<std::size_t> node_batch(const TrainConfig& cfg, const ShardStore& store, RankId rank, std::uint64_t step) {
  BatchRequest req;
  req.batch_size = static_cast<std::size_t>(cfg.workers_per_node * cfg.per_worker_batch);
  req.rng_seed = cfg.seed + static_cast<std::uint64_t>(rank);
  req.step = step;
  return random_batch_indices(store, req);
}

StepTiming train_step(Comm& comm, ToyModel& model, const TrainConfig& cfg, const ShardStore& store,
                      std::uint64_t step, double lr) {
  StepTiming t;
  const double t0 = comm.now();
  const auto idx = node_batch(cfg, store, comm.endpoint().rank(), step);
  const auto samples = decode_samples(store, idx);
  const auto k = static_cast<std::size_t>(cfg.per_worker_batch);
  const std::span<const Sample> all(samples);

  GradientBuffer payload = grad_sum(model, all.subspan(0, k));
  for (int j = 1; j < cfg.workers_per_node; ++j) {
    elementwise_add(payload, grad_sum(model, all.subspan(static_cast<std::size_t>(j) * k, k)));
  }
  comm.compute(cfg.compute_seconds_per_sample * static_cast<double>(samples.size()));
  if (payload.size() < cfg.grad_payload_elems) payload.resize(cfg.grad_payload_elems, 0.0f);
  const double t1 = comm.now();
  t.compute_s = t1 - t0;

  allreduce(comm, payload, cfg.allreduce);
  t.comm_s = comm.now() - t1;

  const auto lr_f = static_cast<float>(lr);
  const auto b_f = static_cast<float>(cfg.effective_batch());
  for (std::size_t i = 0; i < kParams; ++i) model.w[i] -= lr_f * (payload[i] / b_f);
  return t;
}

std::uint64_t weights_hash(const ToyModel& m) {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (float v : m.w) h = mix64(h ^ std::bit_cast<std::uint32_t>(v));
  return h;
}

void check_replica_consistency(Comm& comm, const ToyModel& m) {
  const std::uint64_t mine = weights_hash(m);
  const auto all = allgather_u64(comm, std::span<const std::uint64_t>(&mine, 1));
  for (int r = 0; r < comm.size(); ++r) {
    if (all[static_cast<std::size_t>(r)][0] != mine) {
      fail(Errc::divergence_detected, "weights on rank " + std::to_string(comm.global(r)) +
                                          " differ from rank " + std::to_string(comm.global(comm.rank())));
    }
  }
}

RankTrainResult run_training(Endpoint& ep, const TrainConfig& cfg, ShardStore store) {
  cfg.validate();
  Comm world(ep);
  if (world.size() != cfg.n_nodes) {
    fail(Errc::invalid_config, "config expects " + std::to_string(cfg.n_nodes) + " nodes, job has " +
                                   std::to_string(world.size()));
  }
  const int group = cfg.group_size == 0 ? cfg.n_nodes : cfg.group_size;

  std::uint64_t dataset = store.size();
  if (world.size() > 1) {
    const std::uint64_t mine = store.size();
    const auto sizes = allgather_u64(world, std::span<const std::uint64_t>(&mine, 1));
    dataset = 0;
    for (int r = 0; r < world.size(); ++r) {
      if (r / group == ep.rank() / group) dataset += sizes[static_cast<std::size_t>(r)][0];
    }
  }
  const auto B = static_cast<std::uint64_t>(cfg.effective_batch());
  const std::uint64_t steps = cfg.steps_per_epoch > 0 ? static_cast<std::uint64_t>(cfg.steps_per_epoch)
                                                      : std::max<std::uint64_t>(1, dataset / B);
  const LrSchedule sched = cfg.schedule();

  RankTrainResult out;
  out.model = ToyModel::init(cfg.seed);
  std::uint64_t step = 0;
  for (int e = 0; e < cfg.epochs; ++e) {
    const double e0 = ep.now();
    double comm_s = 0.0;
    double lr = 0.0;
    for (std::uint64_t s = 0; s < steps; ++s) {
      lr = lr_at(sched, e + static_cast<double>(s) / static_cast<double>(steps));
      comm_s += train_step(world, out.model, cfg, store, step, lr).comm_s;
      if (cfg.check_replicas) check_replica_consistency(world, out.model);
      ++step;
    }
    const double epoch_time = ep.now() - e0;

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < store.size(); ++i) {
      const Sample smp = decode_sample(store.bytes(i), store.index[i].label);
      loss_sum += sample_loss(out.model, smp);
      const auto p = predict(out.model, smp.x);
      const auto best = static_cast<std::uint32_t>(std::max_element(p.begin(), p.end()) - p.begin());
      correct += best == smp.label ? 1 : 0;
    }
    std::vector<float> sums = {static_cast<float>(loss_sum), static_cast<float>(correct),
                               static_cast<float>(store.size())};
    allreduce(world, sums, AllreduceOptions{.algorithm = Algorithm::reduce_bcast});

    EpochMetrics m;
    m.epoch = e + 1;
    m.step = step;
    m.loss = sums[2] > 0 ? sums[0] / sums[2] : 0.0;
    m.acc = sums[2] > 0 ? sums[1] / sums[2] : 0.0;
    m.lr = lr;
    m.elapsed_s = ep.now();
    m.epoch_time_s = epoch_time;
    m.comm_s = comm_s;
    out.history.push_back(m);

    if (cfg.shuffle_every_epochs > 0 && (e + 1) % cfg.shuffle_every_epochs == 0 && e + 1 < cfg.epochs) {
      store = shuffle_all(ep, store, cfg.shuffle_segments, counter_hash(cfg.seed, kStreamShuffle, static_cast<std::uint64_t>(e)));
    }
  }
  return out;
}

TrainResult train(const TrainConfig& cfg, std::span<const Record> corpus, const RunOptions& run) {
  cfg.validate();
  const int group = cfg.group_size == 0 ? cfg.n_nodes : cfg.group_size;
  auto res = run_ranks(cfg.n_nodes, run, [&](Endpoint& ep) {
    return run_training(ep, cfg, partition_records(corpus, ep.rank(), cfg.n_nodes, group));
  });
  TrainResult out;
  out.stats = res.stats;
  out.history = res.results.front().history;
  for (auto& r : res.results) out.models.push_back(std::move(r.model));
  return out;
}

std::vector<Record> make_separable_corpus(std::size_t count, std::uint64_t seed) {
  std::array<float, kClasses * kInputs> teacher{};
  for (std::size_t i = 0; i < teacher.size(); ++i) teacher[i] = uniform_pm(counter_hash(seed, kStreamTeacher, i), 1.0f);
  std::vector<Record> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    Sample s;
    for (int i = 0; i < kInputs; ++i) {
      s.x[i] = uniform_pm(counter_hash(seed, kStreamFeature, n, static_cast<std::uint64_t>(i)), 1.0f);
    }
    float best = -INFINITY;
    for (int c = 0; c < kClasses; ++c) {
      float z = 0.0f;
      for (int i = 0; i < kInputs; ++i) z += teacher[static_cast<std::size_t>(c * kInputs + i)] * s.x[i];
      if (z > best) {
        best = z;
        s.label = static_cast<std::uint32_t>(c);
      }
    }
    out.push_back(encode_sample(s));
  }
  return out;
}

std::string metrics_csv(std::span<const EpochMetrics> history) {
  std::string out = "epoch,step,loss,acc,lr,elapsed_s\n";
  char line[256];
  for (const auto& m : history) {
    std::snprintf(line, sizeof line, "%d,%llu,%.9g,%.9g,%.9g,%.9g\n", m.epoch, static_cast<unsigned long long>(m.step),
                  m.loss, m.acc, m.lr, m.elapsed_s);
    out += line;
  }
  return out;
}

}  // namespace dtrain
