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

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dtrain/collectives.hpp"
#include "dtrain/dimd.hpp"
#include "dtrain/transport.hpp"

namespace dtrain {

inline constexpr int kInputs = 16;
inline constexpr int kHidden = 8;
inline constexpr int kClasses = 4;
/// W1[hidden][inputs], b1[hidden], W2[classes][hidden], b2[classes].
inline constexpr std::size_t kW1 = 0;
inline constexpr std::size_t kB1 = kW1 + kHidden * kInputs;
inline constexpr std::size_t kW2 = kB1 + kHidden;
inline constexpr std::size_t kB2 = kW2 + kClasses * kHidden;
inline constexpr std::size_t kParams = kB2 + kClasses;

/// 16 -> 8 (tanh) -> 4 MLP with softmax cross-entropy loss.
struct ToyModel {
  std::vector<float> w = std::vector<float>(kParams, 0.0f);

  /// Same seed, same weights on every rank.
  static ToyModel init(std::uint64_t seed);
  bool operator==(const ToyModel&) const = default;
};

struct Sample {
  std::array<float, kInputs> x{};
  std::uint32_t label = 0;
};

/// Records carry 16 little-endian floats; the label rides in the index.
Record encode_sample(const Sample& s);
Sample decode_sample(std::span<const std::uint8_t> bytes, std::uint32_t label);
std::vector<Sample> decode_samples(const ShardStore& store, std::span<const std::size_t> which);

/// Class probabilities for one input.
std::array<float, kClasses> predict(const ToyModel& m, const std::array<float, kInputs>& x);
float sample_loss(const ToyModel& m, const Sample& s);
/// Mean loss over the batch.
float loss(const ToyModel& m, std::span<const Sample> batch);

/// Sum of per-sample gradients, accumulated in batch order.
GradientBuffer grad_sum(const ToyModel& m, std::span<const Sample> batch);
/// Mean gradient over a non-empty batch.
GradientBuffer grad(const ToyModel& m, std::span<const Sample> batch);

struct LrSchedule {
  double base_lr = 0.1;
  int per_worker_batch = 64;
  int total_workers = 4;
  double warmup_epochs = 5.0;
  double drop_every = 30.0;
  double drop_factor = 10.0;

  double target() const;
};

/// Linear ramp from base_lr to base_lr*k*n/256 over the warmup, then a drop
/// by drop_factor every drop_every epochs.
double lr_at(const LrSchedule& s, double epoch);

struct TrainConfig {
  int n_nodes = 1;
  int workers_per_node = 1;
  int per_worker_batch = 1;
  int epochs = 1;
  /// 0 derives steps per epoch from the corpus size and the effective batch.
  int steps_per_epoch = 0;
  double base_lr = 0.1;
  double warmup_epochs = 5.0;
  double drop_every = 30.0;
  double drop_factor = 10.0;
  std::uint64_t seed = 1;

  AllreduceOptions allreduce;
  /// Ranks per data group; 0 means one group spanning every rank.
  int group_size = 0;
  /// Shuffle after every this many epochs; 0 never shuffles.
  int shuffle_every_epochs = 1;
  std::uint64_t shuffle_segments = 0;
  /// Pads the allreduce payload to at least this many floats.
  std::size_t grad_payload_elems = 0;
  /// Virtual compute time per sample (simulated backend).
  double compute_seconds_per_sample = 0.0;
  bool check_replicas = true;

  int effective_batch() const { return n_nodes * workers_per_node * per_worker_batch; }
  LrSchedule schedule() const;
  void validate() const;
};

struct StepTiming {
  double compute_s = 0.0;
  double comm_s = 0.0;
};

/// One synchronous step on this rank: workers take consecutive k-sample
/// slices of the node batch, their gradient sums are folded in worker order,
/// allreduced, and W -= lr * (sum / B) is applied.
StepTiming train_step(Comm& comm, ToyModel& model, const TrainConfig& cfg, const ShardStore& store,
                      std::uint64_t step, double lr);

/// Node batch indices for `step` on `rank` (seeded by cfg.seed + rank).
std::vector<std::size_t> node_batch(const TrainConfig& cfg, const ShardStore& store, RankId rank, std::uint64_t step);

std::uint64_t weights_hash(const ToyModel& m);
/// Throws Errc::divergence_detected unless every rank holds the same weights.
void check_replica_consistency(Comm& comm, const ToyModel& m);

struct EpochMetrics {
  int epoch = 0;
  std::uint64_t step = 0;
  double loss = 0.0;
  double acc = 0.0;
  double lr = 0.0;
  double elapsed_s = 0.0;
  double epoch_time_s = 0.0;
  double comm_s = 0.0;
};

struct RankTrainResult {
  ToyModel model;
  std::vector<EpochMetrics> history;
};

/// Runs the whole schedule on one rank; `store` is this rank's partition.
RankTrainResult run_training(Endpoint& ep, const TrainConfig& cfg, ShardStore store);

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::vector<ToyModel> models;
  RunStats stats;
};

/// Partitions `corpus` over cfg.n_nodes ranks and trains on the chosen
/// backend. History comes from rank 0.
TrainResult train(const TrainConfig& cfg, std::span<const Record> corpus, const RunOptions& run = {});

/// Linearly separable data: labels are the argmax of a fixed random linear
/// map of uniform features.
std::vector<Record> make_separable_corpus(std::size_t count, std::uint64_t seed);

/// `epoch,step,loss,acc,lr,elapsed_s`
std::string metrics_csv(std::span<const EpochMetrics> history);

}  // namespace dtrain
