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

#include <cstdint>
#include <optional>
#include <vector>

namespace dtrain {

/// Cost-model parameters for the simulated fat-tree.
struct SimParams {
  double latency_s = 1.5e-6;
  /// Per direction, per host link. 100 Gbps.
  double bandwidth_Bps = 12.5e9;
  int pods = 1;
  /// Local memory copy rate charged for host-side data movement (shuffle
  /// packing, unpacking, permutation). Only the simulated backend charges it.
  double memory_Bps = 10e9;
};

/// Fluid (processor-sharing) model of a one-level fat-tree. Every host has
/// an uplink and a downlink; inter-pod traffic additionally crosses the
/// source pod's trunk uplink and the destination pod's trunk downlink, whose
/// capacity is the pod's aggregate host bandwidth. A flow's rate is the
/// smallest equal share among the links on its path, recomputed whenever a
/// flow starts or finishes. Delivery happens one path latency after the last
/// byte leaves, so an uncontended transfer of B bytes costs
/// latency + B / bandwidth.
class SimNetwork {
 public:
  using FlowId = std::uint64_t;

  SimNetwork(int hosts, SimParams params);

  int hosts() const noexcept { return hosts_; }
  const SimParams& params() const noexcept { return params_; }
  int pod_of(int host) const;
  /// One latency inside a pod, two across pods.
  double path_latency(int src, int dst) const;

  /// Starts a flow at time `now`, which must not precede the last event.
  FlowId start(int src, int dst, std::uint64_t bytes, double now);

  /// Time the next active flow finishes its data phase.
  std::optional<double> next_completion() const;

  /// Advances to next_completion() and returns the flows that finished then.
  std::vector<FlowId> complete_next();

  std::size_t active_flows() const noexcept { return flows_.size(); }
  std::uint64_t flows_started() const noexcept { return started_; }
  double time() const noexcept { return now_; }

 private:
  struct Flow {
    FlowId id;
    double remaining;
    double rate;
    std::vector<int> links;
  };

  std::vector<int> path(int src, int dst) const;
  void advance_to(double t);
  void recompute_rates();

  int hosts_;
  SimParams params_;
  int hosts_per_pod_;
  std::vector<double> capacity_;
  std::vector<int> load_;
  std::vector<Flow> flows_;
  double now_ = 0.0;
  FlowId next_id_ = 0;
  std::uint64_t started_ = 0;
};

}  // namespace dtrain
