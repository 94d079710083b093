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

#include "dtrain/sim_network.hpp"

#include <algorithm>
#include <limits>

#include "dtrain/error.hpp"

namespace dtrain {

namespace {
// Flows within a sub-byte of completion at the same instant finish together.
constexpr double kDoneBytes = 1e-6;
}  // namespace

SimNetwork::SimNetwork(int hosts, SimParams params) : hosts_(hosts), params_(params) {
  if (hosts < 1) fail(Errc::invalid_config, "simulated network needs at least one host");
  if (params.pods < 1) fail(Errc::invalid_config, "pods must be >= 1");
  if (!(params.bandwidth_Bps > 0.0)) fail(Errc::invalid_config, "bandwidth must be positive");
  if (!(params.latency_s >= 0.0)) fail(Errc::invalid_config, "latency must be non-negative");
  const int pods = std::min(params.pods, hosts);
  params_.pods = pods;
  hosts_per_pod_ = (hosts + pods - 1) / pods;
  // Layout: [host up][host down][pod up][pod down].
  capacity_.assign(static_cast<std::size_t>(2 * hosts + 2 * pods), params.bandwidth_Bps);
  for (int p = 0; p < pods; ++p) {
    const int members = std::min(hosts_per_pod_, hosts - p * hosts_per_pod_);
    const double trunk = params.bandwidth_Bps * std::max(members, 1);
    capacity_[static_cast<std::size_t>(2 * hosts + p)] = trunk;
    capacity_[static_cast<std::size_t>(2 * hosts + pods + p)] = trunk;
  }
  load_.assign(capacity_.size(), 0);
}

int SimNetwork::pod_of(int host) const { return host / hosts_per_pod_; }

double SimNetwork::path_latency(int src, int dst) const {
  return pod_of(src) == pod_of(dst) ? params_.latency_s : 2.0 * params_.latency_s;
}

std::vector<int> SimNetwork::path(int src, int dst) const {
  const int ps = pod_of(src);
  const int pd = pod_of(dst);
  if (ps == pd) return {src, hosts_ + dst};
  return {src, 2 * hosts_ + ps, 2 * hosts_ + params_.pods + pd, hosts_ + dst};
}

SimNetwork::FlowId SimNetwork::start(int src, int dst, std::uint64_t bytes, double now) {
  if (src < 0 || src >= hosts_ || dst < 0 || dst >= hosts_ || src == dst) {
    fail(Errc::invalid_config, "bad flow endpoints " + std::to_string(src) + " -> " + std::to_string(dst));
  }
  advance_to(now);
  const FlowId id = next_id_++;
  ++started_;
  Flow f{id, static_cast<double>(bytes), 0.0, path(src, dst)};
  for (int l : f.links) ++load_[static_cast<std::size_t>(l)];
  flows_.push_back(std::move(f));
  recompute_rates();
  return id;
}

std::optional<double> SimNetwork::next_completion() const {
  if (flows_.empty()) return std::nullopt;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& f : flows_) {
    const double t = f.remaining <= kDoneBytes ? now_ : now_ + f.remaining / f.rate;
    best = std::min(best, t);
  }
  return best;
}

std::vector<SimNetwork::FlowId> SimNetwork::complete_next() {
  std::vector<FlowId> done;
  const auto next = next_completion();
  if (!next) return done;
  // Pin the finishing flows before advancing so rounding cannot leave a
  // fraction of a byte behind.
  const double t = *next;
  for (auto& f : flows_) {
    if (f.remaining <= kDoneBytes || now_ + f.remaining / f.rate <= t) f.remaining = 0.0;
  }
  advance_to(t);
  auto it = std::stable_partition(flows_.begin(), flows_.end(),
                                  [](const Flow& f) { return f.remaining > kDoneBytes; });
  for (auto j = it; j != flows_.end(); ++j) {
    done.push_back(j->id);
    for (int l : j->links) --load_[static_cast<std::size_t>(l)];
  }
  flows_.erase(it, flows_.end());
  recompute_rates();
  return done;
}

void SimNetwork::advance_to(double t) {
  if (t < now_) fail(Errc::invalid_config, "simulated time moved backwards");
  const double dt = t - now_;
  if (dt > 0.0) {
    for (auto& f : flows_) f.remaining = std::max(0.0, f.remaining - f.rate * dt);
  }
  now_ = t;
}

void SimNetwork::recompute_rates() {
  for (auto& f : flows_) {
    double r = std::numeric_limits<double>::infinity();
    for (int l : f.links) {
      const auto li = static_cast<std::size_t>(l);
      r = std::min(r, capacity_[li] / load_[li]);
    }
    f.rate = r;
  }
}

}  // namespace dtrain
