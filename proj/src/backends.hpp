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

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <semaphore>
#include <thread>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "dtrain/transport.hpp"

namespace dtrain::detail {

/// Shared behaviour of the backends that run ranks on real threads: blocking
/// waits park on a condition variable, time is the wall clock.
class CvEndpoint : public Endpoint {
 public:
  using Clock = std::chrono::steady_clock;

  CvEndpoint(RankId rank, int n_ranks, TransportOptions options, Clock::time_point epoch)
      : Endpoint(rank, n_ranks, options), epoch_(epoch) {}

  double now() const override { return std::chrono::duration<double>(Clock::now() - epoch_).count(); }
  void compute(double) override {}

 protected:
  bool block_until(std::unique_lock<std::mutex>& lk, const std::function<bool()>& ready, WaitKind kind) override;
  void notify_locked() override { cv_.notify_all(); }

 private:
  std::condition_variable cv_;
  Clock::time_point epoch_;
};

class ThreadEndpoint final : public CvEndpoint {
 public:
  ThreadEndpoint(RankId rank, int n_ranks, TransportOptions options, Clock::time_point epoch,
                 const std::vector<std::unique_ptr<ThreadEndpoint>>* peers)
      : CvEndpoint(rank, n_ranks, options, epoch), peers_(peers) {}

 protected:
  void transmit(Message msg) override;

 private:
  const std::vector<std::unique_ptr<ThreadEndpoint>>* peers_;
};

RunStats run_threads(int n_ranks, const RunOptions& opts, const std::function<void(Endpoint&)>& program);
RunStats run_tcp(int n_ranks, const RunOptions& opts, const std::function<void(Endpoint&)>& program);

class SimWorld;

class SimEndpoint final : public Endpoint {
 public:
  SimEndpoint(RankId rank, int n_ranks, TransportOptions options, SimWorld* world)
      : Endpoint(rank, n_ranks, options), world_(world) {}

  double now() const override;
  void compute(double seconds) override;
  void charge_copy(std::uint64_t bytes) override;

 protected:
  void transmit(Message msg) override;
  bool block_until(std::unique_lock<std::mutex>& lk, const std::function<bool()>& ready, WaitKind kind) override;
  void notify_locked() override;

 private:
  SimWorld* world_;
};

/// Discrete-event driver for the simulated backend. Each rank runs on its own
/// thread, but only one thread (a rank or the scheduler) executes at a time;
/// control is handed over with semaphores, so the interleaving, and with it
/// every virtual timestamp, depends only on the inputs.
class SimWorld {
 public:
  SimWorld(int n_ranks, const RunOptions& opts);
  ~SimWorld();

  RunStats run(const std::function<void(Endpoint&)>& program);

  // Called from the running rank (or from the scheduler while delivering).
  double clock() const noexcept { return clock_; }
  const SimParams& params() const noexcept { return opts_.sim; }
  void transmit(Message msg);
  void yield(RankId r);
  void wake(RankId r);
  void sleep(RankId r, double seconds);

 private:
  enum class State { runnable, running, blocked, done };
  struct Slot {
    std::thread thread;
    std::binary_semaphore go{0};
    State state = State::runnable;
    bool timer_fired = false;
    double finish_time = 0.0;
  };
  struct Event {
    bool is_timer = false;
    RankId rank = 0;
    Message msg;
    std::uint64_t chan_seq = 0;
  };
  using Channel = std::tuple<RankId, RankId, Tag>;

  void schedule(double t, Event ev);
  void abort_all(Errc reason, const std::string& detail);
  void arrive(Message msg, std::uint64_t chan_seq);
  void deliver(Message msg);

  int n_;
  RunOptions opts_;
  SimNetwork net_;
  double clock_ = 0.0;
  std::uint64_t seq_ = 0;
  std::map<std::pair<double, std::uint64_t>, Event> events_;
  std::unordered_map<SimNetwork::FlowId, std::pair<Message, std::uint64_t>> in_network_;
  // Flows share links, so a short message can overtake a long one sent
  // earlier on the same channel. Arrivals are held until their predecessors
  // have been delivered.
  std::map<Channel, std::uint64_t> sent_;
  std::map<Channel, std::uint64_t> delivered_;
  std::map<Channel, std::map<std::uint64_t, Message>> held_;
  std::vector<std::unique_ptr<SimEndpoint>> eps_;
  std::vector<std::unique_ptr<Slot>> slots_;
  std::binary_semaphore back_{0};
  std::exception_ptr first_error_;
  bool aborted_ = false;
};

}  // namespace dtrain::detail
