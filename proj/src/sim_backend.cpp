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

#include <limits>

#include "backends.hpp"

namespace dtrain::detail {

double SimEndpoint::now() const { return world_->clock(); }

void SimEndpoint::compute(double seconds) {
  if (!(seconds > 0.0)) return;
  if (closed()) fail(Errc::closed, "compute on closed endpoint");
  world_->sleep(rank(), seconds);
}

void SimEndpoint::charge_copy(std::uint64_t bytes) {
  const double rate = world_->params().memory_Bps;
  if (bytes == 0 || !(rate > 0.0)) return;
  compute(static_cast<double>(bytes) / rate);
}

void SimEndpoint::transmit(Message msg) { world_->transmit(std::move(msg)); }

bool SimEndpoint::block_until(std::unique_lock<std::mutex>& lk, const std::function<bool()>& ready, WaitKind) {
  while (!ready()) {
    lk.unlock();
    world_->yield(rank());
    lk.lock();
  }
  return true;
}

void SimEndpoint::notify_locked() { world_->wake(rank()); }

SimWorld::SimWorld(int n_ranks, const RunOptions& opts) : n_(n_ranks), opts_(opts), net_(n_ranks, opts.sim) {
  for (int r = 0; r < n_; ++r) {
    eps_.push_back(std::make_unique<SimEndpoint>(r, n_, opts.transport, this));
    slots_.push_back(std::make_unique<Slot>());
  }
}

SimWorld::~SimWorld() {
  for (auto& s : slots_) {
    if (s->thread.joinable()) s->thread.join();
  }
}

void SimWorld::schedule(double t, Event ev) { events_.emplace(std::make_pair(t, seq_++), std::move(ev)); }

void SimWorld::transmit(Message msg) {
  const std::uint64_t seq = sent_[Channel{msg.src, msg.dst, msg.tag}]++;
  if (msg.payload.empty()) {
    const double t = clock_ + net_.path_latency(msg.src, msg.dst);
    schedule(t, Event{false, 0, std::move(msg), seq});
    return;
  }
  const auto id = net_.start(msg.src, msg.dst, msg.payload.size(), clock_);
  in_network_.emplace(id, std::pair{std::move(msg), seq});
}

void SimWorld::arrive(Message msg, std::uint64_t chan_seq) {
  const Channel ch{msg.src, msg.dst, msg.tag};
  auto& next = delivered_[ch];
  if (chan_seq != next) {
    held_[ch].emplace(chan_seq, std::move(msg));
    return;
  }
  deliver(std::move(msg));
  ++next;
  auto it = held_.find(ch);
  if (it == held_.end()) return;
  auto& q = it->second;
  while (!q.empty() && q.begin()->first == next) {
    deliver(std::move(q.begin()->second));
    q.erase(q.begin());
    ++next;
  }
  if (q.empty()) held_.erase(it);
}

void SimWorld::deliver(Message msg) {
  const RankId src = msg.src;
  const RankId dst = msg.dst;
  const Tag tag = msg.tag;
  eps_[static_cast<std::size_t>(dst)]->deliver(std::move(msg));
  eps_[static_cast<std::size_t>(src)]->on_delivered(dst, tag);
}

void SimWorld::yield(RankId r) {
  auto& slot = *slots_[static_cast<std::size_t>(r)];
  slot.state = State::blocked;
  back_.release();
  slot.go.acquire();
}

void SimWorld::wake(RankId r) {
  auto& slot = *slots_[static_cast<std::size_t>(r)];
  if (slot.state == State::blocked) slot.state = State::runnable;
}

void SimWorld::sleep(RankId r, double seconds) {
  auto& slot = *slots_[static_cast<std::size_t>(r)];
  slot.timer_fired = false;
  schedule(clock_ + seconds, Event{true, r, {}});
  while (!slot.timer_fired) {
    yield(r);
    if (!slot.timer_fired && eps_[static_cast<std::size_t>(r)]->closed()) {
      fail(Errc::closed, "rank " + std::to_string(r) + " closed while computing");
    }
  }
}

void SimWorld::abort_all(Errc reason, const std::string& detail) {
  aborted_ = true;
  for (auto& ep : eps_) ep->close(reason, detail);
  for (auto& s : slots_) {
    if (s->state == State::blocked) s->state = State::runnable;
  }
}

RunStats SimWorld::run(const std::function<void(Endpoint&)>& program) {
  for (int r = 0; r < n_; ++r) {
    auto& slot = *slots_[static_cast<std::size_t>(r)];
    slot.thread = std::thread([this, r, &program, &slot] {
      slot.go.acquire();
      try {
        program(*eps_[static_cast<std::size_t>(r)]);
      } catch (...) {
        if (!first_error_) first_error_ = std::current_exception();
      }
      slot.finish_time = clock_;
      slot.state = State::done;
      back_.release();
    });
  }

  for (;;) {
    bool ran = true;
    while (ran) {
      ran = false;
      for (auto& sp : slots_) {
        if (sp->state != State::runnable) continue;
        sp->state = State::running;
        sp->go.release();
        back_.acquire();
        ran = true;
        if (first_error_ && !aborted_) abort_all(Errc::closed, "a peer rank failed");
      }
    }

    bool all_done = true;
    for (auto& sp : slots_) all_done = all_done && sp->state == State::done;
    if (all_done) break;

    const auto net_next = net_.next_completion();
    const double ev_next = events_.empty() ? std::numeric_limits<double>::infinity() : events_.begin()->first.first;
    if (!net_next && events_.empty()) {
      abort_all(Errc::deadlock_detected, "no runnable rank and no pending event at t=" + std::to_string(clock_));
      continue;
    }

    if (net_next && *net_next <= ev_next) {
      clock_ = *net_next;
      for (auto id : net_.complete_next()) {
        auto node = in_network_.extract(id);
        auto [msg, seq] = std::move(node.mapped());
        const double t = clock_ + net_.path_latency(msg.src, msg.dst);
        schedule(t, Event{false, 0, std::move(msg), seq});
      }
      continue;
    }

    auto node = events_.extract(events_.begin());
    clock_ = node.key().first;
    Event ev = std::move(node.mapped());
    if (ev.is_timer) {
      auto& slot = *slots_[static_cast<std::size_t>(ev.rank)];
      slot.timer_fired = true;
      wake(ev.rank);
    } else {
      arrive(std::move(ev.msg), ev.chan_seq);
    }
  }

  for (auto& s : slots_) s->thread.join();
  if (first_error_) std::rethrow_exception(first_error_);

  RunStats stats;
  for (auto& s : slots_) stats.elapsed_s = std::max(stats.elapsed_s, s->finish_time);
  stats.network_flows = net_.flows_started();
  for (auto& ep : eps_) stats.messages += ep->messages_sent();
  return stats;
}

}  // namespace dtrain::detail
