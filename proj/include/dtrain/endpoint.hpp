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
#include <compare>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dtrain/error.hpp"
#include "dtrain/topology.hpp"

namespace dtrain {

using Tag = std::uint32_t;
using Bytes = std::vector<std::uint8_t>;

/// Application tags must stay below this; the two bits above it mark pull
/// requests and pull replies on the wire.
inline constexpr Tag kUserTagLimit = Tag{1} << 30;
inline constexpr Tag kPullReplyBit = Tag{1} << 30;
inline constexpr Tag kPullRequestBit = Tag{1} << 31;

struct Message {
  RankId src = 0;
  RankId dst = 0;
  Tag tag = 0;
  Bytes payload;
};

struct ChannelKey {
  RankId src = 0;
  Tag tag = 0;

  auto operator<=>(const ChannelKey&) const = default;
};

struct TransportOptions {
  std::size_t max_segment_bytes = std::size_t{4} << 20;
  /// Undelivered messages allowed per (destination, tag) before send blocks.
  int inflight_budget = 16;
  /// Real backends only: how long pull() waits for the peer to expose.
  double pull_timeout_s = 30.0;
  /// Real backends only: any other blocking wait longer than this is
  /// reported as a suspected deadlock.
  double wait_timeout_s = 300.0;
};

/// Point-to-point messaging for one rank. Messages on a fixed
/// (src, dst, tag) channel are delivered in send order.
///
/// Pull model: a rank exposes bytes under a tag, and peers pull them. The
/// exposure is served by the transport at delivery time (as an RDMA read
/// would be), not by the owner's program, so an owner may expose and move on.
/// Exposures under the same tag are served first-in first-out, each to
/// `readers` pullers. A pull that arrives before the matching expose waits
/// at the owner.
class Endpoint {
 public:
  Endpoint(RankId rank, int n_ranks, TransportOptions options);
  virtual ~Endpoint();

  Endpoint(const Endpoint&) = delete;
  Endpoint& operator=(const Endpoint&) = delete;

  RankId rank() const noexcept { return rank_; }
  int size() const noexcept { return n_ranks_; }
  const TransportOptions& options() const noexcept { return options_; }

  void send(RankId dst, Tag tag, Bytes payload);
  Bytes recv(RankId src, Tag tag);
  std::optional<Bytes> try_recv(RankId src, Tag tag);
  bool probe(RankId src, Tag tag);
  /// Blocks until one of `keys` has a queued message; returns its index.
  std::size_t wait_any(std::span<const ChannelKey> keys);

  void expose(Tag tag, Bytes payload, int readers = 1);
  /// Zero-copy exposure. The caller keeps `view` alive and unmodified until
  /// every reader has been served; wait_exposures_drained() waits for that.
  void expose_view(Tag tag, std::span<const std::uint8_t> view, int readers = 1);
  void wait_exposures_drained();

  Bytes pull(RankId src, Tag tag, std::size_t expected_len);
  void post_pull(RankId src, Tag tag);
  /// Waits for the reply to an earlier post_pull(src, tag).
  Bytes wait_pull(RankId src, Tag tag);
  /// Channel on which the reply to post_pull(src, tag) arrives.
  static ChannelKey pull_key(RankId src, Tag tag) { return {src, tag | kPullReplyBit}; }

  /// Seconds: virtual on the simulated backend, wall clock otherwise.
  virtual double now() const = 0;
  /// Charges host-side work. The simulated backend advances this rank's
  /// virtual time; real backends do nothing (the work already took time).
  virtual void compute(double seconds) = 0;
  /// Charges a host memory copy of `bytes`; simulated backend only.
  virtual void charge_copy(std::uint64_t bytes) { (void)bytes; }
  /// Wakes every blocked call; they fail with `reason`.
  void close(Errc reason = Errc::closed, std::string detail = "endpoint closed");
  bool closed() const;

  /// Messages handed to the transport so far (pull replies included).
  std::uint64_t messages_sent() const noexcept { return messages_sent_; }

  /// Entry point for the backend: a message has arrived at this endpoint.
  void deliver(Message msg);
  /// Backend notification that a message this endpoint sent was delivered.
  void on_delivered(RankId dst, Tag tag);

 protected:
  enum class WaitKind { message, pull, credit, drain };

  /// Moves a message toward msg.dst. Must not block on the destination's
  /// program.
  virtual void transmit(Message msg) = 0;
  /// Blocks until ready() holds (evaluated with mu_ held via lk). Returns
  /// false on timeout; throws Errc::closed once closed.
  virtual bool block_until(std::unique_lock<std::mutex>& lk, const std::function<bool()>& ready,
                           WaitKind kind) = 0;
  /// Called with mu_ held whenever something a blocked caller may wait on
  /// changed.
  virtual void notify_locked() = 0;

  void check_peer(RankId peer, const char* what) const;

  mutable std::mutex mu_;

 private:
  struct Exposure {
    std::variant<Bytes, std::span<const std::uint8_t>> data;
    int readers;
    bool is_view;
  };
  /// Exposures and parked pull requests under one tag. A requester is never
  /// served the same exposure twice: each pull gets the oldest exposure with
  /// readers left that comes after the one it was served last.
  struct PullState {
    std::deque<Exposure> queue;
    std::uint64_t front_seq = 0;
    std::map<RankId, std::uint64_t> next;
    std::deque<RankId> parked;
  };

  Bytes copy_exposure(const Exposure& e) const;
  /// Serves parked requests for `tag`; returns replies to transmit after
  /// releasing mu_.
  std::vector<Message> serve_locked(Tag tag);
  void wait_or_throw(std::unique_lock<std::mutex>& lk, const std::function<bool()>& ready, WaitKind kind,
                     const char* what);

  RankId rank_;
  int n_ranks_;
  TransportOptions options_;
  bool closed_ = false;
  Errc close_reason_ = Errc::closed;
  std::string close_detail_;
  std::map<ChannelKey, std::deque<Bytes>> mailbox_;
  std::map<Tag, PullState> pulls_;
  std::size_t live_views_ = 0;
  std::map<std::pair<RankId, Tag>, int> inflight_;
  std::atomic<std::uint64_t> messages_sent_{0};
};

/// A view of an endpoint restricted to an ordered subset of ranks. Ranks
/// passed to and returned from a Comm are local indices into `members`.
class Comm {
 public:
  explicit Comm(Endpoint& ep);
  Comm(Endpoint& ep, std::vector<RankId> members);

  int rank() const noexcept { return local_rank_; }
  int size() const noexcept { return static_cast<int>(members_.size()); }
  RankId global(int local) const { return members_.at(static_cast<std::size_t>(local)); }
  const std::vector<RankId>& members() const noexcept { return members_; }
  Endpoint& endpoint() const noexcept { return *ep_; }

  void send(int dst, Tag tag, Bytes payload) { ep_->send(global(dst), tag, std::move(payload)); }
  Bytes recv(int src, Tag tag) { return ep_->recv(global(src), tag); }
  std::optional<Bytes> try_recv(int src, Tag tag) { return ep_->try_recv(global(src), tag); }
  bool probe(int src, Tag tag) { return ep_->probe(global(src), tag); }
  /// Keys use global ranks; build them with key()/pull_key().
  std::size_t wait_any(std::span<const ChannelKey> keys) { return ep_->wait_any(keys); }
  ChannelKey key(int src, Tag tag) const { return {global(src), tag}; }
  ChannelKey pull_key(int src, Tag tag) const { return Endpoint::pull_key(global(src), tag); }

  void expose(Tag tag, Bytes payload, int readers = 1) { ep_->expose(tag, std::move(payload), readers); }
  void expose_view(Tag tag, std::span<const std::uint8_t> view, int readers = 1) {
    ep_->expose_view(tag, view, readers);
  }
  void wait_exposures_drained() { ep_->wait_exposures_drained(); }
  Bytes pull(int src, Tag tag, std::size_t expected_len) { return ep_->pull(global(src), tag, expected_len); }
  void post_pull(int src, Tag tag) { ep_->post_pull(global(src), tag); }
  Bytes wait_pull(int src, Tag tag) { return ep_->wait_pull(global(src), tag); }
  std::optional<Bytes> try_pull(int src, Tag tag) {
    return ep_->try_recv(global(src), tag | kPullReplyBit);
  }

  double now() const { return ep_->now(); }
  void compute(double seconds) { ep_->compute(seconds); }
  void charge_copy(std::uint64_t bytes) { ep_->charge_copy(bytes); }

 private:
  Endpoint* ep_;
  std::vector<RankId> members_;
  int local_rank_ = -1;
};

}  // namespace dtrain
