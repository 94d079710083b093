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

#include "dtrain/endpoint.hpp"

#include <algorithm>
#include <cstring>
#include <string>

#include "dtrain/error.hpp"

namespace dtrain {

Endpoint::Endpoint(RankId rank, int n_ranks, TransportOptions options)
    : rank_(rank), n_ranks_(n_ranks), options_(options) {
  if (n_ranks < 1 || rank < 0 || rank >= n_ranks) {
    fail(Errc::invalid_config, "endpoint rank " + std::to_string(rank) + " of " + std::to_string(n_ranks));
  }
  if (options.inflight_budget < 1) fail(Errc::invalid_config, "in-flight budget must be >= 1");
  if (options.max_segment_bytes == 0) fail(Errc::invalid_config, "max segment size must be > 0");
}

Endpoint::~Endpoint() = default;

void Endpoint::check_peer(RankId peer, const char* what) const {
  if (peer < 0 || peer >= n_ranks_) {
    fail(Errc::invalid_config, std::string(what) + ": peer " + std::to_string(peer) + " out of range");
  }
  if (peer == rank_) fail(Errc::invalid_config, std::string(what) + ": peer is self");
}

namespace {
void check_tag(Tag tag) {
  if (tag >= kUserTagLimit) fail(Errc::invalid_config, "tag " + std::to_string(tag) + " uses reserved bits");
}
}  // namespace

void Endpoint::wait_or_throw(std::unique_lock<std::mutex>& lk, const std::function<bool()>& ready,
                             WaitKind kind, const char* what) {
  auto ready_or_closed = [&] { return closed_ || ready(); };
  const bool ok = block_until(lk, ready_or_closed, kind);
  if (ok && ready()) return;
  if (closed_) fail(close_reason_, std::string(what) + " on rank " + std::to_string(rank_) + ": " + close_detail_);
  if (kind == WaitKind::pull) {
    fail(Errc::not_exposed, std::string(what) + ": nothing exposed within " +
                                std::to_string(options_.pull_timeout_s) + " s");
  }
  fail(Errc::deadlock_detected, std::string(what) + ": no progress within " +
                                    std::to_string(options_.wait_timeout_s) + " s on rank " +
                                    std::to_string(rank_));
}

void Endpoint::send(RankId dst, Tag tag, Bytes payload) {
  check_peer(dst, "send");
  check_tag(tag);
  if (payload.size() > options_.max_segment_bytes) {
    fail(Errc::invalid_config, "payload of " + std::to_string(payload.size()) + " bytes exceeds segment size " +
                                   std::to_string(options_.max_segment_bytes));
  }
  {
    std::unique_lock lk(mu_);
    const auto key = std::make_pair(dst, tag);
    wait_or_throw(lk, [&] { return inflight_[key] < options_.inflight_budget; }, WaitKind::credit, "send");
    ++inflight_[key];
    ++messages_sent_;
  }
  transmit(Message{rank_, dst, tag, std::move(payload)});
}

void Endpoint::on_delivered(RankId dst, Tag tag) {
  std::lock_guard lk(mu_);
  auto it = inflight_.find({dst, tag});
  if (it == inflight_.end() || it->second == 0) return;
  if (--it->second == 0) inflight_.erase(it);
  notify_locked();
}

Bytes Endpoint::recv(RankId src, Tag tag) {
  std::unique_lock lk(mu_);
  const ChannelKey key{src, tag};
  wait_or_throw(lk, [&] {
    auto it = mailbox_.find(key);
    return it != mailbox_.end() && !it->second.empty();
  }, WaitKind::message, "recv");
  auto it = mailbox_.find(key);
  Bytes out = std::move(it->second.front());
  it->second.pop_front();
  if (it->second.empty()) mailbox_.erase(it);
  return out;
}

std::optional<Bytes> Endpoint::try_recv(RankId src, Tag tag) {
  std::lock_guard lk(mu_);
  auto it = mailbox_.find({src, tag});
  if (it == mailbox_.end() || it->second.empty()) return std::nullopt;
  Bytes out = std::move(it->second.front());
  it->second.pop_front();
  if (it->second.empty()) mailbox_.erase(it);
  return out;
}

bool Endpoint::probe(RankId src, Tag tag) {
  std::lock_guard lk(mu_);
  auto it = mailbox_.find({src, tag});
  return it != mailbox_.end() && !it->second.empty();
}

std::size_t Endpoint::wait_any(std::span<const ChannelKey> keys) {
  if (keys.empty()) fail(Errc::invalid_config, "wait_any with no channels");
  std::unique_lock lk(mu_);
  std::size_t hit = 0;
  auto ready = [&] {
    for (std::size_t i = 0; i < keys.size(); ++i) {
      auto it = mailbox_.find(keys[i]);
      if (it != mailbox_.end() && !it->second.empty()) {
        hit = i;
        return true;
      }
    }
    return false;
  };
  const bool pulls = (keys.front().tag & kPullReplyBit) != 0;
  wait_or_throw(lk, ready, pulls ? WaitKind::pull : WaitKind::message, "wait_any");
  return hit;
}

Bytes Endpoint::copy_exposure(const Exposure& e) const {
  if (const auto* owned = std::get_if<Bytes>(&e.data)) return *owned;
  const auto view = std::get<std::span<const std::uint8_t>>(e.data);
  return Bytes(view.begin(), view.end());
}

std::vector<Message> Endpoint::serve_locked(Tag tag) {
  std::vector<Message> replies;
  auto it = pulls_.find(tag);
  if (it == pulls_.end()) return replies;
  PullState& st = it->second;
  std::deque<RankId> waiting;
  std::vector<RankId> blocked;
  for (RankId requester : st.parked) {
    // Later requests from a requester wait behind its earlier ones.
    if (std::find(blocked.begin(), blocked.end(), requester) != blocked.end()) {
      waiting.push_back(requester);
      continue;
    }
    std::uint64_t seq = std::max(st.next[requester], st.front_seq);
    while (seq - st.front_seq < st.queue.size() && st.queue[seq - st.front_seq].readers == 0) ++seq;
    if (seq - st.front_seq >= st.queue.size()) {
      blocked.push_back(requester);
      waiting.push_back(requester);
      continue;
    }
    Exposure& exp = st.queue[seq - st.front_seq];
    replies.push_back(Message{rank_, requester, tag | kPullReplyBit, copy_exposure(exp)});
    ++messages_sent_;
    st.next[requester] = seq + 1;
    if (--exp.readers == 0 && exp.is_view) {
      --live_views_;
      exp.data = Bytes{};
    }
  }
  st.parked = std::move(waiting);
  while (!st.queue.empty() && st.queue.front().readers == 0) {
    st.queue.pop_front();
    ++st.front_seq;
  }
  if (st.queue.empty() && st.parked.empty()) pulls_.erase(it);
  return replies;
}

void Endpoint::expose(Tag tag, Bytes payload, int readers) {
  check_tag(tag);
  if (readers < 1) fail(Errc::invalid_config, "expose needs at least one reader");
  std::vector<Message> replies;
  {
    std::lock_guard lk(mu_);
    pulls_[tag].queue.push_back(Exposure{std::move(payload), readers, false});
    replies = serve_locked(tag);
  }
  for (auto& r : replies) transmit(std::move(r));
}

void Endpoint::expose_view(Tag tag, std::span<const std::uint8_t> view, int readers) {
  check_tag(tag);
  if (readers < 1) fail(Errc::invalid_config, "expose needs at least one reader");
  std::vector<Message> replies;
  {
    std::lock_guard lk(mu_);
    pulls_[tag].queue.push_back(Exposure{view, readers, true});
    ++live_views_;
    replies = serve_locked(tag);
  }
  for (auto& r : replies) transmit(std::move(r));
}

void Endpoint::wait_exposures_drained() {
  std::unique_lock lk(mu_);
  wait_or_throw(lk, [&] { return live_views_ == 0; }, WaitKind::drain, "wait_exposures_drained");
}

void Endpoint::post_pull(RankId src, Tag tag) {
  check_peer(src, "pull");
  check_tag(tag);
  {
    std::lock_guard lk(mu_);
    ++messages_sent_;
  }
  transmit(Message{rank_, src, tag | kPullRequestBit, {}});
}

Bytes Endpoint::wait_pull(RankId src, Tag tag) {
  const ChannelKey key = pull_key(src, tag);
  std::unique_lock lk(mu_);
  wait_or_throw(lk, [&] {
    auto it = mailbox_.find(key);
    return it != mailbox_.end() && !it->second.empty();
  }, WaitKind::pull, "pull");
  auto it = mailbox_.find(key);
  Bytes out = std::move(it->second.front());
  it->second.pop_front();
  if (it->second.empty()) mailbox_.erase(it);
  return out;
}

Bytes Endpoint::pull(RankId src, Tag tag, std::size_t expected_len) {
  post_pull(src, tag);
  Bytes out = wait_pull(src, tag);
  if (out.size() != expected_len) {
    fail(Errc::length_mismatch, "pull from " + std::to_string(src) + " returned " + std::to_string(out.size()) +
                                    " bytes, expected " + std::to_string(expected_len));
  }
  return out;
}

void Endpoint::deliver(Message msg) {
  std::vector<Message> replies;
  {
    std::lock_guard lk(mu_);
    if (closed_) return;
    if (msg.tag & kPullRequestBit) {
      const Tag tag = msg.tag & ~kPullRequestBit;
      pulls_[tag].parked.push_back(msg.src);
      replies = serve_locked(tag);
    } else {
      mailbox_[{msg.src, msg.tag}].push_back(std::move(msg.payload));
    }
    notify_locked();
  }
  for (auto& r : replies) transmit(std::move(r));
}

void Endpoint::close(Errc reason, std::string detail) {
  std::lock_guard lk(mu_);
  if (closed_) return;
  closed_ = true;
  close_reason_ = reason;
  close_detail_ = std::move(detail);
  notify_locked();
}

bool Endpoint::closed() const {
  std::lock_guard lk(mu_);
  return closed_;
}

Comm::Comm(Endpoint& ep) : ep_(&ep), local_rank_(ep.rank()) {
  members_.resize(static_cast<std::size_t>(ep.size()));
  for (int r = 0; r < ep.size(); ++r) members_[static_cast<std::size_t>(r)] = r;
}

Comm::Comm(Endpoint& ep, std::vector<RankId> members) : ep_(&ep), members_(std::move(members)) {
  for (std::size_t i = 0; i < members_.size(); ++i) {
    const RankId m = members_[i];
    if (m < 0 || m >= ep.size()) fail(Errc::invalid_config, "communicator member out of range");
    for (std::size_t j = 0; j < i; ++j) {
      if (members_[j] == m) fail(Errc::invalid_config, "duplicate communicator member");
    }
    if (m == ep.rank()) local_rank_ = static_cast<int>(i);
  }
  if (local_rank_ < 0) fail(Errc::invalid_config, "communicator does not contain the calling rank");
}

}  // namespace dtrain
