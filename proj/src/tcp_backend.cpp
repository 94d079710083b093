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

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <mutex>
#include <thread>

#include "backends.hpp"

namespace dtrain {

namespace {

void put_le(std::uint8_t* p, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint64_t get_le(const std::uint8_t* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t{p[i]} << (8 * i);
  return v;
}

}  // namespace

Bytes encode_tcp_frame(const Message& msg) {
  Bytes frame(kTcpHeaderBytes + msg.payload.size());
  put_le(frame.data(), msg.payload.size(), 8);
  put_le(frame.data() + 8, static_cast<std::uint32_t>(msg.src), 4);
  put_le(frame.data() + 12, static_cast<std::uint32_t>(msg.dst), 4);
  put_le(frame.data() + 16, msg.tag, 4);
  std::copy(msg.payload.begin(), msg.payload.end(), frame.begin() + kTcpHeaderBytes);
  return frame;
}

std::pair<std::uint64_t, Message> decode_tcp_header(std::span<const std::uint8_t> header) {
  if (header.size() < kTcpHeaderBytes) fail(Errc::format_error, "short tcp frame header");
  Message msg;
  const auto len = get_le(header.data(), 8);
  msg.src = static_cast<RankId>(get_le(header.data() + 8, 4));
  msg.dst = static_cast<RankId>(get_le(header.data() + 12, 4));
  msg.tag = static_cast<Tag>(get_le(header.data() + 16, 4));
  return {len, std::move(msg)};
}

std::vector<std::string> read_hostfile(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io_error, "cannot open hostfile " + path);
  std::vector<std::string> hosts;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (line.find(':') == std::string::npos) fail(Errc::format_error, "hostfile entry without port: " + line);
    hosts.push_back(line);
  }
  return hosts;
}

namespace detail {
namespace {

std::pair<std::string, std::string> split_host(const std::string& entry) {
  const auto colon = entry.rfind(':');
  if (colon == std::string::npos) fail(Errc::format_error, "expected host:port, got " + entry);
  return {entry.substr(0, colon), entry.substr(colon + 1)};
}

bool write_all(int fd, const std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, p, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    p += w;
    n -= static_cast<std::size_t>(w);
  }
  return true;
}

bool read_all(int fd, std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    const ssize_t r = ::recv(fd, p, n, 0);
    if (r == 0) return false;
    if (r < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    p += r;
    n -= static_cast<std::size_t>(r);
  }
  return true;
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

void abortive_close(int fd) {
  if (fd < 0) return;
  linger lg{1, 0};
  ::setsockopt(fd, SOL_SOCKET, SO_LINGER, &lg, sizeof(lg));
  ::close(fd);
}

int listen_on(const std::string& host, const std::string& port, int backlog) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.empty() ? nullptr : host.c_str(), port.c_str(), &hints, &res) != 0 || !res) {
    fail(Errc::io_error, "cannot resolve " + host + ":" + port);
  }
  const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  const bool ok = fd >= 0 && ::bind(fd, res->ai_addr, res->ai_addrlen) == 0 && ::listen(fd, backlog) == 0;
  ::freeaddrinfo(res);
  if (!ok) {
    const std::string why = std::strerror(errno);
    if (fd >= 0) ::close(fd);
    fail(Errc::io_error, "cannot listen on " + host + ":" + port + ": " + why);
  }
  return fd;
}

int connect_with_retry(const std::string& entry, double timeout_s) {
  const auto [host, port] = split_host(entry);
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
  for (;;) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), port.c_str(), &hints, &res) == 0 && res) {
      const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
      const bool ok = fd >= 0 && ::connect(fd, res->ai_addr, res->ai_addrlen) == 0;
      ::freeaddrinfo(res);
      if (ok) {
        set_nodelay(fd);
        return fd;
      }
      if (fd >= 0) ::close(fd);
    }
    if (std::chrono::steady_clock::now() >= deadline) {
      fail(Errc::peer_unreachable, "cannot connect to " + entry);
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
}

class TcpEndpoint final : public CvEndpoint {
 public:
  TcpEndpoint(RankId rank, const std::vector<std::string>& hosts, TransportOptions options, Clock::time_point epoch,
              int listen_fd, double connect_timeout_s)
      : CvEndpoint(rank, static_cast<int>(hosts.size()), options, epoch) {
    const auto n = hosts.size();
    out_fd_.assign(n, -1);
    in_fd_.assign(n, -1);
    for (std::size_t i = 0; i < n; ++i) out_mu_.push_back(std::make_unique<std::mutex>());
    try {
      for (std::size_t peer = 0; peer < n; ++peer) {
        if (static_cast<RankId>(peer) == rank) continue;
        const int fd = connect_with_retry(hosts[peer], connect_timeout_s);
        out_fd_[peer] = fd;
        std::uint8_t hello[4];
        put_le(hello, static_cast<std::uint32_t>(rank), 4);
        if (!write_all(fd, hello, 4)) fail(Errc::peer_unreachable, "handshake to " + hosts[peer] + " failed");
      }
      for (std::size_t accepted = 0; accepted + 1 < n; ++accepted) {
        const int fd = ::accept(listen_fd, nullptr, nullptr);
        if (fd < 0) fail(Errc::peer_unreachable, std::string("accept failed: ") + std::strerror(errno));
        std::uint8_t hello[4];
        if (!read_all(fd, hello, 4)) {
          ::close(fd);
          fail(Errc::peer_unreachable, "peer hung up during handshake");
        }
        const auto peer = static_cast<std::size_t>(get_le(hello, 4));
        if (peer >= n || in_fd_[peer] >= 0 || static_cast<RankId>(peer) == rank) {
          ::close(fd);
          fail(Errc::peer_unreachable, "unexpected handshake from rank " + std::to_string(peer));
        }
        in_fd_[peer] = fd;
      }
    } catch (...) {
      for (int fd : out_fd_) abortive_close(fd);
      for (int fd : in_fd_) abortive_close(fd);
      throw;
    }
    for (std::size_t peer = 0; peer < n; ++peer) {
      if (in_fd_[peer] >= 0) readers_.emplace_back([this, peer] { read_loop(in_fd_[peer]); });
    }
  }

  ~TcpEndpoint() override { shutdown(); }

  void shutdown() {
    if (stopping_.exchange(true)) return;
    close(Errc::closed, "endpoint shut down");
    for (int fd : in_fd_) {
      if (fd >= 0) ::shutdown(fd, SHUT_RDWR);
    }
    for (auto& t : readers_) t.join();
    for (int& fd : in_fd_) {
      abortive_close(fd);
      fd = -1;
    }
    for (int& fd : out_fd_) {
      abortive_close(fd);
      fd = -1;
    }
  }

 protected:
  void transmit(Message msg) override {
    const auto dst = static_cast<std::size_t>(msg.dst);
    const Bytes frame = encode_tcp_frame(msg);
    bool ok = false;
    {
      std::lock_guard lk(*out_mu_[dst]);
      ok = out_fd_[dst] >= 0 && write_all(out_fd_[dst], frame.data(), frame.size());
    }
    if (!ok) {
      if (stopping_) fail(Errc::closed, "endpoint shut down");
      fail(Errc::peer_unreachable, "write to rank " + std::to_string(msg.dst) + " failed");
    }
    on_delivered(msg.dst, msg.tag);
  }

 private:
  void read_loop(int fd) {
    std::uint8_t header[kTcpHeaderBytes];
    while (read_all(fd, header, kTcpHeaderBytes)) {
      auto [len, msg] = decode_tcp_header(header);
      if (len > (std::uint64_t{1} << 40) || msg.dst != rank()) break;
      msg.payload.resize(static_cast<std::size_t>(len));
      if (len > 0 && !read_all(fd, msg.payload.data(), msg.payload.size())) break;
      try {
        // TODO: hand pull replies to a per-endpoint sender thread. A reader
        // blocked writing a large reply can stall a cycle of peers whose
        // readers are all writing.
        deliver(std::move(msg));
      } catch (const Error&) {
        break;
      }
    }
    if (!stopping_) close(Errc::peer_unreachable, "connection lost");
  }

  std::vector<int> out_fd_;
  std::vector<int> in_fd_;
  std::vector<std::unique_ptr<std::mutex>> out_mu_;
  std::vector<std::thread> readers_;
  std::atomic<bool> stopping_{false};
};

}  // namespace

RunStats run_tcp(int n_ranks, const RunOptions& opts, const std::function<void(Endpoint&)>& program) {
  const auto epoch = CvEndpoint::Clock::now();
  std::vector<int> listeners;
  std::vector<std::string> hosts;
  for (int r = 0; r < n_ranks; ++r) {
    const int fd = listen_on("127.0.0.1", "0", n_ranks + 4);
    sockaddr_in addr{};
    socklen_t alen = sizeof(addr);
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &alen);
    listeners.push_back(fd);
    hosts.push_back("127.0.0.1:" + std::to_string(ntohs(addr.sin_port)));
  }

  std::vector<std::unique_ptr<TcpEndpoint>> eps(static_cast<std::size_t>(n_ranks));
  std::mutex mu;
  std::exception_ptr first_error;
  std::vector<double> finish(static_cast<std::size_t>(n_ranks), 0.0);
  auto record_error = [&](int r) {
    std::lock_guard lk(mu);
    if (first_error) return;
    first_error = std::current_exception();
    for (auto& e : eps) {
      if (e) e->close(Errc::closed, "rank " + std::to_string(r) + " failed");
    }
  };

  std::vector<std::thread> threads;
  for (int r = 0; r < n_ranks; ++r) {
    threads.emplace_back([&, r] {
      const auto idx = static_cast<std::size_t>(r);
      try {
        auto ep = std::make_unique<TcpEndpoint>(r, hosts, opts.transport, epoch, listeners[idx], 30.0);
        TcpEndpoint* raw = ep.get();
        {
          std::lock_guard lk(mu);
          eps[idx] = std::move(ep);
          if (first_error) raw->close(Errc::closed, "a peer rank failed");
        }
        program(*raw);
        finish[idx] = raw->now();
      } catch (...) {
        record_error(r);
      }
    });
  }
  for (auto& t : threads) t.join();
  for (int fd : listeners) ::close(fd);

  RunStats stats;
  for (int r = 0; r < n_ranks; ++r) {
    stats.elapsed_s = std::max(stats.elapsed_s, finish[static_cast<std::size_t>(r)]);
    if (eps[static_cast<std::size_t>(r)]) stats.messages += eps[static_cast<std::size_t>(r)]->messages_sent();
  }
  for (auto& e : eps) {
    if (e) e->shutdown();
  }
  if (first_error) std::rethrow_exception(first_error);
  return stats;
}

}  // namespace detail

std::unique_ptr<Endpoint> connect_tcp(const std::vector<std::string>& hosts, RankId rank, TransportOptions options,
                                      double connect_timeout_s) {
  if (rank < 0 || static_cast<std::size_t>(rank) >= hosts.size()) {
    fail(Errc::invalid_config, "rank " + std::to_string(rank) + " not in hostfile");
  }
  const auto [host, port] = detail::split_host(hosts[static_cast<std::size_t>(rank)]);
  const int lfd = detail::listen_on(host, port, static_cast<int>(hosts.size()) + 4);
  try {
    auto ep = std::make_unique<detail::TcpEndpoint>(rank, hosts, options, detail::CvEndpoint::Clock::now(), lfd,
                                                    connect_timeout_s);
    ::close(lfd);
    return ep;
  } catch (...) {
    ::close(lfd);
    throw;
  }
}

}  // namespace dtrain
