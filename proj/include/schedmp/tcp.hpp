// Copyright (c) 2026 The schedmp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <array>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "schedmp/transport.hpp"
#include "schedmp/types.hpp"

namespace schedmp {

// Frame layout, little-endian:
//   magic u32 (0x53434845), context u32, src u32, dst u32, tag i32,
//   dtype u32, payload_len u64, then payload bytes.
inline constexpr std::uint32_t k_frame_magic = 0x53434845u;  // "SCHE"
inline constexpr std::size_t k_frame_header_len = 32;

namespace detail {

inline void store_le32(std::byte* p, std::uint32_t v) {
  p[0] = static_cast<std::byte>(v & 0xff);
  p[1] = static_cast<std::byte>((v >> 8) & 0xff);
  p[2] = static_cast<std::byte>((v >> 16) & 0xff);
  p[3] = static_cast<std::byte>((v >> 24) & 0xff);
}

inline void store_le64(std::byte* p, std::uint64_t v) {
  store_le32(p, static_cast<std::uint32_t>(v & 0xffffffffu));
  store_le32(p + 4, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint32_t load_le32(const std::byte* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint64_t load_le64(const std::byte* p) {
  return static_cast<std::uint64_t>(load_le32(p)) |
         (static_cast<std::uint64_t>(load_le32(p + 4)) << 32);
}

}  // namespace detail

inline void encode_frame_header(const envelope& env, std::byte* out) {
  detail::store_le32(out + 0, k_frame_magic);
  detail::store_le32(out + 4, env.context);
  detail::store_le32(out + 8, env.src);
  detail::store_le32(out + 12, env.dst);
  detail::store_le32(out + 16, static_cast<std::uint32_t>(env.tag));
  detail::store_le32(out + 20, static_cast<std::uint32_t>(env.dtype));
  detail::store_le64(out + 24, env.payload_len);
}

inline std::vector<std::byte> encode_frame(const envelope& env,
                                           std::span<const std::byte> payload) {
  std::vector<std::byte> buf(k_frame_header_len + payload.size());
  encode_frame_header(env, buf.data());
  if (!payload.empty()) {
    std::memcpy(buf.data() + k_frame_header_len, payload.data(), payload.size());
  }
  return buf;
}

inline envelope decode_frame_header(std::span<const std::byte> hdr) {
  if (hdr.size() < k_frame_header_len) {
    throw_error(errc::invalid_argument, "short frame header");
  }
  if (detail::load_le32(hdr.data()) != k_frame_magic) {
    throw_error(errc::invalid_argument, "bad frame magic");
  }
  envelope env;
  env.context = detail::load_le32(hdr.data() + 4);
  env.src = detail::load_le32(hdr.data() + 8);
  env.dst = detail::load_le32(hdr.data() + 12);
  env.tag = static_cast<tag_t>(detail::load_le32(hdr.data() + 16));
  env.dtype = static_cast<datatype>(detail::load_le32(hdr.data() + 20));
  env.payload_len = detail::load_le64(hdr.data() + 24);
  return env;
}

namespace detail {

class socket_fd {
 public:
  socket_fd() = default;
  explicit socket_fd(int fd) : m_fd(fd) {}
  socket_fd(socket_fd&& o) noexcept : m_fd(o.m_fd) { o.m_fd = -1; }
  socket_fd& operator=(socket_fd&& o) noexcept {
    if (this != &o) {
      reset();
      m_fd = o.m_fd;
      o.m_fd = -1;
    }
    return *this;
  }
  socket_fd(const socket_fd&) = delete;
  socket_fd& operator=(const socket_fd&) = delete;
  ~socket_fd() { reset(); }

  void reset() {
    if (m_fd >= 0) {
      ::close(m_fd);
      m_fd = -1;
    }
  }

  int get() const noexcept { return m_fd; }
  bool valid() const noexcept { return m_fd >= 0; }

 private:
  int m_fd = -1;
};

inline bool write_all(int fd, const std::byte* data, std::size_t len) {
  std::size_t off = 0;
  while (off < len) {
    ssize_t n = ::send(fd, data + off, len - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    off += static_cast<std::size_t>(n);
  }
  return true;
}

// Returns bytes read; < len means EOF (or error) hit first.
inline std::size_t read_all(int fd, std::byte* data, std::size_t len) {
  std::size_t off = 0;
  while (off < len) {
    ssize_t n = ::recv(fd, data + off, len - off, 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      return off;
    }
    if (n == 0) return off;
    off += static_cast<std::size_t>(n);
  }
  return off;
}

}  // namespace detail

struct tcp_address {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

inline tcp_address parse_tcp_address(const std::string& s) {
  auto pos = s.rfind(':');
  if (pos == std::string::npos) {
    throw_error(errc::invalid_argument, "address must be host:port, got " + s);
  }
  tcp_address a;
  a.host = s.substr(0, pos);
  a.port = static_cast<std::uint16_t>(std::stoul(s.substr(pos + 1)));
  return a;
}

// One rank's TCP endpoint: a listening socket, one eager outbound connection
// per peer (ordered pair, this rank as source) and one reader thread per
// inbound connection. Self-sends bypass the sockets through the local queue.
class tcp_endpoint final : public transport_endpoint {
 public:
  tcp_endpoint(rank_t rank, rank_t world_size, const tcp_address& bind_addr)
      : m_rank(rank), m_size(world_size) {
    m_listen = detail::socket_fd(::socket(AF_INET, SOCK_STREAM, 0));
    if (!m_listen.valid()) throw_error(errc::bind_failure, "socket() failed");
    int one = 1;
    ::setsockopt(m_listen.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(bind_addr.port);
    if (::inet_pton(AF_INET, bind_addr.host.c_str(), &sa.sin_addr) != 1) {
      throw_error(errc::bind_failure, "bad bind host " + bind_addr.host);
    }
    if (::bind(m_listen.get(), reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0) {
      throw_error(errc::bind_failure,
                  "bind to " + bind_addr.host + ":" + std::to_string(bind_addr.port) +
                      " failed: " + std::strerror(errno));
    }
    if (::listen(m_listen.get(), static_cast<int>(world_size) + 1) != 0) {
      throw_error(errc::bind_failure, "listen failed");
    }
    sockaddr_in bound{};
    socklen_t blen = sizeof(bound);
    ::getsockname(m_listen.get(), reinterpret_cast<sockaddr*>(&bound), &blen);
    m_bound_port = ntohs(bound.sin_port);
  }

  ~tcp_endpoint() override {
    close_outbound();
    // Force blocked readers out of recv(); the peer may never close its side.
    {
      std::lock_guard<std::mutex> lk(m_state_mu);
      m_teardown = true;
      for (auto& c : m_inbound_conns) {
        if (c->fd.valid()) ::shutdown(c->fd.get(), SHUT_RDWR);
      }
    }
    m_listen.reset();  // unblocks accept()
    if (m_accept_thread.joinable()) m_accept_thread.join();
    for (auto& c : m_inbound_conns) {
      if (c->thread.joinable()) c->thread.join();
    }
  }

  std::uint16_t bound_port() const noexcept { return m_bound_port; }

  // Establishes the full mesh. Every rank must already be bound and listening.
  void connect_mesh(const std::vector<tcp_address>& addresses) {
    if (addresses.size() != m_size) {
      throw_error(errc::invalid_argument, "address list size != world size");
    }
    const rank_t n_peers = m_size - 1;
    m_open_inbound.store(n_peers, std::memory_order_release);
    if (n_peers > 0) {
      m_accept_thread = std::thread([this, n_peers] { accept_loop(n_peers); });
    } else {
      std::lock_guard<std::mutex> lk(m_drain_mu);
      m_drained = true;
    }

    m_peers.clear();
    for (rank_t r = 0; r < m_size; ++r) m_peers.push_back(std::make_unique<peer>());
    for (rank_t r = 0; r < m_size; ++r) {
      if (r == m_rank) continue;
      m_peers[r]->fd = connect_with_retry(addresses[r]);
    }
  }

  void send(const envelope& env, std::span<const std::byte> payload) override {
    validate_envelope(env, m_size);
    if (payload.size() != env.payload_len) {
      throw_error(errc::invalid_argument, "payload size does not match envelope");
    }
    if (m_closed.load(std::memory_order_acquire)) {
      throw_error(errc::transport_closed, "send after transport close");
    }
    if (env.dst == m_rank) {
      frame f;
      f.env = env;
      f.payload.assign(payload.begin(), payload.end());
      m_inbound.push(std::move(f));
      m_sent.fetch_add(1, std::memory_order_relaxed);
      return;
    }
    auto buf = encode_frame(env, payload);
    peer& p = *m_peers.at(env.dst);
    std::lock_guard<std::mutex> lk(p.write_mu);
    if (!p.fd.valid()) throw_error(errc::transport_closed, "peer connection closed");
    if (!detail::write_all(p.fd.get(), buf.data(), buf.size())) {
      throw_error(errc::transport_closed, "peer write failed: " + std::string(std::strerror(errno)));
    }
    m_sent.fetch_add(1, std::memory_order_relaxed);
  }

  std::optional<frame> poll() override { return m_inbound.pop(); }

  void set_arrival_callback(std::function<void()> cb) override {
    m_inbound.set_arrival_callback(std::move(cb));
  }

  void close_outbound() override {
    bool was = m_closed.exchange(true, std::memory_order_acq_rel);
    if (was) return;
    for (auto& p : m_peers) {
      std::lock_guard<std::mutex> lk(p->write_mu);
      if (p->fd.valid()) {
        ::shutdown(p->fd.get(), SHUT_WR);
      }
    }
  }

  void wait_inbound_drained() override {
    std::unique_lock<std::mutex> lk(m_drain_mu);
    m_drain_cv.wait(lk, [this] { return m_drained; });
  }

  std::uint64_t frames_sent() const override { return m_sent.load(std::memory_order_relaxed); }
  std::uint64_t frames_delivered() const override { return m_inbound.delivered(); }

 private:
  struct peer {
    detail::socket_fd fd;
    std::mutex write_mu;
  };

  struct inbound_conn {
    detail::socket_fd fd;
    std::thread thread;
  };

  void accept_loop(rank_t expected) {
    for (rank_t i = 0; i < expected; ++i) {
      int fd = ::accept(m_listen.get(), nullptr, nullptr);
      if (fd < 0) {
        // Listener torn down mid-run; account for the connections that will
        // never arrive so drain cannot hang.
        std::lock_guard<std::mutex> lk(m_drain_mu);
        m_open_inbound.fetch_sub(expected - i, std::memory_order_acq_rel);
        if (m_open_inbound.load(std::memory_order_acquire) == 0) {
          m_drained = true;
          m_drain_cv.notify_all();
        }
        return;
      }
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      std::lock_guard<std::mutex> lk(m_state_mu);
      if (m_teardown) {
        ::close(fd);
        continue;
      }
      auto conn = std::make_unique<inbound_conn>();
      conn->fd = detail::socket_fd(fd);
      inbound_conn* raw = conn.get();
      conn->thread = std::thread([this, raw] { reader_loop(raw->fd.get()); });
      m_inbound_conns.push_back(std::move(conn));
    }
  }

  void reader_loop(int fd) {
    try {
      std::array<std::byte, k_frame_header_len> hdr;
      for (;;) {
        std::size_t got = detail::read_all(fd, hdr.data(), hdr.size());
        if (got == 0) break;  // clean EOF between frames
        if (got < hdr.size()) break;  // peer died mid-frame; nothing to salvage
        frame f;
        f.env = decode_frame_header(hdr);
        if (f.env.payload_len > (1ull << 30)) break;  // corrupt length, drop the stream
        f.payload.resize(f.env.payload_len);
        if (detail::read_all(fd, f.payload.data(), f.payload.size()) < f.payload.size()) {
          break;
        }
        m_inbound.push(std::move(f));
      }
    } catch (...) {
      // bad magic or a mid-stream protocol violation: drop the connection
    }
    std::lock_guard<std::mutex> lk(m_drain_mu);
    if (m_open_inbound.fetch_sub(1, std::memory_order_acq_rel) == 1) {
      m_drained = true;
      m_drain_cv.notify_all();
    }
  }

  detail::socket_fd connect_with_retry(const tcp_address& addr) {
    using clock = std::chrono::steady_clock;
    const auto deadline = clock::now() + std::chrono::seconds(10);
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(addr.port);
    if (::inet_pton(AF_INET, addr.host.c_str(), &sa.sin_addr) != 1) {
      throw_error(errc::bind_failure, "bad peer host " + addr.host);
    }
    for (;;) {
      detail::socket_fd fd(::socket(AF_INET, SOCK_STREAM, 0));
      if (!fd.valid()) throw_error(errc::bind_failure, "socket() failed");
      if (::connect(fd.get(), reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) == 0) {
        int one = 1;
        ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        return fd;
      }
      if (clock::now() >= deadline) {
        throw_error(errc::bind_failure,
                    "connect to " + addr.host + ":" + std::to_string(addr.port) + " failed: " +
                        std::strerror(errno));
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  }

  rank_t m_rank;
  rank_t m_size;
  std::uint16_t m_bound_port = 0;
  detail::socket_fd m_listen;
  std::vector<std::unique_ptr<peer>> m_peers;
  detail::inbound_queue m_inbound;
  std::thread m_accept_thread;
  std::mutex m_state_mu;
  std::vector<std::unique_ptr<inbound_conn>> m_inbound_conns;
  bool m_teardown = false;
  std::atomic<bool> m_closed{false};
  std::atomic<std::uint64_t> m_sent{0};
  std::atomic<rank_t> m_open_inbound{0};
  std::mutex m_drain_mu;
  std::condition_variable m_drain_cv;
  bool m_drained = false;
};

}  // namespace schedmp
