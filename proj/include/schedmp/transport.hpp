// Copyright (c) 2026 The schedmp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <cstring>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "schedmp/types.hpp"

namespace schedmp {

struct frame {
  envelope env;
  std::vector<std::byte> payload;
};

// One rank's view of the message fabric. send() is callable from the
// application thread and progress threads of the same rank; poll() is called
// only by that rank's progress engine. Streams are FIFO per
// (src, dst, context, tag).
class transport_endpoint {
 public:
  virtual ~transport_endpoint() = default;

  virtual void send(const envelope& env, std::span<const std::byte> payload) = 0;
  virtual std::optional<frame> poll() = 0;

  // Invoked after a frame becomes available to poll(); used by the engine to
  // sleep without missing arrivals.
  virtual void set_arrival_callback(std::function<void()> cb) = 0;

  // Stops accepting outbound traffic. Inbound frames already in flight are
  // still delivered.
  virtual void close_outbound() = 0;

  // Blocks until every peer's outbound side has been closed and drained into
  // the local inbound queue (no-op for transports with synchronous delivery).
  virtual void wait_inbound_drained() = 0;

  virtual std::uint64_t frames_sent() const = 0;
  virtual std::uint64_t frames_delivered() const = 0;
};

class inproc_fabric;

namespace detail {

// Per-rank inbound queue shared by the in-process fabric and the TCP receiver.
class inbound_queue {
 public:
  void push(frame&& f) {
    {
      std::lock_guard<std::mutex> lk(m_mu);
      m_frames.push_back(std::move(f));
    }
    std::function<void()> cb;
    {
      std::lock_guard<std::mutex> lk(m_cb_mu);
      cb = m_on_arrival;
    }
    if (cb) cb();
  }

  std::optional<frame> pop() {
    std::lock_guard<std::mutex> lk(m_mu);
    if (m_frames.empty()) return std::nullopt;
    frame f = std::move(m_frames.front());
    m_frames.pop_front();
    m_delivered.fetch_add(1, std::memory_order_relaxed);
    return f;
  }

  void set_arrival_callback(std::function<void()> cb) {
    std::lock_guard<std::mutex> lk(m_cb_mu);
    m_on_arrival = std::move(cb);
  }

  std::uint64_t delivered() const { return m_delivered.load(std::memory_order_relaxed); }

 private:
  std::mutex m_mu;
  std::deque<frame> m_frames;
  std::mutex m_cb_mu;
  std::function<void()> m_on_arrival;
  std::atomic<std::uint64_t> m_delivered{0};
};

}  // namespace detail

// Shared state for a world of in-process ranks: one inbound queue per rank.
class inproc_fabric {
 public:
  explicit inproc_fabric(rank_t size) : m_size(size), m_queues(size) {}

  rank_t size() const noexcept { return m_size; }

  detail::inbound_queue& queue(rank_t r) { return m_queues.at(r); }

 private:
  rank_t m_size;
  std::vector<detail::inbound_queue> m_queues;
};

class inproc_endpoint final : public transport_endpoint {
 public:
  inproc_endpoint(std::shared_ptr<inproc_fabric> fabric, rank_t rank)
      : m_fabric(std::move(fabric)), m_rank(rank) {}

  void send(const envelope& env, std::span<const std::byte> payload) override {
    validate_envelope(env, m_fabric->size());
    if (payload.size() != env.payload_len) {
      throw_error(errc::invalid_argument, "payload size does not match envelope");
    }
    if (m_closed.load(std::memory_order_acquire)) {
      throw_error(errc::transport_closed, "send after transport close");
    }
    frame f;
    f.env = env;
    f.payload.assign(payload.begin(), payload.end());
    m_fabric->queue(env.dst).push(std::move(f));
    m_sent.fetch_add(1, std::memory_order_relaxed);
  }

  std::optional<frame> poll() override { return m_fabric->queue(m_rank).pop(); }

  void set_arrival_callback(std::function<void()> cb) override {
    m_fabric->queue(m_rank).set_arrival_callback(std::move(cb));
  }

  void close_outbound() override { m_closed.store(true, std::memory_order_release); }

  void wait_inbound_drained() override {}  // delivery is synchronous

  std::uint64_t frames_sent() const override { return m_sent.load(std::memory_order_relaxed); }
  std::uint64_t frames_delivered() const override { return m_fabric->queue(m_rank).delivered(); }

 private:
  std::shared_ptr<inproc_fabric> m_fabric;
  rank_t m_rank;
  std::atomic<bool> m_closed{false};
  std::atomic<std::uint64_t> m_sent{0};
};

}  // namespace schedmp
