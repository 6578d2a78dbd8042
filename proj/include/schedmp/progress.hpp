// Copyright (c) 2026 The schedmp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>
#include <unordered_map>
#include <vector>

#include "schedmp/request.hpp"
#include "schedmp/transport.hpp"

namespace schedmp {

struct engine_config {
  unsigned progress_threads = 1;
};

namespace detail {

// Exact-match key; no wildcards, so every stream is FIFO by construction.
struct match_key {
  context_t context;
  rank_t src;
  tag_t tag;

  friend bool operator==(const match_key&, const match_key&) = default;
};

struct match_key_hash {
  std::size_t operator()(const match_key& k) const noexcept {
    std::uint64_t h = (static_cast<std::uint64_t>(k.context) << 32) ^
                      (static_cast<std::uint64_t>(k.src) << 16) ^
                      static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.tag));
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    return static_cast<std::size_t>(h);
  }
};

// Posted-receive and unexpected-frame queues. The check-then-move step runs
// under one lock so a (key, arrival) pair can never sit in both queues and
// per-key insertion order is preserved.
class match_table {
 public:
  // Returns the frame if one was already waiting for this receive.
  std::optional<frame> post_recv(const std::shared_ptr<request_impl>& req) {
    const match_key key{req->env.context, req->env.src, req->env.tag};
    std::lock_guard<std::mutex> lk(m_mu);
    auto it = m_unexpected.find(key);
    if (it != m_unexpected.end() && !it->second.empty()) {
      frame f = std::move(it->second.front());
      it->second.pop_front();
      if (it->second.empty()) m_unexpected.erase(it);
      return f;
    }
    m_posted[key].push_back(req);
    return std::nullopt;
  }

  // Returns the receive matching this frame and moves the frame into
  // `matched_out`; otherwise stores the frame as unexpected.
  std::shared_ptr<request_impl> accept_frame(frame&& f, frame& matched_out) {
    const match_key key{f.env.context, f.env.src, f.env.tag};
    std::lock_guard<std::mutex> lk(m_mu);
    auto it = m_posted.find(key);
    if (it != m_posted.end() && !it->second.empty()) {
      std::shared_ptr<request_impl> req = std::move(it->second.front());
      it->second.pop_front();
      if (it->second.empty()) m_posted.erase(it);
      matched_out = std::move(f);
      return req;
    }
    m_unexpected[key].push_back(std::move(f));
    return nullptr;
  }

  std::size_t posted_count() const {
    std::lock_guard<std::mutex> lk(m_mu);
    std::size_t n = 0;
    for (const auto& [k, q] : m_posted) n += q.size();
    return n;
  }

  std::size_t unexpected_count() const {
    std::lock_guard<std::mutex> lk(m_mu);
    std::size_t n = 0;
    for (const auto& [k, q] : m_unexpected) n += q.size();
    return n;
  }

 private:
  mutable std::mutex m_mu;
  std::unordered_map<match_key, std::deque<std::shared_ptr<request_impl>>, match_key_hash>
      m_posted;
  std::unordered_map<match_key, std::deque<frame>, match_key_hash> m_unexpected;
};

}  // namespace detail

// Strong progress: dedicated threads per rank drive every started request to
// completion with no application calls, and completion notification blocks on
// a condition variable rather than polling.
class progress_engine {
 public:
  progress_engine(transport_endpoint& transport, event_log& log, rank_t rank,
                  const engine_config& cfg = {})
      : m_transport(transport), m_log(log), m_rank(rank), m_nthreads(std::max(1u, cfg.progress_threads)) {}

  ~progress_engine() { shutdown(); }

  void start() {
    m_transport.set_arrival_callback([this] { notify(); });
    std::lock_guard<std::mutex> lk(m_mu);
    if (m_started) return;
    m_started = true;
    for (unsigned i = 0; i < m_nthreads; ++i) {
      // Exactly one thread drains the transport; per-stream delivery order
      // would not survive concurrent frame handling. The rest work off the
      // submission queue.
      const bool poller = i == 0;
      m_threads.emplace_back([this, poller] { thread_main(poller); });
    }
  }

  // Drains outstanding work that is already completable, then stops the
  // threads. Callers are responsible for quiescing traffic first.
  void shutdown() {
    {
      std::lock_guard<std::mutex> lk(m_mu);
      m_stopping = true;
    }
    m_cv.notify_all();
    for (auto& t : m_threads) {
      if (t.joinable()) t.join();
    }
    m_threads.clear();
  }

  // First exception raised on a progress thread, if any.
  void rethrow_if_failed() {
    std::lock_guard<std::mutex> lk(m_error_mu);
    if (m_first_error) std::rethrow_exception(m_first_error);
  }

  void submit(std::shared_ptr<detail::request_impl> req) {
    {
      std::lock_guard<std::mutex> lk(m_mu);
      if (m_stopping) throw_error(errc::engine_shutdown, "submit after engine shutdown");
    }
    if (req->kind == request_kind::recv) {
      // Receives are posted on the submitting thread so the posted-queue
      // order is the program order.
      if (auto f = m_match.post_recv(req)) {
        deliver(*req, *f);
      }
      return;
    }
    {
      std::lock_guard<std::mutex> lk(m_mu);
      m_submissions.push_back(std::move(req));
    }
    m_cv.notify_all();
  }

  void notify() {
    {
      std::lock_guard<std::mutex> lk(m_mu);
      m_frames_pending = true;
    }
    m_cv.notify_all();
  }

  bool is_progress_thread() const {
    const auto id = std::this_thread::get_id();
    std::lock_guard<std::mutex> lk(m_thread_ids_mu);
    return std::find(m_thread_ids.begin(), m_thread_ids.end(), id) != m_thread_ids.end();
  }

  void note_test_call() { m_test_calls.fetch_add(1, std::memory_order_relaxed); }
  std::uint64_t test_calls() const { return m_test_calls.load(std::memory_order_relaxed); }

  std::size_t posted_receives() const { return m_match.posted_count(); }
  std::size_t unexpected_frames() const { return m_match.unexpected_count(); }

  rank_t rank() const noexcept { return m_rank; }
  event_log& log() noexcept { return m_log; }
  transport_endpoint& transport() noexcept { return m_transport; }

 private:
  void thread_main(bool poller) {
    {
      std::lock_guard<std::mutex> lk(m_thread_ids_mu);
      m_thread_ids.push_back(std::this_thread::get_id());
    }
    std::unique_lock<std::mutex> lk(m_mu);
    for (;;) {
      if (!m_submissions.empty()) {
        auto req = std::move(m_submissions.front());
        m_submissions.pop_front();
        lk.unlock();
        guarded([&] { process_request(std::move(req)); });
        lk.lock();
        continue;
      }
      if (poller && m_frames_pending) {
        m_frames_pending = false;
        lk.unlock();
        guarded([&] {
          while (auto f = m_transport.poll()) {
            handle_frame(std::move(*f));
          }
        });
        lk.lock();
        continue;
      }
      if (m_stopping) {
        if (!poller) break;
        lk.unlock();
        bool drained_any = false;
        guarded([&] {
          while (auto f = m_transport.poll()) {
            handle_frame(std::move(*f));
            drained_any = true;
          }
        });
        lk.lock();
        if (!drained_any && m_submissions.empty() && !m_frames_pending) break;
        continue;
      }
      m_cv.wait(lk, [this, poller] {
        return m_stopping || (poller && m_frames_pending) || !m_submissions.empty();
      });
    }
  }

  template <typename F>
  void guarded(F&& fn) {
    try {
      fn();
    } catch (...) {
      std::lock_guard<std::mutex> lk(m_error_mu);
      if (!m_first_error) m_first_error = std::current_exception();
    }
  }

  void process_request(std::shared_ptr<detail::request_impl> req) {
    switch (req->kind) {
      case request_kind::send: {
        std::span<const std::byte> payload(static_cast<const std::byte*>(req->buffer),
                                           req->env.payload_len);
        m_transport.send(req->env, payload);
        detail::complete_request(*req);
        break;
      }
      case request_kind::recv:
        break;  // receives are posted synchronously in submit()
      case request_kind::local_op: {
        apply_reduce(req->red, req->red_in, req->red_inout, req->red_len, req->red_dt);
        detail::complete_request(*req);
        break;
      }
      case request_kind::composite:
        // composites are launched by the schedule layer, never queued here
        break;
    }
  }

  void handle_frame(frame&& f) {
    frame matched;
    if (auto req = m_match.accept_frame(std::move(f), matched)) {
      deliver(*req, matched);
    }
  }

  void deliver(detail::request_impl& req, const frame& f) {
    const std::size_t n = f.payload.size();
    if (n > req.buffer_capacity) {
      throw_error(errc::length_mismatch, "incoming message longer than receive buffer");
    }
    if (n > 0) std::memcpy(req.buffer, f.payload.data(), n);
    detail::complete_request(req);
  }

  transport_endpoint& m_transport;
  event_log& m_log;
  rank_t m_rank;
  unsigned m_nthreads;

  std::mutex m_mu;
  std::condition_variable m_cv;
  std::deque<std::shared_ptr<detail::request_impl>> m_submissions;
  bool m_frames_pending = false;
  bool m_started = false;
  bool m_stopping = false;

  detail::match_table m_match;
  std::vector<std::thread> m_threads;
  mutable std::mutex m_thread_ids_mu;
  std::vector<std::thread::id> m_thread_ids;
  std::atomic<std::uint64_t> m_test_calls{0};
  std::mutex m_error_mu;
  std::exception_ptr m_first_error;
};

namespace detail {

inline bool test_request(request_impl& r) {
  bool result;
  {
    std::lock_guard<std::mutex> lk(r.mu);
    if (r.freed) throw_error(errc::invalid_handle, "test on freed request");
    // Inactive persistent requests test as complete.
    result = r.state != request_state::active;
  }
  if (r.engine) r.engine->note_test_call();
  if (r.log && r.log->enabled()) r.log->record(r.rank, event_kind::test, -1, -1);
  return result;
}

// Start of a plain (non-composite, unowned) persistent request.
inline void start_plain_request(const std::shared_ptr<request_impl>& req) {
  {
    std::lock_guard<std::mutex> lk(req->mu);
    if (req->freed) throw_error(errc::invalid_handle, "start on freed request");
    if (req->owned) {
      throw_error(errc::owned_by_schedule, "start on a request owned by a schedule");
    }
    if (req->state == request_state::active) {
      throw_error(errc::already_active, "start on active request");
    }
    req->state = request_state::active;  // complete resets lazily here
  }
  req->engine->submit(req);
}

}  // namespace detail

}  // namespace schedmp
