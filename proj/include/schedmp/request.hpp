// Copyright (c) 2026 The schedmp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <vector>

#include "schedmp/event_log.hpp"
#include "schedmp/reduce.hpp"
#include "schedmp/types.hpp"

namespace schedmp {

class progress_engine;

enum class request_state { inactive, active, complete };

enum class request_kind { send, recv, local_op, composite };

namespace detail {

struct schedule_state;
struct round;

// Shared core of every persistent operation. The only legal state edges are
// inactive->active (start), active->complete (engine) and complete->inactive
// (restart). `completions` is a generation counter: waiters latch it before
// blocking so a complete->inactive restart cannot swallow their wakeup.
struct request_impl {
  std::mutex mu;
  std::condition_variable cv;
  request_state state = request_state::inactive;
  std::uint64_t completions = 0;
  bool freed = false;

  request_kind kind = request_kind::send;
  envelope env{};
  void* buffer = nullptr;
  std::size_t buffer_capacity = 0;

  // local compute op
  reduce_op_descriptor red;
  const void* red_in = nullptr;
  void* red_inout = nullptr;
  std::size_t red_len = 0;
  datatype red_dt = datatype::byte;

  // schedule ownership
  bool owned = false;
  std::weak_ptr<schedule_state> owner;
  round* round_ref = nullptr;
  std::size_t op_index = 0;
  std::int64_t log_round_id = -1;
  bool auto_free = false;

  // composite payload (kind == composite)
  std::shared_ptr<schedule_state> composite;

  progress_engine* engine = nullptr;
  event_log* log = nullptr;
  rank_t rank = 0;

  // Sub-requests override the engine's release step so completion can advance
  // their round; composites use it to notify an outer schedule when nested.
  void (*release_hook)(request_impl&) = nullptr;

  // Test instrumentation: runs on the completing thread, after the waiters
  // are notified.
  std::function<void(request_impl&)> completion_observer;

  // Keeps factory-allocated scratch (reduce accumulators, inboxes) alive for
  // the life of the request.
  std::vector<std::shared_ptr<void>> retained;
};

inline void complete_request(request_impl& r) {
  std::function<void(request_impl&)> observer;
  {
    std::lock_guard<std::mutex> lk(r.mu);
    r.state = request_state::complete;
    r.completions++;
    observer = r.completion_observer;
  }
  r.cv.notify_all();
  if (r.log && r.log->enabled()) {
    r.log->record(r.rank, event_kind::complete, r.log_round_id,
                  static_cast<std::int64_t>(r.op_index));
  }
  if (observer) observer(r);
  if (r.release_hook) r.release_hook(r);
}

// Blocks until the request completes (or a completion passes by, for requests
// that are immediately restarted by their schedule). Waiting on a plain
// inactive request is an error; a schedule-owned sub-request in a
// not-yet-reached round is treated as pending and waited on.
inline void wait_request(request_impl& r) {
  std::unique_lock<std::mutex> lk(r.mu);
  if (r.freed) throw_error(errc::invalid_handle, "wait on freed request");
  if (r.state == request_state::complete) return;
  if (r.state == request_state::inactive && !r.owned) {
    throw_error(errc::invalid_state, "wait on inactive request");
  }
  const std::uint64_t base = r.completions;
  r.cv.wait(lk, [&] { return r.completions > base || r.freed; });
  if (r.completions == base && r.freed) {
    throw_error(errc::invalid_handle, "request freed while waiting");
  }
}

bool test_request(request_impl& r);  // defined with the engine (counts test calls)

}  // namespace detail

}  // namespace schedmp
