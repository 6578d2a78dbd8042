// Copyright (c) 2026 The schedmp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cassert>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "schedmp/progress.hpp"
#include "schedmp/request.hpp"

namespace schedmp {

namespace detail {

struct schedule_state;

// Everything one rank's runtime hands to the user-facing API: its transport,
// engine, log, and the per-rank id allocators.
struct rank_services {
  rank_t rank = 0;
  rank_t size = 1;
  transport_endpoint* transport = nullptr;
  progress_engine* engine = nullptr;
  event_log* log = nullptr;

  std::atomic<std::int64_t> next_round_id{0};
  std::atomic<tag_t> next_collective_tag{0};

  std::mutex registry_mu;
  std::vector<std::weak_ptr<schedule_state>> schedules;

  void register_schedule(const std::shared_ptr<schedule_state>& st) {
    std::lock_guard<std::mutex> lk(registry_mu);
    schedules.push_back(st);
  }
};

// A batch of sub-requests launched together. Rounds only know their
// successor; the last round of a chain has none.
struct round {
  std::vector<std::shared_ptr<request_impl>> subrequests;
  std::mutex counter_mu;
  std::size_t completion_counter = 0;
  round* next = nullptr;
  bool next_is_epilogue = false;
  bool epilogue_member = false;
  std::size_t index = 0;
  std::int64_t log_id = -1;
  std::int64_t pred_log_id = -1;
  schedule_state* sched = nullptr;
};

struct schedule_state : std::enable_shared_from_this<schedule_state> {
  std::mutex mu;
  std::condition_variable cv;

  std::vector<std::unique_ptr<round>> rounds;
  std::size_t reset_index = 0;
  std::optional<std::size_t> completion_mark;
  std::size_t completion_index = 0;  // resolved at commit
  bool committed = false;
  bool freed = false;
  bool auto_free_all = false;

  bool started_once = false;
  std::size_t cursor = 0;
  bool epilogue_started = false;
  bool epilogue_done = false;

  std::weak_ptr<request_impl> composite;
  // Strong self-reference held while an execution (or the epilogue) is in
  // flight, so dropping the user handles mid-run cannot destroy live rounds.
  std::shared_ptr<schedule_state> self_while_active;

  rank_services* svc = nullptr;

  round& current() { return *rounds.back(); }
};

void launch_round(round& r);
void complete_composite(schedule_state& st);

// Engine release override for schedule sub-requests: count the completion
// into the round and, as last arriver, advance the chain.
inline void subrequest_release(request_impl& sub) {
  round* r = sub.round_ref;
  assert(r != nullptr);
  bool last;
  {
    std::lock_guard<std::mutex> lk(r->counter_mu);  // one sub at a time on the counter
    ++r->completion_counter;
    assert(r->completion_counter <= r->subrequests.size());
    last = r->completion_counter == r->subrequests.size();
  }
  if (!last) return;

  schedule_state& st = *r->sched;
  if (r->epilogue_member) {
    if (r->next) {
      launch_round(*r->next);
    } else {
      std::shared_ptr<schedule_state> keep;
      {
        std::lock_guard<std::mutex> lk(st.mu);
        st.epilogue_done = true;
        keep = std::move(st.self_while_active);
      }
      st.cv.notify_all();
    }
    return;
  }
  if (r->next != nullptr && !r->next_is_epilogue) {
    launch_round(*r->next);
  } else {
    complete_composite(st);
  }
}

void start_composite(const std::shared_ptr<request_impl>& comp, bool nested_launch);

inline void launch_round(round& r) {
  schedule_state& st = *r.sched;
  event_log* log = st.svc->log;
  if (log && log->enabled()) {
    log->record(st.svc->rank, event_kind::round_launch, r.log_id, r.pred_log_id);
  }
  {
    std::lock_guard<std::mutex> lk(r.counter_mu);
    r.completion_counter = 0;
  }
  // FIFO launch: sub-requests start in insertion order, complete in any order.
  for (std::size_t i = 0; i < r.subrequests.size(); ++i) {
    auto& sub = r.subrequests[i];
    if (log && log->enabled()) {
      log->record(st.svc->rank, event_kind::start, r.log_id, static_cast<std::int64_t>(i));
    }
    if (sub->kind == request_kind::composite) {
      start_composite(sub, /*nested_launch=*/true);
    } else {
      {
        std::lock_guard<std::mutex> lk(sub->mu);
        assert(sub->state == request_state::inactive);
        sub->state = request_state::active;
      }
      st.svc->engine->submit(sub);
    }
  }
}

inline void complete_composite(schedule_state& st) {
  std::int64_t last_body_round = -1;
  std::shared_ptr<schedule_state> keep;
  {
    std::lock_guard<std::mutex> lk(st.mu);
    // Reset the steady-run rounds so the composite can be restarted; the
    // prologue stays complete, it never runs again.
    for (std::size_t i = st.reset_index; i < st.completion_index; ++i) {
      for (auto& sub : st.rounds[i]->subrequests) {
        std::lock_guard<std::mutex> sl(sub->mu);
        if (sub->state == request_state::complete) sub->state = request_state::inactive;
      }
    }
    st.cursor = st.reset_index;
    if (st.completion_index > 0) last_body_round = st.rounds[st.completion_index - 1]->log_id;
    keep = std::move(st.self_while_active);
  }
  if (st.svc->log && st.svc->log->enabled()) {
    st.svc->log->record(st.svc->rank, event_kind::composite_complete, last_body_round, -1);
  }
  if (auto comp = st.composite.lock()) {
    complete_request(*comp);  // runs the outer release hook when nested
  }
}

inline void start_composite(const std::shared_ptr<request_impl>& comp, bool nested_launch) {
  schedule_state& st = *comp->composite;
  std::size_t launch_idx;
  {
    std::lock_guard<std::mutex> lk(st.mu);
    if (st.freed) throw_error(errc::freed, "start on freed schedule");
    if (st.epilogue_started) throw_error(errc::freed, "start after epilogue ran");
    {
      std::lock_guard<std::mutex> rl(comp->mu);
      if (comp->freed) throw_error(errc::invalid_handle, "start on freed request");
      if (!nested_launch && comp->owned) {
        throw_error(errc::owned_by_schedule, "start on a request owned by a schedule");
      }
      if (comp->state == request_state::active) {
        throw_error(errc::already_active, "start on active composite");
      }
      comp->state = request_state::active;
    }
    launch_idx = st.started_once ? st.reset_index : 0;
    st.started_once = true;
    st.cursor = launch_idx;
    st.self_while_active = st.shared_from_this();
  }
  if (launch_idx >= st.completion_index) {
    complete_composite(st);  // empty steady run
  } else {
    launch_round(*st.rounds[launch_idx]);
  }
}

// --- building ---------------------------------------------------------------

inline std::shared_ptr<schedule_state> schedule_create(rank_services& svc, bool auto_free) {
  auto st = std::make_shared<schedule_state>();
  st->svc = &svc;
  st->auto_free_all = auto_free;
  auto r = std::make_unique<round>();
  r->sched = st.get();
  r->index = 0;
  st->rounds.push_back(std::move(r));
  return st;
}

inline void check_building(schedule_state& st) {
  if (st.freed) throw_error(errc::invalid_handle, "schedule already freed");
  if (st.committed) throw_error(errc::already_committed, "schedule already committed");
}

inline void schedule_add_operation(schedule_state& st, const std::shared_ptr<request_impl>& req,
                                   bool auto_free) {
  std::lock_guard<std::mutex> lk(st.mu);
  check_building(st);
  std::lock_guard<std::mutex> rl(req->mu);
  if (req->freed) throw_error(errc::invalid_handle, "adding a freed request");
  if (req->owned) {
    throw_error(errc::request_owned, "request already belongs to a schedule");
  }
  if (req->state == request_state::active) {
    throw_error(errc::request_active, "adding an active request");
  }
  round& cur = st.current();
  req->owned = true;
  req->owner = st.weak_from_this();
  req->round_ref = &cur;
  req->op_index = cur.subrequests.size();
  req->auto_free = auto_free;
  req->release_hook = &subrequest_release;
  cur.subrequests.push_back(req);
}

inline void schedule_add_reduce(schedule_state& st, const reduce_op_descriptor& desc,
                                const void* invec, void* inoutvec, std::size_t len,
                                datatype dt) {
  if (!is_valid_datatype(dt)) {
    throw_error(errc::unsupported_datatype, "unknown datatype code");
  }
  if (len > 0 && (invec == nullptr || inoutvec == nullptr)) {
    throw_error(errc::length_mismatch, "null operand with nonzero length");
  }
  if (desc.op == reduce_op::user && !desc.user_fn) {
    throw_error(errc::invalid_argument, "user reduce op without a callback");
  }
  auto op = std::make_shared<request_impl>();
  op->kind = request_kind::local_op;
  op->red = desc;
  op->red_in = invec;
  op->red_inout = inoutvec;
  op->red_len = len;
  op->red_dt = dt;
  op->engine = st.svc->engine;
  op->log = st.svc->log;
  op->rank = st.svc->rank;
  op->auto_free = true;  // internal, always reclaimed with the schedule
  schedule_add_operation(st, op, /*auto_free=*/true);
}

inline void schedule_create_round(schedule_state& st) {
  std::lock_guard<std::mutex> lk(st.mu);
  check_building(st);
  if (st.current().subrequests.empty()) return;  // empty rounds are not valid; no-op
  auto r = std::make_unique<round>();
  r->sched = &st;
  r->index = st.rounds.size();
  st.rounds.push_back(std::move(r));
}

inline void schedule_mark_reset_point(schedule_state& st) {
  std::lock_guard<std::mutex> lk(st.mu);
  check_building(st);
  const std::size_t idx = st.rounds.size() - 1;
  if (st.completion_mark && idx > *st.completion_mark) {
    throw_error(errc::invalid_mark, "reset point would pass the completion point");
  }
  st.reset_index = idx;
}

inline void schedule_mark_completion_point(schedule_state& st) {
  std::lock_guard<std::mutex> lk(st.mu);
  check_building(st);
  const std::size_t idx = st.rounds.size() - 1;
  if (idx < st.reset_index) {
    throw_error(errc::invalid_mark, "completion point before the reset point");
  }
  st.completion_mark = idx;
}

inline std::shared_ptr<request_impl> schedule_commit(const std::shared_ptr<schedule_state>& stp) {
  schedule_state& st = *stp;
  std::lock_guard<std::mutex> lk(st.mu);
  check_building(st);

  if (st.rounds.size() == 1 && st.current().subrequests.empty()) {
    throw_error(errc::empty_schedule, "commit on a schedule with no operations");
  }
  if (st.rounds.size() > 1 && st.current().subrequests.empty()) {
    st.rounds.pop_back();  // trailing open round is trimmed
  }

  const std::size_t n = st.rounds.size();
  st.completion_index = st.completion_mark ? std::min(*st.completion_mark, n) : n;
  st.reset_index = std::min(st.reset_index, st.completion_index);

  for (std::size_t i = 0; i < n; ++i) {
    round& r = *st.rounds[i];
    assert(!r.subrequests.empty());
    r.log_id = st.svc->next_round_id.fetch_add(1, std::memory_order_relaxed);
    r.epilogue_member = i >= st.completion_index;
    for (auto& sub : r.subrequests) sub->log_round_id = r.log_id;
  }
  for (std::size_t i = 0; i + 1 < n; ++i) {
    round& r = *st.rounds[i];
    r.next = st.rounds[i + 1].get();
    r.next_is_epilogue = (i + 1 == st.completion_index);
    // The first round of a chain is gated by start (or free, for the
    // epilogue), not by a predecessor.
    if (!r.next_is_epilogue) st.rounds[i + 1]->pred_log_id = r.log_id;
  }

  auto comp = std::make_shared<request_impl>();
  comp->kind = request_kind::composite;
  comp->composite = stp;
  comp->engine = st.svc->engine;
  comp->log = st.svc->log;
  comp->rank = st.svc->rank;
  comp->release_hook = nullptr;  // set when nested into an outer schedule
  st.composite = comp;
  st.committed = true;
  st.svc->register_schedule(stp);
  return comp;
}

// --- teardown ---------------------------------------------------------------

// Runs the epilogue rounds exactly once, blocking until they finish. Only a
// schedule that ran at least once has an epilogue to perform.
inline void run_epilogue(schedule_state& st) {
  {
    std::unique_lock<std::mutex> lk(st.mu);
    if (!st.committed || st.epilogue_done) return;
    if (!st.started_once) {
      st.epilogue_done = true;
      return;
    }
    if (st.completion_index >= st.rounds.size()) {
      st.epilogue_done = true;  // no epilogue rounds
      return;
    }
    if (st.epilogue_started) {
      st.cv.wait(lk, [&] { return st.epilogue_done; });
      return;
    }
    st.epilogue_started = true;
    st.self_while_active = st.shared_from_this();
  }
  if (st.svc->log && st.svc->log->enabled()) {
    st.svc->log->record(st.svc->rank, event_kind::epilogue_start,
                        st.rounds[st.completion_index]->log_id, -1);
  }
  launch_round(*st.rounds[st.completion_index]);
  std::unique_lock<std::mutex> lk(st.mu);
  st.cv.wait(lk, [&] { return st.epilogue_done; });
}

// Frees a committed composite: runs the epilogue, then invalidates the handle.
// The schedule itself stays valid until schedule_free.
inline void free_composite(const std::shared_ptr<request_impl>& comp) {
  schedule_state& st = *comp->composite;
  {
    std::lock_guard<std::mutex> lk(comp->mu);
    if (comp->freed) throw_error(errc::invalid_handle, "free on freed request");
    if (comp->owned) throw_error(errc::owned_by_schedule, "free on a nested sub-request");
    if (comp->state == request_state::active) {
      throw_error(errc::still_active, "free on active composite");
    }
  }
  run_epilogue(st);
  {
    std::lock_guard<std::mutex> lk(comp->mu);
    comp->freed = true;
  }
  comp->cv.notify_all();
}

inline void free_plain_request(const std::shared_ptr<request_impl>& req) {
  {
    std::lock_guard<std::mutex> lk(req->mu);
    if (req->freed) throw_error(errc::invalid_handle, "free on freed request");
    if (req->owned) throw_error(errc::owned_by_schedule, "free on a schedule-owned request");
    if (req->state == request_state::active) {
      throw_error(errc::still_active, "free on active request");
    }
    req->freed = true;
    req->buffer = nullptr;
    req->retained.clear();
  }
  req->cv.notify_all();
}

// Frees the schedule: frees the composite first (running the epilogue),
// reclaims auto-free sub-requests, and releases the rest back to the caller
// as valid, inactive handles.
inline void schedule_free(const std::shared_ptr<schedule_state>& stp) {
  schedule_state& st = *stp;
  {
    std::lock_guard<std::mutex> lk(st.mu);
    if (st.freed) throw_error(errc::double_free, "schedule already freed");
  }
  if (st.committed) {
    if (auto comp = st.composite.lock()) {
      bool comp_freed;
      {
        std::lock_guard<std::mutex> lk(comp->mu);
        comp_freed = comp->freed;
      }
      if (!comp_freed) free_composite(comp);
    } else {
      run_epilogue(st);
    }
  }
  std::lock_guard<std::mutex> lk(st.mu);
  for (auto& r : st.rounds) {
    for (auto& sub : r->subrequests) {
      std::lock_guard<std::mutex> sl(sub->mu);
      if (sub->freed) continue;
      if (st.auto_free_all || sub->auto_free) {
        sub->freed = true;
        sub->buffer = nullptr;
        sub->retained.clear();
      } else {
        // The caller regains a valid, inactive standalone handle.
        sub->owned = false;
        sub->owner.reset();
        sub->round_ref = nullptr;
        sub->release_hook = nullptr;
        sub->log_round_id = -1;
        if (sub->state == request_state::complete) sub->state = request_state::inactive;
      }
      sub->cv.notify_all();
    }
  }
  st.freed = true;
}

// World-shutdown hook: make sure every committed schedule has run its
// epilogue (free or finalize, whichever comes first).
inline void drain_rank_schedules(rank_services& svc) {
  std::vector<std::weak_ptr<schedule_state>> snapshot;
  {
    std::lock_guard<std::mutex> lk(svc.registry_mu);
    snapshot = svc.schedules;
  }
  for (auto& w : snapshot) {
    auto st = w.lock();
    if (!st) continue;
    if (auto comp = st->composite.lock()) {
      bool active;
      {
        std::lock_guard<std::mutex> lk(comp->mu);
        active = comp->state == request_state::active;
      }
      if (active) wait_request(*comp);
    }
    run_epilogue(*st);
  }
}

}  // namespace detail

}  // namespace schedmp
