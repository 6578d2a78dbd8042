// Copyright (c) 2026 The schedmp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <utility>

#include "schedmp/schedule.hpp"

namespace schedmp {

// Handle to a persistent operation. Copies share the underlying operation.
class request {
 public:
  request() = default;
  explicit request(std::shared_ptr<detail::request_impl> impl) : m_impl(std::move(impl)) {}

  bool valid() const noexcept { return m_impl != nullptr; }

  void start() {
    require();
    if (m_impl->kind == request_kind::composite) {
      detail::start_composite(m_impl, /*nested_launch=*/false);
    } else {
      detail::start_plain_request(m_impl);
    }
  }

  // Blocks until complete; no busy-spinning.
  void wait() {
    require();
    detail::wait_request(*m_impl);
  }

  // True iff not currently active (inactive persistent requests test as
  // complete).
  bool test() {
    require();
    return detail::test_request(*m_impl);
  }

  void free() {
    require();
    if (m_impl->kind == request_kind::composite) {
      detail::free_composite(m_impl);
    } else {
      detail::free_plain_request(m_impl);
    }
  }

  const std::shared_ptr<detail::request_impl>& impl() const {
    require();
    return m_impl;
  }

 private:
  void require() const {
    if (!m_impl) throw_error(errc::invalid_handle, "null request handle");
  }

  std::shared_ptr<detail::request_impl> m_impl;
};

class communicator;

// A composite persistent operation under construction: rounds of
// sub-requests, optional reset/completion points, committed into a single
// startable request.
class schedule {
 public:
  explicit schedule(communicator& comm, bool auto_free = false);

  void add_operation(const request& req, bool auto_free = false) {
    detail::schedule_add_operation(*require(), req.impl(), auto_free);
  }

  void add_reduce(reduce_op op, const void* invec, void* inoutvec, std::size_t len,
                  datatype dt) {
    detail::schedule_add_reduce(*require(), reduce_op_descriptor{op, nullptr}, invec, inoutvec,
                                len, dt);
  }

  void add_reduce(const reduce_op_descriptor& desc, const void* invec, void* inoutvec,
                  std::size_t len, datatype dt) {
    detail::schedule_add_reduce(*require(), desc, invec, inoutvec, len, dt);
  }

  // Ends the current round. A second call with nothing added in between is a
  // no-op; empty rounds are not valid.
  void next_round() { detail::schedule_create_round(*require()); }

  // Rounds before the current one become the run-once prologue; every start
  // after the first begins at the current round.
  void mark_reset_point() { detail::schedule_mark_reset_point(*require()); }

  // The current round and everything after it become the run-once epilogue,
  // executed when the composite is freed (or at world shutdown).
  void mark_completion_point() { detail::schedule_mark_completion_point(*require()); }

  request commit() { return request(detail::schedule_commit(require())); }

  void free() { detail::schedule_free(require()); }

  // introspection (primarily for tests)
  std::size_t round_count() const {
    std::lock_guard<std::mutex> lk(require()->mu);
    return m_state->rounds.size();
  }
  std::size_t reset_index() const {
    std::lock_guard<std::mutex> lk(require()->mu);
    return m_state->reset_index;
  }
  std::size_t completion_index() const {
    std::lock_guard<std::mutex> lk(require()->mu);
    return m_state->committed ? m_state->completion_index
                              : m_state->completion_mark.value_or(m_state->rounds.size());
  }
  bool committed() const {
    std::lock_guard<std::mutex> lk(require()->mu);
    return m_state->committed;
  }

  const std::shared_ptr<detail::schedule_state>& state() const { return m_state; }

 private:
  std::shared_ptr<detail::schedule_state> require() const {
    if (!m_state) throw_error(errc::invalid_handle, "null schedule handle");
    return m_state;
  }

  std::shared_ptr<detail::schedule_state> m_state;
};

// Per-rank communication context: a rank id, world size, and an integer
// context that namespaces matching.
class communicator {
 public:
  communicator(detail::rank_services& svc, context_t ctx) : m_svc(&svc), m_context(ctx) {}

  rank_t rank() const noexcept { return m_svc->rank; }
  rank_t size() const noexcept { return m_svc->size; }
  context_t context() const noexcept { return m_context; }

  communicator with_context(context_t ctx) const { return communicator(*m_svc, ctx); }

  request send_init(const void* buffer, std::size_t count, datatype dt, rank_t dest,
                    tag_t tag) const {
    validate(count, dt, dest);
    auto impl = std::make_shared<detail::request_impl>();
    impl->kind = request_kind::send;
    impl->env = envelope{m_context, m_svc->rank, dest, tag, dt,
                         static_cast<std::uint64_t>(count) * elem_size(dt)};
    impl->buffer = const_cast<void*>(buffer);
    impl->buffer_capacity = count * elem_size(dt);
    bind(*impl);
    return request(std::move(impl));
  }

  request recv_init(void* buffer, std::size_t count, datatype dt, rank_t source,
                    tag_t tag) const {
    validate(count, dt, source);
    auto impl = std::make_shared<detail::request_impl>();
    impl->kind = request_kind::recv;
    impl->env = envelope{m_context, source, m_svc->rank, tag, dt,
                         static_cast<std::uint64_t>(count) * elem_size(dt)};
    impl->buffer = buffer;
    impl->buffer_capacity = count * elem_size(dt);
    bind(*impl);
    return request(std::move(impl));
  }

  // Blocking one-shot helpers built on the persistent path.
  void send(const void* buffer, std::size_t count, datatype dt, rank_t dest, tag_t tag) const {
    request r = send_init(buffer, count, dt, dest, tag);
    r.start();
    r.wait();
    r.free();
  }

  void recv(void* buffer, std::size_t count, datatype dt, rank_t source, tag_t tag) const {
    request r = recv_init(buffer, count, dt, source, tag);
    r.start();
    r.wait();
    r.free();
  }

  detail::rank_services& services() const noexcept { return *m_svc; }

 private:
  void validate(std::size_t count, datatype dt, rank_t peer) const {
    if (peer >= m_svc->size) throw_error(errc::invalid_rank, "peer rank out of range");
    if (!is_valid_datatype(dt)) throw_error(errc::unsupported_datatype, "unknown datatype code");
    if (count > (1ull << 48)) throw_error(errc::invalid_count, "count out of range");
  }

  void bind(detail::request_impl& impl) const {
    impl.engine = m_svc->engine;
    impl.log = m_svc->log;
    impl.rank = m_svc->rank;
  }

  detail::rank_services* m_svc;
  context_t m_context;
};

inline schedule::schedule(communicator& comm, bool auto_free)
    : m_state(detail::schedule_create(comm.services(), auto_free)) {}

}  // namespace schedmp
