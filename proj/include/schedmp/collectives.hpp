// Copyright (c) 2026 The schedmp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstring>
#include <memory>
#include <vector>

#include "schedmp/api.hpp"

namespace schedmp {

enum class bcast_topology { linear, binomial };

struct bcast_edge {
  rank_t from = 0;
  rank_t to = 0;
  std::uint32_t round = 0;
};

// Broadcast dissemination plan: which rank sends to which peer in which
// round. Non-root ranks receive exactly once, before any of their sends.
struct bcast_plan {
  rank_t size = 1;
  rank_t root = 0;
  bcast_topology topology = bcast_topology::binomial;
  std::uint32_t rounds = 0;
  std::vector<bcast_edge> edges;  // ordered by round, then by sender

  const bcast_edge* recv_edge(rank_t r) const {
    for (const auto& e : edges) {
      if (e.to == r) return &e;
    }
    return nullptr;
  }

  std::vector<bcast_edge> send_edges(rank_t r) const {
    std::vector<bcast_edge> out;
    for (const auto& e : edges) {
      if (e.from == r) out.push_back(e);
    }
    return out;
  }
};

inline std::uint32_t ceil_log2(rank_t n) {
  std::uint32_t r = 0;
  rank_t v = 1;
  while (v < n) {
    v <<= 1;
    ++r;
  }
  return r;
}

inline bcast_plan plan_binomial_bcast(rank_t size, rank_t root) {
  if (size < 1 || root >= size) throw_error(errc::invalid_rank, "bad plan parameters");
  bcast_plan plan;
  plan.size = size;
  plan.root = root;
  plan.topology = bcast_topology::binomial;
  plan.rounds = ceil_log2(size);
  // Virtual rank 0 is the root; in round k every holder forwards across a
  // stride that halves each round.
  for (std::uint32_t k = 0; k < plan.rounds; ++k) {
    const rank_t stride = rank_t{1} << (plan.rounds - 1 - k);
    for (rank_t vr = 0; vr + stride < size; vr += 2 * stride) {
      bcast_edge e;
      e.from = (vr + root) % size;
      e.to = (vr + stride + root) % size;
      e.round = k;
      plan.edges.push_back(e);
    }
  }
  return plan;
}

inline bcast_plan plan_linear_bcast(rank_t size, rank_t root) {
  if (size < 1 || root >= size) throw_error(errc::invalid_rank, "bad plan parameters");
  bcast_plan plan;
  plan.size = size;
  plan.root = root;
  plan.topology = bcast_topology::linear;
  plan.rounds = size > 1 ? 1 : 0;
  for (rank_t r = 0; r < size; ++r) {
    if (r == root) continue;
    plan.edges.push_back(bcast_edge{root, r, 0});
  }
  return plan;
}

inline bcast_plan make_bcast_plan(rank_t size, rank_t root, bcast_topology topo) {
  return topo == bcast_topology::binomial ? plan_binomial_bcast(size, root)
                                          : plan_linear_bcast(size, root);
}

// Appends this rank's share of a broadcast plan to an open schedule, one
// schedule round per plan round the rank takes part in.
inline void append_bcast_rounds(schedule& sched, const communicator& comm, void* buffer,
                                std::size_t count, datatype dt, const bcast_plan& plan,
                                tag_t tag) {
  const rank_t me = comm.rank();
  const bcast_edge* rx = plan.recv_edge(me);
  const auto tx = plan.send_edges(me);
  bool first_content = true;
  for (std::uint32_t k = 0; k < plan.rounds; ++k) {
    std::vector<request> ops;
    if (rx && rx->round == k) {
      ops.push_back(comm.recv_init(buffer, count, dt, rx->from, tag));
    }
    for (const auto& e : tx) {
      if (e.round == k) ops.push_back(comm.send_init(buffer, count, dt, e.to, tag));
    }
    if (ops.empty()) continue;  // this rank sits this plan round out
    if (!first_content) sched.next_round();
    for (const auto& op : ops) sched.add_operation(op, true);
    first_content = false;
  }
}

// Builds a restartable broadcast purely from the public schedule API.
inline request bcast_schedule_init(communicator& comm, void* buffer, std::size_t count,
                                   datatype dt, rank_t root,
                                   bcast_topology topo = bcast_topology::binomial) {
  communicator coll = comm.with_context(k_context_collective);
  const tag_t tag = comm.services().next_collective_tag.fetch_add(1);
  const bcast_plan plan = make_bcast_plan(comm.size(), root, topo);

  schedule sched(comm);
  append_bcast_rounds(sched, coll, buffer, count, dt, plan, tag);
  if (comm.size() == 1) {
    sched.add_reduce(reduce_op::sum, nullptr, nullptr, 0, dt);  // trivial no-op round
  }
  return sched.commit();
}

namespace detail {

struct reduce_step {
  bool receiver = false;
  bool sender = false;
  rank_t partner = 0;
};

// Recursive halving toward virtual rank 0. A rank sends its accumulator
// exactly once and is then done; receivers fold one inbox per step.
inline std::vector<reduce_step> reduce_steps(rank_t size, rank_t me, rank_t root) {
  const rank_t vr = (me + size - root) % size;
  const std::uint32_t rounds = ceil_log2(size);
  std::vector<reduce_step> steps;
  for (std::uint32_t k = 0; k < rounds; ++k) {
    const rank_t stride = rank_t{1} << k;
    reduce_step s;
    if (vr % (2 * stride) == stride) {
      s.sender = true;
      s.partner = (vr - stride + root) % size;
      steps.push_back(s);
      break;
    }
    if (vr % (2 * stride) == 0 && vr + stride < size) {
      s.receiver = true;
      s.partner = (vr + stride + root) % size;
      steps.push_back(s);
    }
  }
  return steps;
}

inline reduce_op_descriptor replace_op() {
  reduce_op_descriptor d;
  d.op = reduce_op::user;
  d.user_fn = [](const void* in, void* inout, std::size_t len, datatype dt) {
    if (len > 0) std::memcpy(inout, in, len * elem_size(dt));
  };
  return d;
}

}  // namespace detail

// Appends this rank's share of a binomial reduction: a copy round seeding the
// accumulator from sendbuf, then alternating receive and combine rounds, and
// for non-root ranks a final send of the accumulator toward the root.
// Returns the scratch buffers the added operations point into.
inline std::vector<std::shared_ptr<void>> append_reduce_rounds(
    schedule& sched, const communicator& comm, const void* sendbuf, void* recvbuf,
    std::size_t count, datatype dt, reduce_op op, rank_t root, tag_t tag) {
  const rank_t me = comm.rank();
  const std::size_t bytes = count * elem_size(dt);
  std::vector<std::shared_ptr<void>> scratch;

  void* acc = recvbuf;
  if (me != root) {
    auto owned = std::shared_ptr<std::vector<std::byte>>(new std::vector<std::byte>(bytes));
    acc = owned->data();
    scratch.push_back(owned);
  }

  sched.add_reduce(detail::replace_op(), sendbuf, acc, count, dt);

  for (const auto& step : detail::reduce_steps(comm.size(), me, root)) {
    if (step.receiver) {
      auto inbox = std::shared_ptr<std::vector<std::byte>>(new std::vector<std::byte>(bytes));
      scratch.push_back(inbox);
      sched.next_round();
      sched.add_operation(comm.recv_init(inbox->data(), count, dt, step.partner, tag), true);
      sched.next_round();
      sched.add_reduce(op, inbox->data(), acc, count, dt);
    } else {
      sched.next_round();
      sched.add_operation(comm.send_init(acc, count, dt, step.partner, tag), true);
    }
  }
  return scratch;
}

// Binomial reduction to root's recvbuf. The combine order is fixed by the
// tree, so repeated runs produce bit-identical results, floats included.
inline request reduce_schedule_init(communicator& comm, const void* sendbuf, void* recvbuf,
                                    std::size_t count, datatype dt, reduce_op op, rank_t root) {
  if (root >= comm.size()) throw_error(errc::invalid_rank, "root out of range");
  communicator coll = comm.with_context(k_context_collective);
  const tag_t tag = comm.services().next_collective_tag.fetch_add(1);

  schedule sched(comm);
  auto scratch = append_reduce_rounds(sched, coll, sendbuf, recvbuf, count, dt, op, root, tag);
  request composite = sched.commit();
  for (auto& s : scratch) composite.impl()->retained.push_back(std::move(s));
  return composite;
}

// Blocking broadcast baseline over the same binomial plan.
inline void direct_bcast(communicator& comm, void* buffer, std::size_t count, datatype dt,
                         rank_t root) {
  if (comm.size() == 1) return;
  communicator coll = comm.with_context(k_context_direct_collective);
  const tag_t tag = comm.services().next_collective_tag.fetch_add(1);
  const bcast_plan plan = plan_binomial_bcast(comm.size(), root);

  const rank_t me = comm.rank();
  if (const bcast_edge* rx = plan.recv_edge(me)) {
    coll.recv(buffer, count, dt, rx->from, tag);
  }
  for (const auto& e : plan.send_edges(me)) {
    coll.send(buffer, count, dt, e.to, tag);
  }
}

// Linear barrier: everyone checks in with rank 0, rank 0 releases everyone.
inline void barrier(communicator& comm) {
  if (comm.size() == 1) return;
  communicator bc = comm.with_context(k_context_barrier);
  const tag_t tag = comm.services().next_collective_tag.fetch_add(1);
  if (comm.rank() == 0) {
    for (rank_t r = 1; r < comm.size(); ++r) bc.recv(nullptr, 0, datatype::byte, r, tag);
    for (rank_t r = 1; r < comm.size(); ++r) bc.send(nullptr, 0, datatype::byte, r, tag);
  } else {
    bc.send(nullptr, 0, datatype::byte, 0, tag);
    bc.recv(nullptr, 0, datatype::byte, 0, tag);
  }
}

}  // namespace schedmp
