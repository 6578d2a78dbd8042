// Copyright (c) 2026 The schedmp Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <map>
#include <random>
#include <set>

#include "schedmp/schedmp.hpp"
#include "test_util.hpp"

using namespace schedmp;

namespace {

// independent elementwise combine for the oracle (not apply_reduce)
template <typename T>
T combine(reduce_op op, T in, T inout) {
  switch (op) {
    case reduce_op::sum:
      if constexpr (std::is_integral_v<T>) {
        using U = std::make_unsigned_t<T>;
        return static_cast<T>(static_cast<U>(in) + static_cast<U>(inout));
      } else {
        return in + inout;
      }
    case reduce_op::max:
      return in > inout ? in : inout;
    case reduce_op::min:
      return in < inout ? in : inout;
    default:
      return inout;
  }
}

// Reference reduction that walks the same recursive-halving tree in the same
// per-round order as the runtime, entirely on plain arrays.
template <typename T>
std::vector<T> tree_reduce_oracle(const std::vector<std::vector<T>>& contribs, reduce_op op,
                                  rank_t root) {
  const rank_t size = static_cast<rank_t>(contribs.size());
  std::vector<std::vector<T>> acc(size);
  for (rank_t vr = 0; vr < size; ++vr) acc[vr] = contribs[(vr + root) % size];
  for (rank_t stride = 1; stride < size; stride <<= 1) {
    for (rank_t vr = 0; vr + stride < size; vr += 2 * stride) {
      auto& dst = acc[vr];
      const auto& src = acc[vr + stride];
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = combine<T>(op, src[i], dst[i]);
    }
  }
  return acc[0];
}

}  // namespace

TEST_CASE("binomial plans are structurally valid for every size and root") {
  for (rank_t size = 1; size <= 32; ++size) {
    for (rank_t root = 0; root < size; ++root) {
      const bcast_plan plan = plan_binomial_bcast(size, root);
      CAPTURE(size, root);

      // round count is ceil(log2 size)
      rank_t v = 1;
      std::uint32_t expected_rounds = 0;
      while (v < size) {
        v <<= 1;
        ++expected_rounds;
      }
      REQUIRE(plan.rounds == expected_rounds);

      std::map<rank_t, int> recv_count;
      for (const auto& e : plan.edges) {
        REQUIRE(e.from < size);
        REQUIRE(e.to < size);
        REQUIRE(e.round < plan.rounds);
        recv_count[e.to]++;
      }
      REQUIRE(recv_count.count(root) == 0);
      for (rank_t r = 0; r < size; ++r) {
        if (r == root) continue;
        REQUIRE(recv_count[r] == 1);
      }
      // a rank's receive precedes all of its sends
      for (rank_t r = 0; r < size; ++r) {
        const bcast_edge* rx = plan.recv_edge(r);
        for (const auto& e : plan.send_edges(r)) {
          if (rx != nullptr) REQUIRE(rx->round < e.round);
        }
      }
      // senders must already hold the data: every sender is root or received
      // in an earlier round
      for (const auto& e : plan.edges) {
        if (e.from == root) continue;
        const bcast_edge* rx = plan.recv_edge(e.from);
        REQUIRE(rx != nullptr);
        REQUIRE(rx->round < e.round);
      }
    }
  }
}

TEST_CASE("the eight-rank binomial tree matches the enumerated edge set") {
  const bcast_plan plan = plan_binomial_bcast(8, 0);
  REQUIRE(plan.rounds == 3);
  std::map<std::uint32_t, std::set<std::pair<rank_t, rank_t>>> by_round;
  for (const auto& e : plan.edges) by_round[e.round].insert({e.from, e.to});
  CHECK(by_round[0] == std::set<std::pair<rank_t, rank_t>>{{0, 4}});
  CHECK(by_round[1] == std::set<std::pair<rank_t, rank_t>>{{0, 2}, {4, 6}});
  CHECK(by_round[2] == std::set<std::pair<rank_t, rank_t>>{{0, 1}, {2, 3}, {4, 5}, {6, 7}});
}

TEST_CASE("two-rank plan is one send and one receive") {
  const bcast_plan plan = plan_binomial_bcast(2, 0);
  REQUIRE(plan.rounds == 1);
  REQUIRE(plan.edges.size() == 1);
  CHECK(plan.edges[0].from == 0);
  CHECK(plan.edges[0].to == 1);
  CHECK(plan.edges[0].round == 0);
}

TEST_CASE("single-rank plan is empty") {
  const bcast_plan plan = plan_binomial_bcast(1, 0);
  CHECK(plan.rounds == 0);
  CHECK(plan.edges.empty());
}

TEST_CASE("linear plan: root sends size-1 messages in one round") {
  const bcast_plan plan = plan_linear_bcast(5, 2);
  CHECK(plan.rounds == 1);
  CHECK(plan.edges.size() == 4);
  for (const auto& e : plan.edges) {
    CHECK(e.from == 2);
    CHECK(e.round == 0);
  }
}

TEST_CASE("the two-rank scheduled broadcast is a single round with one op per rank") {
  world_config cfg;
  cfg.size = 2;
  std::atomic<int> bad{0};
  world_run(cfg, [&](rank_context& ctx) {
    std::vector<std::int32_t> buf(8, ctx.rank() == 0 ? 42 : 0);
    communicator comm = ctx.comm();
    schedule s(comm);
    append_bcast_rounds(s, comm.with_context(k_context_collective), buf.data(), buf.size(),
                        datatype::int32, plan_binomial_bcast(2, 0), 500);
    request comp = s.commit();
    if (s.round_count() != 1) ++bad;
    if (s.state()->rounds[0]->subrequests.size() != 1) ++bad;
    comp.start();
    comp.wait();
    if (buf[0] != 42) ++bad;
    comp.free();
    s.free();
  });
  CHECK(bad == 0);
}

TEST_CASE("scheduled broadcast equals the direct baseline across the grid") {
  std::atomic<std::uint64_t> mismatches{0};
  for (rank_t size : {1u, 2u, 4u, 8u}) {
    for (rank_t root : {0u, size - 1}) {
      if (root >= size) continue;
      for (std::size_t bytes : {4ull * 1, 4ull * 256}) {
        const int restarts = (size == 4 && root == 0 && bytes == 4 * 256) ? 100 : 10;
        world_config cfg;
        cfg.size = size;
        cfg.progress_threads = 2;
        world_run(cfg, [&](rank_context& ctx) {
          const std::size_t count = bytes / 4;
          std::vector<std::int32_t> sched_buf(count, 0);
          std::vector<std::int32_t> direct_buf(count, 0);
          request bc = bcast_schedule_init(ctx.comm(), sched_buf.data(), count,
                                           datatype::int32, root);
          for (int it = 0; it < restarts; ++it) {
            if (ctx.rank() == root) {
              for (std::size_t i = 0; i < count; ++i) {
                sched_buf[i] = static_cast<std::int32_t>(it * 1000 + i);
                direct_buf[i] = static_cast<std::int32_t>(it * 1000 + i);
              }
            } else {
              std::fill(sched_buf.begin(), sched_buf.end(), -1);
              std::fill(direct_buf.begin(), direct_buf.end(), -1);
            }
            ctx.barrier();
            bc.start();
            direct_bcast(ctx.comm(), direct_buf.data(), count, datatype::int32, root);
            bc.wait();
            for (std::size_t i = 0; i < count; ++i) {
              if (sched_buf[i] != direct_buf[i]) ++mismatches;
              if (sched_buf[i] != static_cast<std::int32_t>(it * 1000 + i)) ++mismatches;
            }
            ctx.barrier();
          }
          bc.free();
        });
      }
    }
  }
  CHECK(mismatches == 0);
}

TEST_CASE("scheduled broadcast works with the linear topology too") {
  std::atomic<std::uint64_t> mismatches{0};
  world_config cfg;
  cfg.size = 4;
  world_run(cfg, [&](rank_context& ctx) {
    std::vector<std::int32_t> buf(16, ctx.rank() == 1 ? 7 : 0);
    request bc = bcast_schedule_init(ctx.comm(), buf.data(), buf.size(), datatype::int32, 1,
                                     bcast_topology::linear);
    bc.start();
    bc.wait();
    for (auto vlu : buf) {
      if (vlu != 7) ++mismatches;
    }
    bc.free();
  });
  CHECK(mismatches == 0);
}

TEST_CASE("direct broadcast delivers the root buffer everywhere") {
  std::atomic<std::uint64_t> mismatches{0};
  world_config cfg;
  cfg.size = 8;
  world_run(cfg, [&](rank_context& ctx) {
    constexpr std::size_t count = 64 * 1024 / 8;
    std::vector<std::int64_t> buf(count, 0);
    if (ctx.rank() == 0) {
      for (std::size_t i = 0; i < count; ++i) buf[i] = static_cast<std::int64_t>(i * 3 + 1);
    }
    direct_bcast(ctx.comm(), buf.data(), count, datatype::int64, 0);
    for (std::size_t i = 0; i < count; ++i) {
      if (buf[i] != static_cast<std::int64_t>(i * 3 + 1)) ++mismatches;
    }
  });
  CHECK(mismatches == 0);
  // single rank: nothing to do
  world_config solo;
  solo.size = 1;
  world_run(solo, [](rank_context& ctx) {
    std::int32_t x = 3;
    direct_bcast(ctx.comm(), &x, 1, datatype::int32, 0);
    CHECK(x == 3);
  });
}

TEST_CASE("scheduled reduce: small sum spot check") {
  world_config cfg;
  cfg.size = 4;
  std::atomic<int> fails{0};
  world_run(cfg, [&](rank_context& ctx) {
    std::int32_t contrib = static_cast<std::int32_t>(ctx.rank());
    std::int32_t result = -1;
    request red = reduce_schedule_init(ctx.comm(), &contrib, &result, 1, datatype::int32,
                                       reduce_op::sum, 0);
    red.start();
    red.wait();
    if (ctx.rank() == 0 && result != 0 + 1 + 2 + 3) ++fails;
    red.free();
  });
  CHECK(fails == 0);
}

TEMPLATE_TEST_CASE("scheduled reduce equals the tree-order fold oracle", "[reduce]",
                   std::int32_t, double) {
  using T = TestType;
  const datatype dt = std::is_same_v<T, std::int32_t> ? datatype::int32 : datatype::float64;
  std::mt19937 rng(std::is_same_v<T, std::int32_t> ? 11u : 12u);

  for (reduce_op op : {reduce_op::sum, reduce_op::max, reduce_op::min}) {
    for (rank_t size : {2u, 4u, 8u}) {
      for (rank_t root : {0u, size / 2}) {
        constexpr std::size_t n = 64;
        std::vector<std::vector<T>> contribs;
        for (rank_t r = 0; r < size; ++r) {
          contribs.push_back(schedmp_test::random_vector<T>(rng, n));
        }
        const std::vector<T> expected = tree_reduce_oracle<T>(contribs, op, root);

        std::atomic<std::uint64_t> mismatches{0};
        world_config cfg;
        cfg.size = size;
        cfg.progress_threads = 2;
        world_run(cfg, [&](rank_context& ctx) {
          std::vector<T> result(n, T{});
          request red = reduce_schedule_init(ctx.comm(), contribs[ctx.rank()].data(),
                                             result.data(), n, dt, op, root);
          for (int it = 0; it < 3; ++it) {
            red.start();
            red.wait();
            if (ctx.rank() == root) {
              for (std::size_t i = 0; i < n; ++i) {
                // bitwise equality: the combine order is fixed by the tree
                if (std::memcmp(&result[i], &expected[i], sizeof(T)) != 0) ++mismatches;
              }
            }
            ctx.barrier();
          }
          red.free();
        });
        CAPTURE(static_cast<int>(op), size, root);
        CHECK(mismatches == 0);
      }
    }
  }
}

TEST_CASE("reduce-then-forward pattern: the reduction is a run-once prologue") {
  // reduce to rank 0, then send the result to a non-zero root on every start
  constexpr int s_count = 3;
  const rank_t target = 2;
  std::atomic<int> received{0};
  std::atomic<int> bad{0};

  world_config cfg;
  cfg.size = 4;
  cfg.event_log = true;
  auto report = world_run(cfg, [&](rank_context& ctx) {
    constexpr std::size_t n = 8;
    std::vector<std::int32_t> contrib(n, static_cast<std::int32_t>(ctx.rank() + 1));
    std::vector<std::int32_t> reduced(n, 0);
    std::vector<std::int32_t> forwarded(n, 0);

    communicator comm = ctx.comm();
    schedule s(comm);
    auto scratch = append_reduce_rounds(s, comm.with_context(k_context_collective),
                                        contrib.data(), reduced.data(), n, datatype::int32,
                                        reduce_op::sum, 0, 700);
    s.next_round();
    s.mark_reset_point();  // everything above runs only on the first start
    if (ctx.rank() == 0) {
      s.add_operation(comm.send_init(reduced.data(), n, datatype::int32, target, 701), true);
    } else if (ctx.rank() == target) {
      s.add_operation(comm.recv_init(forwarded.data(), n, datatype::int32, 0, 701), true);
    } else {
      s.add_reduce(reduce_op::sum, nullptr, nullptr, 0, datatype::int32);
    }
    request comp = s.commit();
    for (auto& sc : scratch) comp.impl()->retained.push_back(sc);

    for (int i = 0; i < s_count; ++i) {
      comp.start();
      comp.wait();
      if (ctx.rank() == target) {
        ++received;
        if (forwarded[0] != 1 + 2 + 3 + 4) ++bad;
      }
    }
    ctx.barrier();
    comp.free();
    s.free();
  });

  CHECK(received == s_count);
  CHECK(bad == 0);
  CHECK_FALSE(verify_round_ordering(report.events).has_value());

  // prologue rounds (the reduction) launched exactly once per rank,
  // body rounds s_count times: check rank 0's stream
  std::map<std::int64_t, int> launches;
  std::int64_t max_round = -1;
  for (const auto& e : report.events) {
    if (e.rank == 0 && e.event == event_kind::round_launch) {
      launches[e.round]++;
      max_round = std::max(max_round, e.round);
    }
  }
  REQUIRE(max_round >= 1);
  for (const auto& [round, n] : launches) {
    if (round == max_round) {
      CHECK(n == s_count);  // the forward send
    } else {
      CHECK(n == 1);  // every reduction round
    }
  }
}
