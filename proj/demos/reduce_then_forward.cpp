// Copyright (c) 2026 The schedmp Authors
// SPDX-License-Identifier: Apache-2.0
//
// A composite that reduces to rank 0 once (run-once prologue) and then
// forwards the result to another rank on every start. The reset point makes
// the reduction run only the first time.

#include <cstdio>
#include <vector>

#include "schedmp/schedmp.hpp"

int main() {
  using namespace schedmp;

  world_config cfg;
  cfg.size = 4;

  world_run(cfg, [](rank_context& ctx) {
    const rank_t target = 3;
    constexpr std::size_t n = 8;
    std::vector<std::int64_t> contrib(n, static_cast<std::int64_t>(ctx.rank()) + 1);
    std::vector<std::int64_t> reduced(n, 0);
    std::vector<std::int64_t> final_buf(n, 0);

    communicator comm = ctx.comm();
    schedule sched(comm);
    auto scratch = append_reduce_rounds(sched, comm.with_context(k_context_collective),
                                        contrib.data(), reduced.data(), n, datatype::int64,
                                        reduce_op::sum, 0, /*tag=*/900);
    sched.next_round();
    sched.mark_reset_point();  // the reduction above runs only on the first start
    if (ctx.rank() == 0) {
      sched.add_operation(comm.send_init(reduced.data(), n, datatype::int64, target, 901));
    } else if (ctx.rank() == target) {
      sched.add_operation(comm.recv_init(final_buf.data(), n, datatype::int64, 0, 901));
    } else {
      sched.add_reduce(reduce_op::sum, nullptr, nullptr, 0, datatype::int64);
    }
    request composite = sched.commit();
    for (auto& s : scratch) composite.impl()->retained.push_back(s);

    for (int run = 0; run < 3; ++run) {
      composite.start();
      composite.wait();
    }

    if (ctx.rank() == target) {
      // 1+2+3+4 contributed once per element
      std::printf("rank %u received %lld (expected 10)\n", ctx.rank(),
                  static_cast<long long>(final_buf[0]));
    }
    ctx.barrier();
    composite.free();
    sched.free();
  });
  return 0;
}
