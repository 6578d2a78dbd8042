// Copyright (c) 2026 The schedmp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "schedmp/collectives.hpp"
#include "schedmp/world.hpp"

namespace schedmp {

struct bench_record {
  std::string experiment;
  rank_t ranks = 1;
  std::uint64_t iters = 0;
  std::uint64_t bytes = 0;
  std::string mode;
  std::string metric;
  double value = 0.0;
  std::string units;
};

inline std::string bench_csv_header() {
  return "experiment,ranks,iters,bytes,mode,metric,value,units";
}

inline std::string to_csv_row(const bench_record& r) {
  std::ostringstream os;
  os << r.experiment << ',' << r.ranks << ',' << r.iters << ',' << r.bytes << ',' << r.mode
     << ',' << r.metric << ',' << r.value << ',' << r.units;
  return os.str();
}

namespace detail {

using bench_clock = std::chrono::steady_clock;

inline double ms_between(bench_clock::time_point a, bench_clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

// Busy compute stand-in; returns the time actually spent.
inline double spin_ms(double target_ms) {
  const auto t0 = bench_clock::now();
  const auto deadline = t0 + std::chrono::duration_cast<bench_clock::duration>(
                                 std::chrono::duration<double, std::milli>(target_ms));
  volatile std::uint64_t sink = 0;
  while (bench_clock::now() < deadline) {
    sink = sink + 1;
  }
  return ms_between(t0, bench_clock::now());
}

inline constexpr int k_warmup_iters = 5;

}  // namespace detail

// Wall time of create + adds + rounds + commit, averaged over reps.
// Communication never happens: the schedules are never started.
inline std::vector<bench_record> bench_create_overhead(const world_config& base_config,
                                                       std::size_t ops_per_schedule,
                                                       std::size_t reps,
                                                       std::string* event_log_out = nullptr) {
  world_config cfg = base_config;
  cfg.size = 1;
  cfg.event_log = cfg.event_log || event_log_out != nullptr;

  std::vector<double> samples;
  std::uint64_t commit_errors = 0;

  world_report report = world_run(cfg, [&](rank_context& ctx) {
    std::vector<std::int32_t> buf(64, 0);
    auto build = [&](bool timed) {
      const auto t0 = detail::bench_clock::now();
      schedule sched(ctx.comm());
      for (std::size_t i = 0; i < ops_per_schedule; ++i) {
        sched.add_operation(
            ctx.comm().send_init(buf.data(), buf.size(), datatype::int32, 0,
                                 static_cast<tag_t>(i)),
            true);
        if ((i + 1) % 4 == 0) sched.next_round();
      }
      bool errored = false;
      request composite;
      try {
        composite = sched.commit();
      } catch (const error& e) {
        if (e.code() != errc::empty_schedule) throw;
        errored = true;
      }
      const auto t1 = detail::bench_clock::now();
      if (timed) {
        if (errored) {
          ++commit_errors;
        } else {
          samples.push_back(detail::ms_between(t0, t1));
        }
      }
      sched.free();
    };
    for (int i = 0; i < detail::k_warmup_iters; ++i) build(false);
    for (std::size_t i = 0; i < reps; ++i) build(true);
  });
  if (event_log_out) *event_log_out = report.event_log_text();

  std::vector<bench_record> out;
  bench_record base{"create_overhead", 1,
                    static_cast<std::uint64_t>(reps), 0,
                    transport_kind_name(cfg.transport), "", 0.0, ""};
  if (commit_errors > 0) {
    bench_record r = base;
    r.metric = "commit_errors";
    r.value = static_cast<double>(commit_errors);
    r.units = "count";
    out.push_back(r);
  }
  if (!samples.empty()) {
    const double mean =
        std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
    double var = 0.0;
    for (double s : samples) var += (s - mean) * (s - mean);
    var /= static_cast<double>(samples.size());
    bench_record m = base;
    m.metric = "mean_ms";
    m.value = mean;
    m.units = "ms";
    out.push_back(m);
    bench_record sd = base;
    sd.metric = "stddev_ms";
    sd.value = std::sqrt(var);
    sd.units = "ms";
    out.push_back(sd);
  }
  return out;
}

// Scheduled vs direct broadcast: the schedule is built once and restarted
// iters times; the direct arm calls the blocking broadcast iters times.
// Both arms use the binomial plan. Ratio = scheduled / direct * 100.
// The measurement is repeated and the median-ratio repetition is reported.
inline std::vector<bench_record> bench_bcast_ratio(const world_config& base_config, rank_t ranks,
                                                   std::size_t iters, std::size_t bytes,
                                                   int repeats = 3,
                                                   std::string* event_log_out = nullptr) {
  world_config cfg = base_config;
  cfg.size = ranks;
  cfg.event_log = cfg.event_log || event_log_out != nullptr;

  std::mutex mu;
  std::vector<std::vector<double>> direct_ms(repeats, std::vector<double>(ranks, 0.0));
  std::vector<std::vector<double>> sched_ms(repeats, std::vector<double>(ranks, 0.0));

  world_report report = world_run(cfg, [&](rank_context& ctx) {
    const rank_t root = 0;
    std::vector<std::byte> buf(std::max<std::size_t>(bytes, 1));
    request composite =
        bcast_schedule_init(ctx.comm(), buf.data(), bytes, datatype::byte, root);

    for (int rep = 0; rep < repeats; ++rep) {
      // direct arm
      for (int i = 0; i < detail::k_warmup_iters; ++i) {
        direct_bcast(ctx.comm(), buf.data(), bytes, datatype::byte, root);
      }
      ctx.barrier();
      auto t0 = detail::bench_clock::now();
      for (std::size_t i = 0; i < iters; ++i) {
        direct_bcast(ctx.comm(), buf.data(), bytes, datatype::byte, root);
      }
      auto t1 = detail::bench_clock::now();
      {
        std::lock_guard<std::mutex> lk(mu);
        direct_ms[rep][ctx.rank()] = detail::ms_between(t0, t1);
      }

      // scheduled arm
      for (int i = 0; i < detail::k_warmup_iters; ++i) {
        composite.start();
        composite.wait();
      }
      ctx.barrier();
      t0 = detail::bench_clock::now();
      for (std::size_t i = 0; i < iters; ++i) {
        composite.start();
        composite.wait();
      }
      t1 = detail::bench_clock::now();
      {
        std::lock_guard<std::mutex> lk(mu);
        sched_ms[rep][ctx.rank()] = detail::ms_between(t0, t1);
      }
      ctx.barrier();
    }
    composite.free();
  });
  if (event_log_out) *event_log_out = report.event_log_text();

  // slowest rank defines the arm's time; the median-ratio rep is reported
  std::vector<double> ratios(repeats);
  std::vector<double> d_tot(repeats), s_tot(repeats);
  for (int rep = 0; rep < repeats; ++rep) {
    d_tot[rep] = *std::max_element(direct_ms[rep].begin(), direct_ms[rep].end());
    s_tot[rep] = *std::max_element(sched_ms[rep].begin(), sched_ms[rep].end());
    ratios[rep] = d_tot[rep] > 0 ? s_tot[rep] / d_tot[rep] * 100.0 : 0.0;
  }
  std::vector<int> order(repeats);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return ratios[a] < ratios[b]; });
  const int med = order[repeats / 2];

  bench_record base{"bcast_ratio", ranks,
                    static_cast<std::uint64_t>(iters), static_cast<std::uint64_t>(bytes),
                    transport_kind_name(cfg.transport), "", 0.0, ""};
  std::vector<bench_record> out;
  bench_record d = base;
  d.metric = "direct_total_ms";
  d.value = d_tot[med];
  d.units = "ms";
  out.push_back(d);
  bench_record s = base;
  s.metric = "sched_total_ms";
  s.value = s_tot[med];
  s.units = "ms";
  out.push_back(s);
  bench_record r = base;
  r.metric = "ratio_pct";
  r.value = ratios[med];
  r.units = "percent";
  out.push_back(r);
  return out;
}

// Free-time experiment: start a multi-round schedule, run the compute blocks
// with zero intermediate test calls, then wait. Free time is the fraction of
// the start-to-wait-return window spent in compute.
inline std::vector<bench_record> bench_overlap(const world_config& base_config, rank_t ranks,
                                               std::size_t compute_blocks, double block_ms,
                                               std::size_t comm_seqs,
                                               std::string* event_log_out = nullptr) {
  world_config cfg = base_config;
  cfg.size = ranks;
  cfg.event_log = true;  // proves the app thread never polls

  constexpr std::size_t k_payload = 64 * 1024;
  std::mutex mu;
  std::vector<double> free_pct(ranks, 0.0);
  std::vector<double> compute_ms(ranks, 0.0);
  std::vector<double> elapsed_ms(ranks, 0.0);

  world_report report = world_run(cfg, [&](rank_context& ctx) {
    const rank_t me = ctx.rank();
    const rank_t next = (me + 1) % ctx.size();
    const rank_t prev = (me + ctx.size() - 1) % ctx.size();
    std::vector<std::byte> out_buf(k_payload);
    std::vector<std::byte> in_buf(k_payload);

    communicator comm = ctx.comm();
    schedule sched(comm);
    for (std::size_t s = 0; s < comm_seqs; ++s) {
      if (s > 0) sched.next_round();
      if (ctx.size() > 1) {
        sched.add_operation(comm.send_init(out_buf.data(), k_payload, datatype::byte, next,
                                           static_cast<tag_t>(s)),
                            true);
        sched.add_operation(comm.recv_init(in_buf.data(), k_payload, datatype::byte, prev,
                                           static_cast<tag_t>(s)),
                            true);
      } else {
        sched.add_reduce(reduce_op::sum, nullptr, nullptr, 0, datatype::byte);
      }
    }
    request composite = sched.commit();

    composite.start();
    composite.wait();
    ctx.barrier();

    const auto t0 = detail::bench_clock::now();
    composite.start();
    double computed = 0.0;
    for (std::size_t k = 0; k < compute_blocks; ++k) {
      computed += detail::spin_ms(block_ms);
    }
    composite.wait();
    const auto t1 = detail::bench_clock::now();

    const double elapsed = detail::ms_between(t0, t1);
    {
      std::lock_guard<std::mutex> lk(mu);
      compute_ms[me] = computed;
      elapsed_ms[me] = elapsed;
      free_pct[me] = elapsed > 0 ? computed / elapsed * 100.0 : 0.0;
    }
    ctx.barrier();
    composite.free();
    sched.free();
  });

  if (event_log_out) *event_log_out = report.event_log_text();

  std::uint64_t app_tests = 0;
  for (auto c : report.test_calls_per_rank) app_tests += c;

  bench_record base{"overlap", ranks,
                    static_cast<std::uint64_t>(compute_blocks),
                    static_cast<std::uint64_t>(k_payload),
                    transport_kind_name(cfg.transport), "", 0.0, ""};
  std::vector<bench_record> out;
  bench_record f = base;
  f.metric = "free_time_pct";
  f.value = *std::min_element(free_pct.begin(), free_pct.end());
  f.units = "percent";
  out.push_back(f);
  bench_record c = base;
  c.metric = "compute_ms";
  c.value = *std::max_element(compute_ms.begin(), compute_ms.end());
  c.units = "ms";
  out.push_back(c);
  bench_record e = base;
  e.metric = "elapsed_ms";
  e.value = *std::max_element(elapsed_ms.begin(), elapsed_ms.end());
  e.units = "ms";
  out.push_back(e);
  bench_record t = base;
  t.metric = "app_test_calls";
  t.value = static_cast<double>(app_tests);
  t.units = "count";
  out.push_back(t);
  return out;
}

}  // namespace schedmp
