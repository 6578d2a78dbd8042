// Copyright (c) 2026 The schedmp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Benchmark driver: schedule creation overhead, scheduled-vs-direct broadcast
// ratio, and communication/computation overlap. Emits CSV.

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "schedmp/schedmp.hpp"

namespace {

struct global_options {
  unsigned progress_threads = 1;
  std::string event_log_path;
  std::string csv_path;
  std::string transport = "inproc";
};

schedmp::world_config base_config(const global_options& g) {
  schedmp::world_config cfg;
  cfg.progress_threads = g.progress_threads;
  cfg.transport = g.transport == "tcp" ? schedmp::transport_kind::tcp
                                       : schedmp::transport_kind::inproc;
  cfg.event_log = !g.event_log_path.empty();
  return cfg;
}

void emit(const std::vector<schedmp::bench_record>& records, const global_options& g) {
  std::ostringstream csv;
  csv << schedmp::bench_csv_header() << '\n';
  for (const auto& r : records) csv << schedmp::to_csv_row(r) << '\n';
  if (g.csv_path.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream out(g.csv_path);
    if (!out) {
      std::cerr << "cannot open " << g.csv_path << '\n';
      std::exit(1);
    }
    out << csv.str();
    std::cout << "wrote " << records.size() << " rows to " << g.csv_path << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"schedbench - benchmarks for the schedule runtime"};
  app.require_subcommand(1);

  global_options g;
  app.add_option("--progress-threads", g.progress_threads, "progress threads per rank")
      ->capture_default_str();
  app.add_option("--event-log", g.event_log_path, "write the event log to this file");
  app.add_option("--csv", g.csv_path, "write CSV here instead of stdout");

  auto* create = app.add_subcommand("create-overhead", "schedule build+commit cost");
  std::size_t ops = 16;
  std::size_t reps = 1000;
  create->add_option("--ops", ops, "operations per schedule")->capture_default_str();
  create->add_option("--reps", reps, "repetitions")->capture_default_str();

  auto* bcast = app.add_subcommand("bcast", "scheduled vs direct broadcast ratio");
  unsigned bc_ranks = 0;
  std::size_t bc_iters = 100;
  std::size_t bc_bytes = 1024;
  std::string bc_transport = "inproc";
  bool full_grid = false;
  bcast->add_option("--ranks", bc_ranks, "rank count (omit to sweep the desk grid)");
  bcast->add_option("--iters", bc_iters, "broadcasts per measurement")->capture_default_str();
  bcast->add_option("--bytes", bc_bytes, "payload bytes")->capture_default_str();
  bcast->add_option("--transport", bc_transport, "inproc|tcp")->capture_default_str();
  bcast->add_flag("--full-grid", full_grid, "sweep ranks {2,4,8,16,32} instead of {2,4,8}");

  auto* overlap = app.add_subcommand("overlap", "free time while a schedule progresses");
  unsigned ov_ranks = 4;
  std::size_t blocks = 6;
  double block_ms = 20.0;
  std::size_t seqs = 3;
  overlap->add_option("--ranks", ov_ranks, "rank count")->capture_default_str();
  overlap->add_option("--compute-blocks", blocks, "independent compute blocks")
      ->capture_default_str();
  overlap->add_option("--block-ms", block_ms, "milliseconds per compute block")
      ->capture_default_str();
  overlap->add_option("--comm-seqs", seqs, "communication rounds in the schedule")
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    std::vector<schedmp::bench_record> records;
    std::string event_log;
    std::string* log_out = g.event_log_path.empty() ? nullptr : &event_log;

    if (create->parsed()) {
      records = schedmp::bench_create_overhead(base_config(g), ops, reps, log_out);
    } else if (bcast->parsed()) {
      g.transport = bc_transport;
      auto cfg = base_config(g);
      if (bc_ranks != 0) {
        records = schedmp::bench_bcast_ratio(cfg, bc_ranks, bc_iters, bc_bytes, 3, log_out);
      } else {
        std::vector<unsigned> grid = {2, 4, 8};
        if (full_grid) {
          grid.push_back(16);
          grid.push_back(32);
        }
        for (unsigned r : grid) {
          for (std::size_t it : {std::size_t{10}, std::size_t{50}, std::size_t{100},
                                 std::size_t{1000}}) {
            std::string run_log;
            auto rows = schedmp::bench_bcast_ratio(cfg, r, it, bc_bytes, 3,
                                                   log_out ? &run_log : nullptr);
            records.insert(records.end(), rows.begin(), rows.end());
            event_log += run_log;
          }
        }
      }
    } else if (overlap->parsed()) {
      records = schedmp::bench_overlap(base_config(g), ov_ranks, blocks, block_ms, seqs,
                                       log_out);
    }
    emit(records, g);

    if (!g.event_log_path.empty()) {
      std::ofstream out(g.event_log_path);
      if (!out) {
        std::cerr << "cannot open " << g.event_log_path << '\n';
        return 1;
      }
      out << event_log;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
