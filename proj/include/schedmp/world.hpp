// Copyright (c) 2026 The schedmp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <exception>
#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "schedmp/api.hpp"
#include "schedmp/collectives.hpp"
#include "schedmp/tcp.hpp"
#include "schedmp/transport.hpp"

namespace schedmp {

enum class transport_kind { inproc, tcp };

inline const char* transport_kind_name(transport_kind t) {
  return t == transport_kind::inproc ? "inproc" : "tcp";
}

struct world_config {
  rank_t size = 1;
  transport_kind transport = transport_kind::inproc;
  unsigned progress_threads = 1;
  // host:port per rank for tcp; empty list auto-assigns loopback ports
  std::vector<std::string> addresses;
  bool event_log = false;
};

class rank_panic : public error {
 public:
  rank_panic(rank_t rank, const std::string& what)
      : error(errc::panic_in_rank, "rank " + std::to_string(rank) + ": " + what),
        m_rank(rank) {}

  rank_t rank() const noexcept { return m_rank; }

 private:
  rank_t m_rank;
};

struct world_report {
  std::vector<event_record> events;
  std::uint64_t frames_sent = 0;
  std::uint64_t frames_delivered = 0;
  std::vector<std::uint64_t> test_calls_per_rank;

  std::string event_log_text() const {
    std::string out;
    for (const auto& e : events) {
      out += to_line(e);
      out += '\n';
    }
    return out;
  }
};

// One rank's runtime as seen from its entry function.
class rank_context {
 public:
  rank_context(detail::rank_services& svc, context_t user_ctx)
      : m_svc(&svc), m_comm(svc, user_ctx) {}

  rank_t rank() const noexcept { return m_svc->rank; }
  rank_t size() const noexcept { return m_svc->size; }
  communicator& comm() noexcept { return m_comm; }
  detail::rank_services& services() noexcept { return *m_svc; }

  void barrier() { ::schedmp::barrier(m_comm); }

 private:
  detail::rank_services* m_svc;
  communicator m_comm;
};

// Spawns `size` ranks (threads), each with its own transport endpoint and
// progress engine, runs the entry on every rank, drains pending schedule
// epilogues, and tears the fabric down. Returns after everything joined.
inline world_report world_run(const world_config& config,
                              const std::function<void(rank_context&)>& entry) {
  if (config.size < 1) throw_error(errc::invalid_argument, "world size must be >= 1");

  const rank_t size = config.size;
  event_log log(config.event_log);

  // transports
  std::vector<std::unique_ptr<transport_endpoint>> transports;
  if (config.transport == transport_kind::inproc) {
    auto fabric = std::make_shared<inproc_fabric>(size);
    for (rank_t r = 0; r < size; ++r) {
      transports.push_back(std::make_unique<inproc_endpoint>(fabric, r));
    }
  } else {
    std::vector<tcp_address> addrs;
    if (config.addresses.empty()) {
      addrs.assign(size, tcp_address{"127.0.0.1", 0});
    } else {
      if (config.addresses.size() != size) {
        throw_error(errc::invalid_argument, "address list size != world size");
      }
      for (const auto& a : config.addresses) addrs.push_back(parse_tcp_address(a));
    }
    std::vector<std::unique_ptr<tcp_endpoint>> eps;
    for (rank_t r = 0; r < size; ++r) {
      eps.push_back(std::make_unique<tcp_endpoint>(r, size, addrs[r]));
      addrs[r].port = eps.back()->bound_port();
    }
    for (auto& ep : eps) ep->connect_mesh(addrs);
    for (auto& ep : eps) transports.push_back(std::move(ep));
  }

  // engines and per-rank services
  std::vector<std::unique_ptr<progress_engine>> engines;
  std::vector<std::unique_ptr<detail::rank_services>> services;
  engine_config ecfg{config.progress_threads};
  for (rank_t r = 0; r < size; ++r) {
    engines.push_back(std::make_unique<progress_engine>(*transports[r], log, r, ecfg));
    auto svc = std::make_unique<detail::rank_services>();
    svc->rank = r;
    svc->size = size;
    svc->transport = transports[r].get();
    svc->engine = engines[r].get();
    svc->log = &log;
    services.push_back(std::move(svc));
  }
  for (auto& e : engines) e->start();

  // rank entries
  std::vector<std::exception_ptr> errors(size);
  {
    std::vector<std::thread> threads;
    for (rank_t r = 0; r < size; ++r) {
      threads.emplace_back([&, r] {
        try {
          rank_context ctx(*services[r], k_context_user_base);
          entry(ctx);
        } catch (...) {
          errors[r] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
  }

  // Drain outstanding epilogues in parallel: one rank's epilogue may need a
  // peer's epilogue traffic to complete.
  {
    std::vector<std::thread> drains;
    for (rank_t r = 0; r < size; ++r) {
      drains.emplace_back([&, r] {
        try {
          detail::drain_rank_schedules(*services[r]);
        } catch (...) {
          if (!errors[r]) errors[r] = std::current_exception();
        }
      });
    }
    for (auto& t : drains) t.join();
  }

  // teardown: quiesce outbound, wait for in-flight frames, stop the engines
  for (auto& t : transports) t->close_outbound();
  for (auto& t : transports) t->wait_inbound_drained();
  for (auto& e : engines) e->shutdown();

  world_report report;
  report.events = log.snapshot();
  for (rank_t r = 0; r < size; ++r) {
    report.frames_sent += transports[r]->frames_sent();
    report.frames_delivered += transports[r]->frames_delivered();
    report.test_calls_per_rank.push_back(engines[r]->test_calls());
  }

  for (rank_t r = 0; r < size; ++r) {
    if (errors[r]) {
      try {
        std::rethrow_exception(errors[r]);
      } catch (const std::exception& e) {
        throw rank_panic(r, e.what());
      } catch (...) {
        throw rank_panic(r, "unknown error");
      }
    }
  }
  for (auto& e : engines) e->rethrow_if_failed();
  return report;
}

}  // namespace schedmp
