// Copyright (c) 2026 The schedmp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "schedmp/types.hpp"

namespace schedmp {

// Debug event stream, one record per line: rank,seq,event,round,op
//
// Field use per event kind:
//   round_launch        round = launched round id, op = predecessor round id (-1 if gated
//                       by start/free rather than by a prior round)
//   start / complete    round = owning round id, op = operation index within the round
//   composite_complete  round = last body round id, op = -1
//   epilogue_start      round = first epilogue round id, op = -1
//   test                round = -1, op = -1 (emitted on every request test call)
//
// Round ids are unique per rank across all schedules, assigned at commit in
// round order, so the stream stays unambiguous when several composites run.
enum class event_kind {
  start,
  complete,
  round_launch,
  composite_complete,
  epilogue_start,
  test,
};

inline const char* event_kind_name(event_kind k) {
  switch (k) {
    case event_kind::start: return "start";
    case event_kind::complete: return "complete";
    case event_kind::round_launch: return "round_launch";
    case event_kind::composite_complete: return "composite_complete";
    case event_kind::epilogue_start: return "epilogue_start";
    case event_kind::test: return "test";
  }
  return "unknown";
}

inline std::optional<event_kind> parse_event_kind(const std::string& s) {
  if (s == "start") return event_kind::start;
  if (s == "complete") return event_kind::complete;
  if (s == "round_launch") return event_kind::round_launch;
  if (s == "composite_complete") return event_kind::composite_complete;
  if (s == "epilogue_start") return event_kind::epilogue_start;
  if (s == "test") return event_kind::test;
  return std::nullopt;
}

struct event_record {
  rank_t rank = 0;
  std::uint64_t seq = 0;
  event_kind event = event_kind::start;
  std::int64_t round = -1;
  std::int64_t op = -1;
};

inline std::string to_line(const event_record& r) {
  std::ostringstream os;
  os << r.rank << ',' << r.seq << ',' << event_kind_name(r.event) << ',' << r.round << ','
     << r.op;
  return os.str();
}

class event_log {
 public:
  explicit event_log(bool enabled) : m_enabled(enabled) {}

  bool enabled() const noexcept { return m_enabled; }

  void record(rank_t rank, event_kind ev, std::int64_t round, std::int64_t op) {
    if (!m_enabled) return;
    const std::uint64_t seq = m_seq.fetch_add(1, std::memory_order_relaxed);
    std::lock_guard<std::mutex> lk(m_mu);
    m_records.push_back(event_record{rank, seq, ev, round, op});
  }

  std::vector<event_record> snapshot() const {
    std::lock_guard<std::mutex> lk(m_mu);
    return m_records;
  }

  std::string dump() const {
    std::ostringstream os;
    for (const auto& r : snapshot()) os << to_line(r) << '\n';
    return os.str();
  }

 private:
  bool m_enabled;
  std::atomic<std::uint64_t> m_seq{0};
  mutable std::mutex m_mu;
  std::vector<event_record> m_records;
};

inline std::vector<event_record> parse_event_log(const std::string& text) {
  std::vector<event_record> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    event_record r;
    std::getline(ls, field, ',');
    r.rank = static_cast<rank_t>(std::stoul(field));
    std::getline(ls, field, ',');
    r.seq = std::stoull(field);
    std::getline(ls, field, ',');
    auto kind = parse_event_kind(field);
    if (!kind) throw_error(errc::invalid_argument, "bad event kind in log: " + field);
    r.event = *kind;
    std::getline(ls, field, ',');
    r.round = std::stoll(field);
    std::getline(ls, field, ',');
    r.op = std::stoll(field);
    out.push_back(r);
  }
  return out;
}

// Scans an event stream and checks the round-chaining rule: a round may only
// launch once every operation of its predecessor round has completed.
// Returns a description of the first violation, or nullopt if the log is clean.
inline std::optional<std::string> verify_round_ordering(const std::vector<event_record>& recs) {
  struct round_tally {
    std::int64_t started = 0;
    std::int64_t completed = 0;
  };
  // per rank, per round id
  std::unordered_map<std::uint64_t, round_tally> tally;
  auto key = [](rank_t rank, std::int64_t round) {
    return (static_cast<std::uint64_t>(rank) << 40) ^ static_cast<std::uint64_t>(round);
  };

  // Records are appended per rank in seq order but interleaved across ranks;
  // sort by (rank, seq) to recover each rank's stream.
  std::vector<event_record> sorted = recs;
  std::sort(sorted.begin(), sorted.end(), [](const event_record& a, const event_record& b) {
    if (a.rank != b.rank) return a.rank < b.rank;
    return a.seq < b.seq;
  });

  for (const auto& r : sorted) {
    switch (r.event) {
      case event_kind::start:
        tally[key(r.rank, r.round)].started++;
        break;
      case event_kind::complete:
        tally[key(r.rank, r.round)].completed++;
        break;
      case event_kind::round_launch: {
        if (r.op >= 0) {
          const auto& pred = tally[key(r.rank, r.op)];
          if (pred.started == 0 || pred.started != pred.completed) {
            std::ostringstream os;
            os << "rank " << r.rank << " seq " << r.seq << ": round " << r.round
               << " launched while predecessor round " << r.op << " had " << pred.started
               << " starts / " << pred.completed << " completions";
            return os.str();
          }
        }
        break;
      }
      default:
        break;
    }
  }
  return std::nullopt;
}

}  // namespace schedmp
