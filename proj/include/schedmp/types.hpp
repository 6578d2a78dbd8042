// Copyright (c) 2026 The schedmp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace schedmp {

using rank_t = std::uint32_t;
using tag_t = std::int32_t;
using context_t = std::uint32_t;

// Contexts 0..15 are reserved for runtime-internal traffic (built-in
// collectives, barriers). User communicators start at 16.
inline constexpr context_t k_context_collective = 1;
inline constexpr context_t k_context_direct_collective = 2;
inline constexpr context_t k_context_barrier = 3;
inline constexpr context_t k_context_user_base = 16;

enum class datatype : std::uint32_t {
  byte = 0,
  int32 = 1,
  int64 = 2,
  float64 = 3,
};

constexpr std::size_t elem_size(datatype dt) {
  switch (dt) {
    case datatype::byte: return 1;
    case datatype::int32: return 4;
    case datatype::int64: return 8;
    case datatype::float64: return 8;
  }
  return 0;
}

constexpr bool is_valid_datatype(datatype dt) {
  return dt == datatype::byte || dt == datatype::int32 || dt == datatype::int64 ||
         dt == datatype::float64;
}

// Wire/matching metadata of one message.
struct envelope {
  context_t context = 0;
  rank_t src = 0;
  rank_t dst = 0;
  tag_t tag = 0;
  datatype dtype = datatype::byte;
  std::uint64_t payload_len = 0;

  friend bool operator==(const envelope&, const envelope&) = default;
};

enum class errc {
  invalid_rank,
  invalid_count,
  invalid_argument,
  invalid_state,
  invalid_handle,
  invalid_mark,
  already_active,
  still_active,
  owned_by_schedule,
  request_owned,
  request_active,
  already_committed,
  empty_schedule,
  double_free,
  freed,
  length_mismatch,
  unsupported_datatype,
  transport_closed,
  engine_shutdown,
  bind_failure,
  panic_in_rank,
};

inline const char* errc_name(errc c) {
  switch (c) {
    case errc::invalid_rank: return "invalid_rank";
    case errc::invalid_count: return "invalid_count";
    case errc::invalid_argument: return "invalid_argument";
    case errc::invalid_state: return "invalid_state";
    case errc::invalid_handle: return "invalid_handle";
    case errc::invalid_mark: return "invalid_mark";
    case errc::already_active: return "already_active";
    case errc::still_active: return "still_active";
    case errc::owned_by_schedule: return "owned_by_schedule";
    case errc::request_owned: return "request_owned";
    case errc::request_active: return "request_active";
    case errc::already_committed: return "already_committed";
    case errc::empty_schedule: return "empty_schedule";
    case errc::double_free: return "double_free";
    case errc::freed: return "freed";
    case errc::length_mismatch: return "length_mismatch";
    case errc::unsupported_datatype: return "unsupported_datatype";
    case errc::transport_closed: return "transport_closed";
    case errc::engine_shutdown: return "engine_shutdown";
    case errc::bind_failure: return "bind_failure";
    case errc::panic_in_rank: return "panic_in_rank";
  }
  return "unknown";
}

class error : public std::runtime_error {
 public:
  error(errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), m_code(code) {}

  errc code() const noexcept { return m_code; }

 private:
  errc m_code;
};

[[noreturn]] inline void throw_error(errc code, const std::string& what) {
  throw error(code, what);
}

inline void validate_envelope(const envelope& env, rank_t world_size) {
  if (env.src >= world_size || env.dst >= world_size) {
    throw_error(errc::invalid_rank, "envelope rank out of range");
  }
  if (!is_valid_datatype(env.dtype)) {
    throw_error(errc::unsupported_datatype, "unknown datatype code");
  }
  if (env.payload_len % elem_size(env.dtype) != 0) {
    throw_error(errc::invalid_argument, "payload length not a multiple of element size");
  }
}

}  // namespace schedmp
