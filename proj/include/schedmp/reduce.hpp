// Copyright (c) 2026 The schedmp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <functional>

#include "schedmp/types.hpp"

namespace schedmp {

enum class reduce_op : std::uint32_t {
  sum = 0,
  max = 1,
  min = 2,
  prod = 3,
  user = 4,
};

// Signature mirrors the classic reduction callback: combine invec into
// inoutvec elementwise, len elements of the given datatype.
using user_reduce_fn =
    std::function<void(const void* invec, void* inoutvec, std::size_t len, datatype dt)>;

struct reduce_op_descriptor {
  reduce_op op = reduce_op::sum;
  user_reduce_fn user_fn;  // required iff op == user
};

namespace detail {

// Integer sum/prod wrap (two's complement); float ops keep native IEEE-754
// semantics with no reassociation inside one apply.
template <typename T>
struct wrap_traits {
  using acc = T;
};
template <>
struct wrap_traits<std::int32_t> {
  using acc = std::uint32_t;
};
template <>
struct wrap_traits<std::int64_t> {
  using acc = std::uint64_t;
};

template <typename T>
void apply_builtin(reduce_op op, const T* in, T* inout, std::size_t len) {
  using acc_t = typename wrap_traits<T>::acc;
  switch (op) {
    case reduce_op::sum:
      for (std::size_t i = 0; i < len; ++i) {
        inout[i] = static_cast<T>(static_cast<acc_t>(in[i]) + static_cast<acc_t>(inout[i]));
      }
      break;
    case reduce_op::prod:
      for (std::size_t i = 0; i < len; ++i) {
        inout[i] = static_cast<T>(static_cast<acc_t>(in[i]) * static_cast<acc_t>(inout[i]));
      }
      break;
    case reduce_op::max:
      for (std::size_t i = 0; i < len; ++i) {
        if (in[i] > inout[i]) inout[i] = in[i];
      }
      break;
    case reduce_op::min:
      for (std::size_t i = 0; i < len; ++i) {
        if (in[i] < inout[i]) inout[i] = in[i];
      }
      break;
    case reduce_op::user:
      break;  // handled by caller
  }
}

}  // namespace detail

// inoutvec[i] = op(invec[i], inoutvec[i]) for i in [0, len). Buffers must be
// disjoint or share an identical start; partial overlap is the caller's bug.
inline void apply_reduce(const reduce_op_descriptor& desc, const void* invec, void* inoutvec,
                         std::size_t len, datatype dt) {
  if (!is_valid_datatype(dt)) {
    throw_error(errc::unsupported_datatype, "unknown datatype code");
  }
  if (len > 0 && (invec == nullptr || inoutvec == nullptr)) {
    throw_error(errc::length_mismatch, "null operand with nonzero length");
  }

  if (desc.op == reduce_op::user) {
    // User callbacks run even for len == 0; the callback owns the semantics.
    if (!desc.user_fn) {
      throw_error(errc::invalid_argument, "user reduce op without a callback");
    }
    desc.user_fn(invec, inoutvec, len, dt);
    return;
  }
  if (len == 0) return;

  switch (dt) {
    case datatype::byte:
      detail::apply_builtin(desc.op, static_cast<const std::uint8_t*>(invec),
                            static_cast<std::uint8_t*>(inoutvec), len);
      break;
    case datatype::int32:
      detail::apply_builtin(desc.op, static_cast<const std::int32_t*>(invec),
                            static_cast<std::int32_t*>(inoutvec), len);
      break;
    case datatype::int64:
      detail::apply_builtin(desc.op, static_cast<const std::int64_t*>(invec),
                            static_cast<std::int64_t*>(inoutvec), len);
      break;
    case datatype::float64:
      detail::apply_builtin(desc.op, static_cast<const double*>(invec),
                            static_cast<double*>(inoutvec), len);
      break;
  }
}

}  // namespace schedmp
