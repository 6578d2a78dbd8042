// Copyright (c) 2026 The schedmp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <random>
#include <vector>

#include "schedmp/types.hpp"

namespace schedmp_test {

inline std::vector<std::byte> bytes_of_u32(std::uint32_t v) {
  std::vector<std::byte> out(4);
  std::memcpy(out.data(), &v, 4);
  return out;
}

inline std::uint32_t u32_of_bytes(const std::vector<std::byte>& b) {
  std::uint32_t v = 0;
  std::memcpy(&v, b.data(), 4);
  return v;
}

template <typename T>
std::vector<T> random_vector(std::mt19937& rng, std::size_t n) {
  std::vector<T> v(n);
  if constexpr (std::is_floating_point_v<T>) {
    std::uniform_real_distribution<double> dist(-100.0, 100.0);
    for (auto& x : v) x = static_cast<T>(dist(rng));
  } else {
    std::uniform_int_distribution<std::int64_t> dist(-1000000, 1000000);
    for (auto& x : v) x = static_cast<T>(dist(rng));
  }
  return v;
}

}  // namespace schedmp_test
