// Copyright 2026 The powersim Authors.
// SPDX-License-Identifier: Apache-2.0

#include "powersim/rng.hpp"

#include <cmath>

#include "powersim/errors.hpp"

namespace powersim {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

RandomStream::RandomStream(std::uint64_t seed, std::uint64_t stream)
    : engine_(splitmix64(seed + stream * 0x9E3779B97F4A7C15ULL)) {}

double RandomStream::uniform_open() {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RandomStream::exponential(double rate) {
  if (!(rate > 0.0)) throw DomainError("exponential: rate must be positive");
  return -std::log(uniform_open()) / rate;
}

long RandomStream::uniform_int(long lo, long hi) {
  if (hi < lo) throw DomainError("uniform_int: empty range");
  const auto span = static_cast<unsigned __int128>(hi - lo) + 1;
  const auto scaled = (static_cast<unsigned __int128>(next_u64()) * span) >> 64;
  return lo + static_cast<long>(scaled);
}

}  // namespace powersim
