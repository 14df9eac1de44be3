// Copyright 2026 The powersim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

namespace powersim {

// Seeded stream over std::mt19937_64, whose output sequence is fixed by the
// C++ standard. Independent streams are derived from one base seed with
// splitmix64(seed + stream * 0x9E3779B97F4A7C15); stream 0 draws arrival gaps,
// stream 1 draws token lengths. Variates are computed from raw 64-bit draws,
// not from <random> distributions, so traces do not depend on the stdlib.
class RandomStream {
 public:
  static constexpr std::uint64_t kArrivalStream = 0;
  static constexpr std::uint64_t kLengthStream = 1;

  RandomStream(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on the open interval (0, 1) with 53 bits of resolution.
  double uniform_open();

  // Inverse-CDF exponential with the given rate.
  double exponential(double rate);

  // Uniform integer on [lo, hi] via 64x64->128 multiply-shift.
  long uniform_int(long lo, long hi);

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace powersim
