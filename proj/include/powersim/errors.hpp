// Copyright 2026 The powersim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace powersim {

// Argument outside a closed interval (power caps, anchor powers).
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Argument outside a function's domain (zero tokens, empty batch, empty sample set).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed or inconsistent input file; message names the field or line.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Simulation or experiment configuration that cannot be run.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace powersim
