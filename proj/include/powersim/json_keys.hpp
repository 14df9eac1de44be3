// Copyright 2026 The powersim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <initializer_list>
#include <string_view>

#include <json.hpp>

#include "powersim/errors.hpp"

namespace powersim {

// Rejects keys outside `known` so that a misspelt field is not silently ignored.
inline void require_known_keys(const nlohmann::json& doc, std::initializer_list<std::string_view> known,
                               std::string_view section) {
  if (!doc.is_object()) throw ConfigError(std::string(section) + ": expected a JSON object");
  for (const auto& item : doc.items()) {
    if (std::find(known.begin(), known.end(), item.key()) == known.end()) {
      throw ConfigError(std::string(section) + ": unknown key '" + item.key() + "'");
    }
  }
}

}  // namespace powersim
