// Copyright 2026 The medfuse Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Text form of the plain config structs. Each struct exposes its fields through
// a visit_fields(config, f) overload calling f(key, member) in a fixed order.

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>

#include "medfuse/errors.hpp"
#include "medfuse/io_util.hpp"
#include "medfuse/nn.hpp"

namespace medfuse {

inline std::string field_to_string(int v) { return std::to_string(v); }
inline std::string field_to_string(std::uint64_t v) { return std::to_string(v); }
inline std::string field_to_string(double v) { return format_double(v); }
inline std::string field_to_string(bool v) { return v ? "true" : "false"; }
inline std::string field_to_string(const std::string& v) { return v; }
inline std::string field_to_string(nn::Activation v) { return nn::activation_name(v); }

/// Returns false when the text does not parse as the field's type.
inline bool field_from_string(std::string_view s, int& out) {
  const auto v = parse_int(s);
  if (!v || *v < INT32_MIN || *v > INT32_MAX) return false;
  out = static_cast<int>(*v);
  return true;
}
inline bool field_from_string(std::string_view s, std::uint64_t& out) {
  s = trim(s);
  std::uint64_t v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || end != s.data() + s.size()) return false;
  out = v;
  return true;
}
inline bool field_from_string(std::string_view s, double& out) {
  const auto v = parse_double(s);
  if (!v) return false;
  out = *v;
  return true;
}
inline bool field_from_string(std::string_view s, bool& out) {
  if (s == "true" || s == "1") out = true;
  else if (s == "false" || s == "0") out = false;
  else return false;
  return true;
}
inline bool field_from_string(std::string_view s, std::string& out) {
  out = std::string(s);
  return true;
}
inline bool field_from_string(std::string_view s, nn::Activation& out) {
  if (s == "gelu") out = nn::Activation::kGelu;
  else if (s == "tanh") out = nn::Activation::kTanh;
  else if (s == "identity") out = nn::Activation::kIdentity;
  else return false;
  return true;
}

/// "key = value" lines with every field materialised.
template <class Config>
std::string fields_to_text(const Config& c) {
  std::string out;
  visit_fields(c, [&](std::string_view key, const auto& value) {
    out += std::string(key) + " = " + field_to_string(value) + "\n";
  });
  return out;
}

/// Sets one field; ConfigError names "<section>.<key>" when the key is unknown
/// or the value does not parse.
template <class Config>
void set_field(Config& c, std::string_view section, const std::string& key, const std::string& value) {
  bool found = false;
  visit_fields(c, [&](std::string_view k, auto& member) {
    if (k != key) return;
    found = true;
    if (!field_from_string(value, member)) {
      throw ConfigError(std::string(section) + "." + key + ": cannot parse '" + value + "'");
    }
  });
  if (!found) throw ConfigError("unknown key " + std::string(section) + "." + key);
}

template <class Config>
Config fields_from_text(std::string_view text, std::string_view section) {
  Config c;
  for (const auto& [key, value] : parse_key_values(text)) set_field(c, section, key, value);
  return c;
}

}  // namespace medfuse
