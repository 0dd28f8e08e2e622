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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace medfuse {

/// Writes `contents` to a sibling temp file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view data);

std::string hex64(std::uint64_t v);

/// Shortest decimal text that parses back to the same double ("250", "1.5").
std::string format_double(double v);

/// Strict parse: the whole field must be a finite number.
std::optional<double> parse_double(std::string_view text);

std::optional<long long> parse_int(std::string_view text);

std::string_view trim(std::string_view s);

std::string to_lower(std::string_view s);

std::vector<std::string> split(std::string_view s, char delim);

/// Splits one CSV record. Double-quoted fields may contain commas and "" escapes.
std::vector<std::string> split_csv_line(std::string_view line);

/// Quotes a CSV field only when it contains a comma, quote or newline.
std::string csv_escape(std::string_view field);

std::string base64_encode(std::string_view bytes);

/// Returns std::nullopt on invalid characters or length.
std::optional<std::string> base64_decode(std::string_view text);

/// "key = value" lines; blank lines and '#' comments are skipped. Throws
/// FormatError on a line without '=' or a repeated key.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text);

}  // namespace medfuse
