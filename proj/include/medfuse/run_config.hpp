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

// The run configuration file: INI-style sections [data], [mltm], [fusion] and
// [train] holding "key = value" lines. '#' starts a comment line.

#include <filesystem>
#include <string>
#include <string_view>

#include "medfuse/fusion.hpp"
#include "medfuse/mltm.hpp"
#include "medfuse/synth.hpp"
#include "medfuse/training.hpp"

namespace medfuse {

struct RunConfig {
  synth::GenConfig data;
  mltm::MltmConfig mltm;
  fusion::FusionConfig fusion;
  train::TrainConfig train;

  /// Runs every section's checks; the first failure names its dotted key.
  void validate() const;
};

/// Every field of every section, defaults included, in a fixed order.
std::string write_run_config(const RunConfig& config);

/// Missing keys keep their defaults. Unknown sections or keys, repeated keys
/// and unparsable values throw ConfigError naming "section.key".
RunConfig parse_run_config(std::string_view text);

RunConfig load_run_config(const std::filesystem::path& path);

/// Sets one field addressed as "section.key".
void set_run_config_field(RunConfig& config, std::string_view dotted_key, const std::string& value);

/// 16 hex digits over the canonical text.
std::string run_config_hash(const RunConfig& config);

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace medfuse
