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

#include "medfuse/run_config.hpp"

#include <set>

#include "medfuse/config_io.hpp"
#include "medfuse/errors.hpp"
#include "medfuse/io_util.hpp"

namespace medfuse {

void RunConfig::validate() const {
  data.validate();
  mltm.validate();
  train.validate(fusion);
}

std::string write_run_config(const RunConfig& c) {
  return "[data]\n" + fields_to_text(c.data) + "\n[mltm]\n" + fields_to_text(c.mltm) + "\n[fusion]\n" +
         fields_to_text(c.fusion) + "\n[train]\n" + fields_to_text(c.train);
}

void set_run_config_field(RunConfig& c, std::string_view dotted_key, const std::string& value) {
  const auto dot = dotted_key.find('.');
  if (dot == std::string_view::npos) throw ConfigError("config key '" + std::string(dotted_key) + "' has no section");
  const std::string section(dotted_key.substr(0, dot));
  const std::string key(dotted_key.substr(dot + 1));
  if (section == "data") set_field(c.data, section, key, value);
  else if (section == "mltm") set_field(c.mltm, section, key, value);
  else if (section == "fusion") set_field(c.fusion, section, key, value);
  else if (section == "train") set_field(c.train, section, key, value);
  else throw ConfigError("unknown config section [" + section + "]");
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig c;
  std::string section;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    const std::string line(trim(raw));
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      section = std::string(trim(std::string_view(line).substr(1, line.size() - 2)));
      if (section != "data" && section != "mltm" && section != "fusion" && section != "train") {
        throw ConfigError("unknown config section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    if (section.empty()) throw ConfigError("line " + std::to_string(line_no) + ": key outside of any section");
    const std::string dotted = section + "." + std::string(trim(std::string_view(line).substr(0, eq)));
    if (!seen.insert(dotted).second) throw ConfigError("repeated key " + dotted);
    set_run_config_field(c, dotted, std::string(trim(std::string_view(line).substr(eq + 1))));
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_file(path)); }

std::string run_config_hash(const RunConfig& c) { return hex64(fnv1a64(write_run_config(c))); }

bool operator==(const RunConfig& a, const RunConfig& b) { return write_run_config(a) == write_run_config(b); }

}  // namespace medfuse
