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

// The medfuse command line. Subcommands: synth, prepare, render-labtext,
// pretrain-mltm, train, evaluate, mi-bench, gradcheck.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
// Failures print one JSON object on the error stream:
//   {"error":"config","exit":1,"message":"fusion.lambda must be in [0, 1]"}

#include <ostream>
#include <string>
#include <vector>

namespace medfuse::cli {

/// `args` excludes the program name. A successful command prints one summary
/// line (a JSON object, or the rendered text for render-labtext) to `out`.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace medfuse::cli
