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

// Versioned binary container shared by MLTM, fusion and training checkpoints.
//
// Layout (all integers little-endian):
//   magic      8 bytes  "MEDFCKPT"
//   version    u32      (currently 1; loaders reject anything else)
//   component  u32 length + UTF-8 bytes ("mltm", "training", ...)
//   count      u32
//   entries    count x { name: u32 length + bytes,
//                        dtype: u8 (1 f32, 2 f64, 3 text, 4 u64),
//                        flags: u8 (bit 0: non-inference),
//                        ndim: u32, dims: u64[ndim],
//                        payload }
// Numeric payloads are row-major IEEE-754. Text payloads are a u64 length
// followed by bytes; u64 payloads are a single u64.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "medfuse/autodiff.hpp"

namespace medfuse {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { kF32 = 1, kF64 = 2, kText = 3, kU64 = 4 };

struct CheckpointEntry {
  std::string name;
  DType dtype = DType::kF32;
  bool non_inference = false;
  std::vector<std::uint64_t> shape;
  std::vector<double> numbers;  // f32 / f64
  std::string text;
  std::uint64_t u64 = 0;
};

class Checkpoint {
 public:
  Checkpoint() = default;
  explicit Checkpoint(std::string component) : component_(std::move(component)) {}

  const std::string& component() const { return component_; }
  const std::vector<CheckpointEntry>& entries() const { return entries_; }

  void put_f32(const std::string& name, const ad::Matrix& m, bool non_inference = false);
  void put_f64(const std::string& name, const ad::Matrix& m, bool non_inference = false);
  void put_text(const std::string& name, std::string text);
  void put_u64(const std::string& name, std::uint64_t v);

  bool has(const std::string& name) const;
  const CheckpointEntry& entry(const std::string& name) const;
  /// Reads a numeric entry back as a matrix; checks the shape when expected dims are given.
  ad::Matrix matrix(const std::string& name) const;
  ad::Matrix matrix(const std::string& name, Eigen::Index rows, Eigen::Index cols) const;
  const std::string& text(const std::string& name) const;
  std::uint64_t u64(const std::string& name) const;

  std::string serialize() const;
  static Checkpoint parse(std::string_view bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  CheckpointEntry& add(const std::string& name);

  std::string component_;
  std::vector<CheckpointEntry> entries_;
};

/// Stores every parameter of `module` as f32 under "<group>/<name>".
template <class Module>
void save_params(Checkpoint& ckpt, const std::string& group, const Module& module, bool non_inference = false) {
  visit_params(module, group, [&](const std::string& name, const ad::Matrix& m) {
    ckpt.put_f32(name, m, non_inference);
  });
}

/// Loads parameters saved by save_params into an already-shaped module.
template <class Module>
void load_params(const Checkpoint& ckpt, const std::string& group, Module& module) {
  visit_params(module, group, [&](const std::string& name, ad::Matrix& m) {
    m = ckpt.matrix(name, m.rows(), m.cols());
  });
}

}  // namespace medfuse
