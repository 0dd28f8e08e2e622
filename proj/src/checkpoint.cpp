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

#include "medfuse/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "medfuse/errors.hpp"
#include "medfuse/io_util.hpp"

namespace medfuse {

namespace {

constexpr char kMagic[8] = {'M', 'E', 'D', 'F', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(std::string_view s) { out_.append(s); }
  void str32(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(in_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(in_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string str32() { return bytes(u32()); }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

CheckpointEntry numeric_entry(const std::string& name, DType dtype, const ad::Matrix& m, bool non_inference) {
  CheckpointEntry e;
  e.name = name;
  e.dtype = dtype;
  e.non_inference = non_inference;
  e.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  e.numbers.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      e.numbers.push_back(dtype == DType::kF32 ? static_cast<double>(static_cast<float>(m(i, j))) : m(i, j));
    }
  }
  return e;
}

}  // namespace

CheckpointEntry& Checkpoint::add(const std::string& name) {
  for (auto& e : entries_) {
    if (e.name == name) throw ContractViolation("duplicate checkpoint entry '" + name + "'");
  }
  entries_.emplace_back();
  return entries_.back();
}

void Checkpoint::put_f32(const std::string& name, const ad::Matrix& m, bool non_inference) {
  add(name) = numeric_entry(name, DType::kF32, m, non_inference);
}

void Checkpoint::put_f64(const std::string& name, const ad::Matrix& m, bool non_inference) {
  add(name) = numeric_entry(name, DType::kF64, m, non_inference);
}

void Checkpoint::put_text(const std::string& name, std::string text) {
  auto& e = add(name);
  e.name = name;
  e.dtype = DType::kText;
  e.text = std::move(text);
}

void Checkpoint::put_u64(const std::string& name, std::uint64_t v) {
  auto& e = add(name);
  e.name = name;
  e.dtype = DType::kU64;
  e.u64 = v;
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

const CheckpointEntry& Checkpoint::entry(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw FormatError("checkpoint (" + component_ + ") has no entry '" + name + "'");
}

ad::Matrix Checkpoint::matrix(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::kF32 && e.dtype != DType::kF64) throw FormatError("entry '" + name + "' is not numeric");
  if (e.shape.size() != 2) throw FormatError("entry '" + name + "' is not two-dimensional");
  ad::Matrix m(static_cast<Eigen::Index>(e.shape[0]), static_cast<Eigen::Index>(e.shape[1]));
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = e.numbers[k++];
  }
  return m;
}

ad::Matrix Checkpoint::matrix(const std::string& name, Eigen::Index rows, Eigen::Index cols) const {
  ad::Matrix m = matrix(name);
  if (m.rows() != rows || m.cols() != cols) {
    throw FormatError("entry '" + name + "' has shape " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                      ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  return m;
}

const std::string& Checkpoint::text(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::kText) throw FormatError("entry '" + name + "' is not text");
  return e.text;
}

std::uint64_t Checkpoint::u64(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::kU64) throw FormatError("entry '" + name + "' is not u64");
  return e.u64;
}

std::string Checkpoint::serialize() const {
  Writer w;
  w.bytes(std::string_view(kMagic, sizeof(kMagic)));
  w.u32(kCheckpointVersion);
  w.str32(component_);
  w.u32(static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    w.str32(e.name);
    w.u8(static_cast<std::uint8_t>(e.dtype));
    w.u8(e.non_inference ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) w.u64(d);
    switch (e.dtype) {
      case DType::kF32:
        for (double v : e.numbers) w.u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        break;
      case DType::kF64:
        for (double v : e.numbers) w.u64(std::bit_cast<std::uint64_t>(v));
        break;
      case DType::kText:
        w.u64(e.text.size());
        w.bytes(e.text);
        break;
      case DType::kU64:
        w.u64(e.u64);
        break;
    }
  }
  return w.take();
}

Checkpoint Checkpoint::parse(std::string_view bytes) {
  Reader r(bytes);
  if (r.bytes(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
    throw FormatError("not a medfuse checkpoint (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt(r.str32());
  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    CheckpointEntry e;
    e.name = r.str32();
    const auto dtype = r.u8();
    if (dtype < 1 || dtype > 4) throw FormatError("entry '" + e.name + "': unknown dtype " + std::to_string(dtype));
    e.dtype = static_cast<DType>(dtype);
    e.non_inference = (r.u8() & 1) != 0;
    const std::uint32_t ndim = r.u32();
    std::uint64_t count_elems = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      e.shape.push_back(r.u64());
      count_elems *= e.shape.back();
    }
    switch (e.dtype) {
      case DType::kF32:
        r.need(count_elems * 4);
        e.numbers.reserve(count_elems);
        for (std::uint64_t i = 0; i < count_elems; ++i) e.numbers.push_back(std::bit_cast<float>(r.u32()));
        break;
      case DType::kF64:
        r.need(count_elems * 8);
        e.numbers.reserve(count_elems);
        for (std::uint64_t i = 0; i < count_elems; ++i) e.numbers.push_back(std::bit_cast<double>(r.u64()));
        break;
      case DType::kText:
        e.text = r.bytes(r.u64());
        break;
      case DType::kU64:
        e.u64 = r.u64();
        break;
    }
    if (ckpt.has(e.name)) throw FormatError("duplicate entry '" + e.name + "'");
    ckpt.entries_.push_back(std::move(e));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint entries");
  return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) { return parse(read_file(path)); }

}  // namespace medfuse
