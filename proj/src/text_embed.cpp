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

#include "medfuse/text_embed.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

#include "httplib.h"
#include "json.hpp"
#include "medfuse/errors.hpp"
#include "medfuse/io_util.hpp"

namespace medfuse::text {

bool is_store_section(std::string_view section) {
  return section == kLabTextSection || ehr::parse_section_name(section).has_value();
}

void EmbeddingStore::insert(const std::string& visit_id, std::string_view section, std::vector<float> vector) {
  if (!is_store_section(section)) throw FormatError("unknown embedding section '" + std::string(section) + "'");
  if (dim_ == 0) dim_ = static_cast<int>(vector.size());
  if (static_cast<int>(vector.size()) != dim_) {
    throw DimensionError("embedding for (" + visit_id + ", " + std::string(section) + ") has width " +
                         std::to_string(vector.size()) + ", store expects " + std::to_string(dim_));
  }
  for (float v : vector) {
    if (!std::isfinite(v)) throw FormatError("non-finite embedding for (" + visit_id + ", " + std::string(section) + ")");
  }
  entries_[{visit_id, std::string(section)}] = std::move(vector);
}

const std::vector<float>* EmbeddingStore::find(const std::string& visit_id, std::string_view section) const {
  auto it = entries_.find({visit_id, std::string(section)});
  return it == entries_.end() ? nullptr : &it->second;
}

namespace {

std::string encode_floats(const std::vector<float>& v) {
  std::string bytes;
  bytes.reserve(v.size() * 4);
  for (float f : v) {
    const auto u = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) bytes += static_cast<char>((u >> (8 * i)) & 0xff);
  }
  return base64_encode(bytes);
}

std::vector<float> decode_floats(std::string_view bytes) {
  std::vector<float> v(bytes.size() / 4);
  for (std::size_t k = 0; k < v.size(); ++k) {
    std::uint32_t u = 0;
    for (int i = 0; i < 4; ++i) u |= std::uint32_t(std::uint8_t(bytes[4 * k + i])) << (8 * i);
    v[k] = std::bit_cast<float>(u);
  }
  return v;
}

}  // namespace

StoreLoadResult parse_embedding_store(std::string_view contents) {
  std::istringstream in{std::string(contents)};
  std::string line;
  if (!std::getline(in, line)) throw FormatError("embedding file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line, ' ');
  if (header.size() != 3 || header[0] != kEmbeddingMagic || header[1] != "v1") {
    throw FormatError("embedding header must be 'MEDFUSE-EMB v1 <d_text>', got '" + line + "'");
  }
  const auto dim = parse_int(header[2]);
  if (!dim || *dim <= 0) throw FormatError("embedding header has invalid d_text '" + header[2] + "'");

  StoreLoadResult result;
  std::string provenance;
  std::size_t line_no = 1;
  std::vector<std::tuple<std::string, std::string, std::vector<float>>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.starts_with("# provider: ")) {
      provenance = line.substr(12);
      continue;
    }
    if (line.front() == '#') continue;
    const auto f = split(line, '\t');
    if (f.size() != 3) {
      result.rejected.push_back({line_no, "expected 3 tab-separated fields"});
      continue;
    }
    if (!is_store_section(f[1])) {
      result.rejected.push_back({line_no, "unknown section '" + f[1] + "'"});
      continue;
    }
    const auto bytes = base64_decode(f[2]);
    if (!bytes || bytes->size() % 4 != 0) {
      result.rejected.push_back({line_no, "payload is not base64 of float32 values"});
      continue;
    }
    if (static_cast<long long>(bytes->size() / 4) != *dim) {
      throw FormatError("embedding for (" + f[0] + ", " + f[1] + ") has width " + std::to_string(bytes->size() / 4) +
                        ", header declares " + std::to_string(*dim));
    }
    auto vec = decode_floats(*bytes);
    bool finite = true;
    for (float v : vec) finite = finite && std::isfinite(v);
    if (!finite) {
      result.rejected.push_back({line_no, "non-finite value"});
      continue;
    }
    rows.emplace_back(f[0], f[1], std::move(vec));
  }
  result.store = EmbeddingStore(static_cast<int>(*dim), provenance);
  for (auto& [visit, section, vec] : rows) result.store.insert(visit, section, std::move(vec));
  return result;
}

StoreLoadResult load_embedding_store(const std::filesystem::path& path) { return parse_embedding_store(read_file(path)); }

std::string serialize_embedding_store(const EmbeddingStore& store) {
  std::ostringstream out;
  out << kEmbeddingMagic << " v1 " << store.dim() << '\n';
  if (!store.provenance().empty()) out << "# provider: " << store.provenance() << '\n';
  for (const auto& [key, vec] : store.entries()) {
    out << key.first << '\t' << key.second << '\t' << encode_floats(vec) << '\n';
  }
  return out.str();
}

void write_embedding_store(const std::filesystem::path& path, const EmbeddingStore& store) {
  write_file_atomic(path, serialize_embedding_store(store));
}

// ---------------------------------------------------------------------------
// Projection and token assembly

TextProjection::TextProjection(int d_text, int d_model, int hidden, Rng& rng) {
  if (hidden > 0) {
    first = nn::Linear(d_text, hidden, rng);
    second = nn::Linear(hidden, d_model, rng);
    two_layer = true;
  } else {
    first = nn::Linear(d_text, d_model, rng);
  }
}

ad::Var TextProjection::operator()(ad::Graph& g, ad::Var x) const {
  ad::Var h = first(g, x);
  if (two_layer) h = second(g, ad::gelu(g, h));
  return h;
}

RawTextSlots gather_text_slots(const std::string& visit_id, const EmbeddingStore& store, const TextSources& sources) {
  RawTextSlots raw;
  raw.vectors = Matrix::Zero(sources.slots(), store.dim());
  raw.valid.assign(static_cast<std::size_t>(sources.slots()), false);
  auto fill = [&](int slot, std::string_view section) {
    if (const auto* v = store.find(visit_id, section)) {
      for (int j = 0; j < store.dim(); ++j) raw.vectors(slot, j) = (*v)[j];
      raw.valid[slot] = true;
    }
  };
  if (sources.use_notes) {
    const int n = std::min<int>(sources.note_slots, static_cast<int>(ehr::kNoteSections.size()));
    for (int s = 0; s < n; ++s) fill(s, ehr::section_name(ehr::kNoteSections[s]));
  }
  if (sources.use_labtext) fill(sources.note_slots, kLabTextSection);
  return raw;
}

TextTokens assemble_text_tokens(const ehr::VisitRecord& visit, const EmbeddingStore& store,
                                const TextProjection& projection, const TextSources& sources) {
  const RawTextSlots raw = gather_text_slots(visit.visit_id, store, sources);
  if (store.dim() != projection.first.in()) {
    throw DimensionError("text projection expects width " + std::to_string(projection.first.in()) +
                         ", store has " + std::to_string(store.dim()));
  }
  ad::Graph g(false);
  const Matrix projected = g.value(projection(g, g.constant(raw.vectors)));
  TextTokens out;
  out.tokens = Matrix::Zero(projected.rows(), projected.cols());
  out.valid = raw.valid;
  out.pooled = ad::RowVector::Zero(projected.cols());
  int count = 0;
  for (Eigen::Index r = 0; r < projected.rows(); ++r) {
    if (!raw.valid[r]) continue;
    out.tokens.row(r) = projected.row(r);
    out.pooled += projected.row(r);
    ++count;
  }
  if (count > 0) out.pooled /= static_cast<double>(count);
  out.any_valid = count > 0;
  return out;
}

// ---------------------------------------------------------------------------
// Provider

HttpEmbeddingProvider::HttpEmbeddingProvider(std::string url, double timeout_seconds) : timeout_(timeout_seconds) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ConfigError("provider URL must look like http://host:port/path");
  const auto slash = url.find('/', scheme + 3);
  base_ = slash == std::string::npos ? url : url.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : url.substr(slash);
}

std::vector<float> HttpEmbeddingProvider::embed(const std::string& request_id, const std::string& text) {
  httplib::Client client(base_);
  const auto secs = static_cast<time_t>(timeout_);
  const auto usecs = static_cast<time_t>((timeout_ - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  nlohmann::json body{{"request_id", request_id}, {"text", text}};
  auto res = client.Post(path_, body.dump(), "application/json");
  if (!res) throw RetriableError("provider request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw RetriableError("provider returned HTTP " + std::to_string(res->status));
  try {
    const auto j = nlohmann::json::parse(res->body);
    if (j.at("request_id").get<std::string>() != request_id) {
      throw RetriableError("provider response id does not match request " + request_id);
    }
    return j.at("vector").get<std::vector<float>>();
  } catch (const nlohmann::json::exception& e) {
    throw RetriableError(std::string("malformed provider response: ") + e.what());
  }
}

std::string CachedEmbeddingClient::content_key(std::string_view text) { return hex64(fnv1a64(text)); }

std::size_t CachedEmbeddingClient::cache_size() const {
  std::lock_guard lock(mu_);
  return cache_.size();
}

std::vector<float> CachedEmbeddingClient::request(const std::string& text) {
  const std::string key = content_key(text);
  std::lock_guard lock(mu_);
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  const std::string id = "req-" + std::to_string(next_id_++);
  ++provider_calls_;
  auto vec = provider_.embed(id, text);
  if (static_cast<int>(vec.size()) != dim_) {
    throw DimensionError("provider returned width " + std::to_string(vec.size()) + ", expected " +
                         std::to_string(dim_));
  }
  for (float v : vec) {
    if (!std::isfinite(v)) throw RetriableError("provider returned a non-finite value");
  }
  cache_.emplace(key, vec);
  return vec;
}

}  // namespace medfuse::text
