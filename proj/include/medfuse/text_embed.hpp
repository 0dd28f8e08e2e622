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

// Precomputed clinical-text embeddings and their projection into the fusion
// width. Embedding file format:
//
//   MEDFUSE-EMB v1 <d_text>
//   # provider: <free text>            (optional)
//   <visit_id>\t<section>\t<base64 of d_text little-endian float32>
//
// Sections are the canonical note sections plus "LabText" (the rendered
// abnormal-lab sentence).

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "medfuse/autodiff.hpp"
#include "medfuse/ehr_data.hpp"
#include "medfuse/nn.hpp"

namespace medfuse::text {

using ad::Matrix;

inline constexpr std::string_view kLabTextSection = "LabText";
inline constexpr std::string_view kEmbeddingMagic = "MEDFUSE-EMB";

/// True for the four note sections and "LabText".
bool is_store_section(std::string_view section);

class EmbeddingStore {
 public:
  using Key = std::pair<std::string, std::string>;  // (visit_id, section)

  EmbeddingStore() = default;
  explicit EmbeddingStore(int dim, std::string provenance = {}) : dim_(dim), provenance_(std::move(provenance)) {}

  int dim() const { return dim_; }
  const std::string& provenance() const { return provenance_; }
  std::size_t size() const { return entries_.size(); }
  const std::map<Key, std::vector<float>>& entries() const { return entries_; }

  /// Throws DimensionError on a width mismatch and FormatError on an unknown
  /// section or non-finite entry. The first insert fixes dim() when it is 0.
  void insert(const std::string& visit_id, std::string_view section, std::vector<float> vector);
  const std::vector<float>* find(const std::string& visit_id, std::string_view section) const;

 private:
  int dim_ = 0;
  std::string provenance_;
  std::map<Key, std::vector<float>> entries_;
};

struct RejectedRow {
  std::size_t line = 0;
  std::string message;
};

struct StoreLoadResult {
  EmbeddingStore store;
  std::vector<RejectedRow> rejected;
};

/// Rows with an unknown section or undecodable payload are rejected and
/// reported; a row whose width disagrees with the header fails the load
/// (FormatError naming the key).
StoreLoadResult load_embedding_store(const std::filesystem::path& path);
StoreLoadResult parse_embedding_store(std::string_view contents);
std::string serialize_embedding_store(const EmbeddingStore& store);
void write_embedding_store(const std::filesystem::path& path, const EmbeddingStore& store);

/// Feed-forward map d_text -> d_model: one affine layer, or affine -> activation
/// -> affine when hidden > 0.
struct TextProjection {
  nn::Linear first;
  nn::Linear second;
  bool two_layer = false;

  TextProjection() = default;
  TextProjection(int d_text, int d_model, int hidden, Rng& rng);

  int out_width() const { return two_layer ? second.out() : first.out(); }
  ad::Var operator()(ad::Graph& g, ad::Var x) const;
};

template <class Self, class F>
void visit_params(Self& p, const std::string& prefix, F&& f)
  requires std::is_same_v<std::remove_const_t<Self>, TextProjection>
{
  nn::visit_params(p.first, prefix + ".first", f);
  if (p.two_layer) nn::visit_params(p.second, prefix + ".second", f);
}

/// Which text sources fill the token slots.
struct TextSources {
  int note_slots = 4;       // a_tokens
  bool use_notes = true;    // note-section tokens
  bool use_labtext = true;  // the extra LabText slot
  int slots() const { return note_slots + 1; }
};

/// Raw stored vectors laid out per slot (note sections in canonical order,
/// then LabText); missing or disabled slots are zero rows marked invalid.
struct RawTextSlots {
  Matrix vectors;  // slots x d_text
  std::vector<bool> valid;
};

RawTextSlots gather_text_slots(const std::string& visit_id, const EmbeddingStore& store, const TextSources& sources);

struct TextTokens {
  Matrix tokens;            // slots x d_model, invalid rows are zero
  std::vector<bool> valid;
  ad::RowVector pooled;     // mean of valid rows, zero when none
  bool any_valid = false;
};

TextTokens assemble_text_tokens(const ehr::VisitRecord& visit, const EmbeddingStore& store,
                                const TextProjection& projection, const TextSources& sources = {});

// ---------------------------------------------------------------------------
// Remote provider

/// Source of embeddings for raw text.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  /// Returns the vector for `text`. Throws RetriableError on transport failure
  /// or a malformed response.
  virtual std::vector<float> embed(const std::string& request_id, const std::string& text) = 0;
};

/// POSTs {"request_id": ..., "text": ...} as JSON to `url` and expects
/// {"request_id": <same id>, "vector": [...]} back.
class HttpEmbeddingProvider : public EmbeddingProvider {
 public:
  explicit HttpEmbeddingProvider(std::string url, double timeout_seconds = 10.0);
  std::vector<float> embed(const std::string& request_id, const std::string& text) override;

 private:
  std::string base_;
  std::string path_;
  double timeout_;
};

/// Content-hash cache in front of a provider. Cache writes are serialised.
class CachedEmbeddingClient {
 public:
  CachedEmbeddingClient(EmbeddingProvider& provider, int dim) : provider_(provider), dim_(dim) {}

  /// Throws DimensionError when the provider's vector width differs from dim.
  std::vector<float> request(const std::string& text);

  static std::string content_key(std::string_view text);
  std::size_t provider_calls() const { return provider_calls_; }
  std::size_t cache_size() const;

 private:
  EmbeddingProvider& provider_;
  int dim_;
  mutable std::mutex mu_;
  std::map<std::string, std::vector<float>> cache_;
  std::atomic<std::size_t> provider_calls_{0};
  std::atomic<std::size_t> next_id_{0};
};

}  // namespace medfuse::text
