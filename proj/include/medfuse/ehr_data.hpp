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

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace medfuse::ehr {

/// Note sections kept for the text modality, in canonical token order.
enum class NoteSection { kChiefComplaint = 0, kPresentIllness, kMedicalHistory, kMedicationOnAdmission };

inline constexpr std::array<NoteSection, 4> kNoteSections = {
    NoteSection::kChiefComplaint, NoteSection::kPresentIllness, NoteSection::kMedicalHistory,
    NoteSection::kMedicationOnAdmission};

/// "ChiefComplaint", "PresentIllness", "MedicalHistory", "MedicationOnAdmission".
std::string_view section_name(NoteSection s);
std::optional<NoteSection> parse_section_name(std::string_view name);

/// Lowercases, strips punctuation and collapses whitespace: " Chief  Complaint:" -> "chief complaint".
std::string normalize_header(std::string_view raw);
/// Maps a free-text note header onto a canonical section, if it is one.
std::optional<NoteSection> match_section_header(std::string_view raw);

struct LabObservation {
  std::string item_id;
  double value = 0.0;
  std::string unit;
  bool abnormal = false;
};

/// One visit's lab results over a fixed vocabulary. values[i] is only
/// meaningful where observed[i] is true.
struct LabPanel {
  std::vector<double> values;
  std::vector<bool> observed;
  std::vector<bool> abnormal;

  LabPanel() = default;
  explicit LabPanel(std::size_t vocabulary_size);

  std::size_t size() const { return values.size(); }
  std::size_t observed_count() const;
  std::vector<int> observed_indices() const;
  void set(std::size_t i, double value, bool is_abnormal);
  /// Checks the length and abnormal => observed invariants.
  bool valid() const;

  bool operator==(const LabPanel& other) const;
};

using LabelVector = std::vector<bool>;

struct VisitRecord {
  std::string patient_id;
  std::string visit_id;
  std::map<NoteSection, std::string> notes;
  LabPanel panel;
  LabelVector labels;
};

// ---------------------------------------------------------------------------
// Lab CSV ingestion

struct RowError {
  std::size_t line = 0;  // 1-based, header is line 1
  std::string message;
};

struct ParsedPanel {
  std::string patient_id;
  std::string visit_id;
  LabPanel panel;
};

struct LabParseResult {
  std::vector<ParsedPanel> panels;  // in order of first appearance
  std::vector<RowError> errors;
  std::size_t rows_read = 0;
  std::size_t unknown_items = 0;    // rows dropped because ITEMID is not in the vocabulary
  std::size_t duplicate_rows = 0;   // (visit, item) repeats, resolved last-write-wins
  /// Unit per vocabulary item, taken from the first row that mentions it.
  std::vector<std::string> units;
};

inline constexpr std::string_view kLabCsvHeader = "PATIENT_ID,VISIT_ID,ITEMID,VALUE,VALUEUOM,ABNORMAL";

/// Throws FormatError only when the header is wrong; bad rows become RowErrors.
LabParseResult parse_lab_csv(std::istream& source, const std::vector<std::string>& vocabulary);

// ---------------------------------------------------------------------------
// Normalisation (per-item z-score with population std)

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> std;
  std::set<int> excluded;

  bool is_excluded(int i) const { return excluded.contains(i); }
};

NormalizationStats fit_normalization(const std::vector<LabPanel>& panels, int min_support);
/// Z-scores observed values; excluded items become unobserved.
LabPanel apply_normalization(const LabPanel& panel, const NormalizationStats& stats);
/// Maps z-scores back to raw magnitudes.
LabPanel invert_normalization(const LabPanel& panel, const NormalizationStats& stats);

std::string normalization_to_json(const NormalizationStats& stats);
NormalizationStats normalization_from_json(std::string_view text);

// ---------------------------------------------------------------------------
// Text rendering

inline constexpr std::string_view kAbnormalPrefix = "These are abnormal results recorded:";

/// "These are abnormal results recorded: ITEMID <id>: <value> <unit>; ..." over
/// the abnormal observed items in vocabulary order; "" when there are none.
std::string render_abnormal_text(const LabPanel& panel, const std::vector<std::string>& vocabulary,
                                 const std::vector<std::string>& units);

/// Keeps only the canonical sections. Texts of headers that normalise to the
/// same section are joined with a newline in input order.
std::map<NoteSection, std::string> filter_note_sections(
    const std::vector<std::pair<std::string, std::string>>& raw_sections);
std::map<NoteSection, std::string> filter_note_sections(const std::map<std::string, std::string>& raw_sections);

// ---------------------------------------------------------------------------
// Dataset directory

/// A dataset directory holds manifest.json, labs.csv (raw values),
/// notes.jsonl, labels.csv, normalization.json and optionally embeddings.emb.
struct Dataset {
  std::vector<std::string> vocabulary;
  std::vector<std::string> units;
  int num_labels = 10;
  double val_fraction = 0.2;
  std::vector<VisitRecord> visits;
  NormalizationStats normalization;
  std::string config_hash;
  /// Relative path of the embedding store inside the directory, empty if none.
  std::string embeddings_file;

  /// True when the visit's patient falls in the validation split.
  bool is_validation(const VisitRecord& v) const;
  std::vector<int> split_indices(bool validation) const;
};

/// Deterministic patient-level split: hash(patient_id) mapped to [0, 1).
double split_score(std::string_view patient_id);

void write_lab_csv(std::ostream& out, const std::vector<VisitRecord>& visits,
                   const std::vector<std::string>& vocabulary, const std::vector<std::string>& units);

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

/// Reads a vocabulary file: one ITEMID per line, optionally "ITEMID,UNIT".
std::pair<std::vector<std::string>, std::vector<std::string>> read_vocabulary(const std::filesystem::path& path);

}  // namespace medfuse::ehr
