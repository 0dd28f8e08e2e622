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

#include "medfuse/ehr_data.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "medfuse/errors.hpp"
#include "medfuse/io_util.hpp"

namespace medfuse::ehr {

using json = nlohmann::ordered_json;

namespace {

constexpr std::array<std::string_view, 4> kSectionNames = {"ChiefComplaint", "PresentIllness", "MedicalHistory",
                                                           "MedicationOnAdmission"};

// Normalised header spellings accepted for each section.
const std::vector<std::pair<std::string_view, NoteSection>>& header_table() {
  static const std::vector<std::pair<std::string_view, NoteSection>> table = {
      {"chief complaint", NoteSection::kChiefComplaint},
      {"chiefcomplaint", NoteSection::kChiefComplaint},
      {"present illness", NoteSection::kPresentIllness},
      {"presentillness", NoteSection::kPresentIllness},
      {"history of present illness", NoteSection::kPresentIllness},
      {"medical history", NoteSection::kMedicalHistory},
      {"medicalhistory", NoteSection::kMedicalHistory},
      {"past medical history", NoteSection::kMedicalHistory},
      {"medication on admission", NoteSection::kMedicationOnAdmission},
      {"medicationonadmission", NoteSection::kMedicationOnAdmission},
      {"medications on admission", NoteSection::kMedicationOnAdmission},
  };
  return table;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

std::string_view section_name(NoteSection s) { return kSectionNames[static_cast<std::size_t>(s)]; }

std::optional<NoteSection> parse_section_name(std::string_view name) {
  for (std::size_t i = 0; i < kSectionNames.size(); ++i) {
    if (kSectionNames[i] == name) return static_cast<NoteSection>(i);
  }
  return std::nullopt;
}

std::string normalize_header(std::string_view raw) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : raw) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
    } else if (std::ispunct(c)) {
      continue;
    } else {
      if (pending_space) out += ' ';
      pending_space = false;
      out += static_cast<char>(std::tolower(c));
    }
  }
  return out;
}

std::optional<NoteSection> match_section_header(std::string_view raw) {
  const std::string key = normalize_header(raw);
  for (const auto& [spelling, section] : header_table()) {
    if (key == spelling) return section;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// LabPanel

LabPanel::LabPanel(std::size_t vocabulary_size)
    : values(vocabulary_size, std::numeric_limits<double>::quiet_NaN()),
      observed(vocabulary_size, false),
      abnormal(vocabulary_size, false) {}

std::size_t LabPanel::observed_count() const {
  std::size_t n = 0;
  for (bool b : observed) n += b ? 1 : 0;
  return n;
}

std::vector<int> LabPanel::observed_indices() const {
  std::vector<int> idx;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    if (observed[i]) idx.push_back(static_cast<int>(i));
  }
  return idx;
}

void LabPanel::set(std::size_t i, double value, bool is_abnormal) {
  require(i < values.size(), "LabPanel::set: index out of range");
  require(std::isfinite(value), "LabPanel::set: non-finite value");
  values[i] = value;
  observed[i] = true;
  abnormal[i] = is_abnormal;
}

bool LabPanel::valid() const {
  if (observed.size() != values.size() || abnormal.size() != values.size()) return false;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (abnormal[i] && !observed[i]) return false;
    if (observed[i] && !std::isfinite(values[i])) return false;
  }
  return true;
}

bool LabPanel::operator==(const LabPanel& other) const {
  if (size() != other.size() || observed != other.observed || abnormal != other.abnormal) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (observed[i] && values[i] != other.values[i]) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// CSV

LabParseResult parse_lab_csv(std::istream& source, const std::vector<std::string>& vocabulary) {
  LabParseResult result;
  result.units.assign(vocabulary.size(), std::string());
  std::unordered_map<std::string, int> item_index;
  for (std::size_t i = 0; i < vocabulary.size(); ++i) item_index.emplace(vocabulary[i], static_cast<int>(i));

  std::string line;
  if (!std::getline(source, line)) throw FormatError("lab CSV is empty (missing header)");
  line = strip_cr(line);
  if (line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
  {
    auto cols = split_csv_line(line);
    std::string joined;
    for (std::size_t i = 0; i < cols.size(); ++i) joined += (i ? "," : "") + std::string(trim(cols[i]));
    if (joined != kLabCsvHeader) {
      throw FormatError("lab CSV header must be '" + std::string(kLabCsvHeader) + "', got '" + line + "'");
    }
  }

  std::map<std::pair<std::string, std::string>, std::size_t> visit_index;
  std::size_t line_no = 1;
  while (std::getline(source, line)) {
    ++line_no;
    line = strip_cr(line);
    if (trim(line).empty()) continue;
    ++result.rows_read;
    auto fields = split_csv_line(line);
    if (fields.size() != 6) {
      result.errors.push_back({line_no, "expected 6 fields, got " + std::to_string(fields.size())});
      continue;
    }
    for (auto& f : fields) f = std::string(trim(f));
    const auto& pid = fields[0];
    const auto& vid = fields[1];
    const auto& item = fields[2];
    if (pid.empty() || vid.empty() || item.empty()) {
      result.errors.push_back({line_no, "empty PATIENT_ID, VISIT_ID or ITEMID"});
      continue;
    }
    const auto value = parse_double(fields[3]);
    if (!value) {
      result.errors.push_back({line_no, "VALUE '" + fields[3] + "' is not a finite number"});
      continue;
    }
    if (fields[5] != "0" && fields[5] != "1") {
      result.errors.push_back({line_no, "ABNORMAL must be 0 or 1, got '" + fields[5] + "'"});
      continue;
    }
    auto it = item_index.find(item);
    if (it == item_index.end()) {
      ++result.unknown_items;
      continue;
    }
    const int idx = it->second;
    auto key = std::make_pair(pid, vid);
    auto [vit, inserted] = visit_index.emplace(key, result.panels.size());
    if (inserted) result.panels.push_back({pid, vid, LabPanel(vocabulary.size())});
    LabPanel& panel = result.panels[vit->second].panel;
    if (panel.observed[idx]) ++result.duplicate_rows;
    panel.set(static_cast<std::size_t>(idx), *value, fields[5] == "1");
    if (result.units[idx].empty()) result.units[idx] = fields[4];
  }
  return result;
}

void write_lab_csv(std::ostream& out, const std::vector<VisitRecord>& visits,
                   const std::vector<std::string>& vocabulary, const std::vector<std::string>& units) {
  out << kLabCsvHeader << '\n';
  for (const auto& v : visits) {
    for (std::size_t i = 0; i < v.panel.size(); ++i) {
      if (!v.panel.observed[i]) continue;
      out << csv_escape(v.patient_id) << ',' << csv_escape(v.visit_id) << ',' << csv_escape(vocabulary[i]) << ','
          << format_double(v.panel.values[i]) << ',' << csv_escape(units[i]) << ',' << (v.panel.abnormal[i] ? 1 : 0)
          << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Normalisation

NormalizationStats fit_normalization(const std::vector<LabPanel>& panels, int min_support) {
  require(!panels.empty(), "fit_normalization: no panels");
  const std::size_t d = panels.front().size();
  NormalizationStats stats;
  stats.mean.assign(d, 0.0);
  stats.std.assign(d, 1.0);
  for (std::size_t i = 0; i < d; ++i) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& p : panels) {
      require(p.size() == d, "fit_normalization: panels differ in vocabulary size");
      if (p.observed[i]) {
        sum += p.values[i];
        ++n;
      }
    }
    if (n == 0 || static_cast<int>(n) < min_support) {
      stats.mean[i] = 0.0;
      stats.excluded.insert(static_cast<int>(i));
      continue;
    }
    const double mu = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const auto& p : panels) {
      if (p.observed[i]) ss += (p.values[i] - mu) * (p.values[i] - mu);
    }
    const double sd = std::sqrt(ss / static_cast<double>(n));
    stats.mean[i] = mu;
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mu)))) {
      stats.excluded.insert(static_cast<int>(i));
    } else {
      stats.std[i] = sd;
    }
  }
  return stats;
}

LabPanel apply_normalization(const LabPanel& panel, const NormalizationStats& stats) {
  require(panel.size() == stats.mean.size(), "apply_normalization: vocabulary size mismatch");
  LabPanel out(panel.size());
  for (std::size_t i = 0; i < panel.size(); ++i) {
    if (!panel.observed[i] || stats.is_excluded(static_cast<int>(i))) continue;
    out.set(i, (panel.values[i] - stats.mean[i]) / stats.std[i], panel.abnormal[i]);
  }
  return out;
}

LabPanel invert_normalization(const LabPanel& panel, const NormalizationStats& stats) {
  require(panel.size() == stats.mean.size(), "invert_normalization: vocabulary size mismatch");
  LabPanel out(panel.size());
  for (std::size_t i = 0; i < panel.size(); ++i) {
    if (!panel.observed[i]) continue;
    out.set(i, panel.values[i] * stats.std[i] + stats.mean[i], panel.abnormal[i]);
  }
  return out;
}

std::string normalization_to_json(const NormalizationStats& stats) {
  json j;
  j["mean"] = stats.mean;
  j["std"] = stats.std;
  j["excluded"] = std::vector<int>(stats.excluded.begin(), stats.excluded.end());
  return j.dump(1) + "\n";
}

NormalizationStats normalization_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    NormalizationStats s;
    s.mean = j.at("mean").get<std::vector<double>>();
    s.std = j.at("std").get<std::vector<double>>();
    for (int i : j.at("excluded").get<std::vector<int>>()) s.excluded.insert(i);
    if (s.mean.size() != s.std.size()) throw FormatError("normalization: mean/std length mismatch");
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("normalization file: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Text

std::string render_abnormal_text(const LabPanel& panel, const std::vector<std::string>& vocabulary,
                                 const std::vector<std::string>& units) {
  require(vocabulary.size() == panel.size() && units.size() == panel.size(),
          "render_abnormal_text: vocabulary/units size mismatch");
  std::string out;
  for (std::size_t i = 0; i < panel.size(); ++i) {
    if (!panel.observed[i] || !panel.abnormal[i]) continue;
    if (out.empty()) out = kAbnormalPrefix;
    out += " ITEMID ";
    out += vocabulary[i];
    out += ": ";
    out += format_double(panel.values[i]);
    if (!units[i].empty()) {
      out += ' ';
      out += units[i];
    }
    out += ';';
  }
  return out;
}

std::map<NoteSection, std::string> filter_note_sections(
    const std::vector<std::pair<std::string, std::string>>& raw_sections) {
  std::map<NoteSection, std::string> out;
  for (const auto& [header, text] : raw_sections) {
    const auto section = match_section_header(header);
    if (!section) continue;
    auto [it, inserted] = out.emplace(*section, text);
    if (!inserted) it->second += "\n" + text;
  }
  return out;
}

std::map<NoteSection, std::string> filter_note_sections(const std::map<std::string, std::string>& raw_sections) {
  return filter_note_sections(std::vector<std::pair<std::string, std::string>>(raw_sections.begin(), raw_sections.end()));
}

// ---------------------------------------------------------------------------
// Dataset directory

double split_score(std::string_view patient_id) {
  // fnv1a alone barely moves the high bits for ids differing in the last byte
  std::uint64_t h = fnv1a64(patient_id);
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdULL;
  h ^= h >> 33;
  h *= 0xc4ceb9fe1a85ec53ULL;
  h ^= h >> 33;
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

bool Dataset::is_validation(const VisitRecord& v) const { return split_score(v.patient_id) < val_fraction; }

std::vector<int> Dataset::split_indices(bool validation) const {
  std::vector<int> idx;
  for (std::size_t i = 0; i < visits.size(); ++i) {
    if (is_validation(visits[i]) == validation) idx.push_back(static_cast<int>(i));
  }
  return idx;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  {
    std::ostringstream labs;
    write_lab_csv(labs, ds.visits, ds.vocabulary, ds.units);
    write_file_atomic(dir / "labs.csv", labs.str());
  }
  {
    std::ostringstream labels;
    labels << "PATIENT_ID,VISIT_ID";
    for (int l = 0; l < ds.num_labels; ++l) labels << ",Y" << l;
    labels << '\n';
    for (const auto& v : ds.visits) {
      require(static_cast<int>(v.labels.size()) == ds.num_labels, "write_dataset: label length mismatch");
      labels << csv_escape(v.patient_id) << ',' << csv_escape(v.visit_id);
      for (bool b : v.labels) labels << ',' << (b ? 1 : 0);
      labels << '\n';
    }
    write_file_atomic(dir / "labels.csv", labels.str());
  }
  {
    std::ostringstream notes;
    for (const auto& v : ds.visits) {
      json j;
      j["patient_id"] = v.patient_id;
      j["visit_id"] = v.visit_id;
      json sections = json::object();
      for (const auto& [s, text] : v.notes) sections[std::string(section_name(s))] = text;
      j["sections"] = std::move(sections);
      notes << j.dump() << '\n';
    }
    write_file_atomic(dir / "notes.jsonl", notes.str());
  }
  write_file_atomic(dir / "normalization.json", normalization_to_json(ds.normalization));
  json m;
  m["format"] = "medfuse-dataset";
  m["version"] = 1;
  m["vocabulary"] = ds.vocabulary;
  m["units"] = ds.units;
  m["num_labels"] = ds.num_labels;
  m["val_fraction"] = ds.val_fraction;
  m["config_hash"] = ds.config_hash;
  json files;
  files["labs"] = "labs.csv";
  files["notes"] = "notes.jsonl";
  files["labels"] = "labels.csv";
  files["normalization"] = "normalization.json";
  files["embeddings"] = ds.embeddings_file.empty() ? json(nullptr) : json(ds.embeddings_file);
  m["files"] = std::move(files);
  write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  json m;
  try {
    m = json::parse(read_file(dir / "manifest.json"));
    if (m.at("format") != "medfuse-dataset") throw FormatError("manifest format is not medfuse-dataset");
    if (m.at("version") != 1) throw FormatError("unsupported dataset version " + m.at("version").dump());
    ds.vocabulary = m.at("vocabulary").get<std::vector<std::string>>();
    ds.units = m.at("units").get<std::vector<std::string>>();
    ds.num_labels = m.at("num_labels").get<int>();
    ds.val_fraction = m.at("val_fraction").get<double>();
    ds.config_hash = m.value("config_hash", std::string());
  } catch (const json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  if (ds.units.size() != ds.vocabulary.size()) throw FormatError("manifest: units/vocabulary length mismatch");
  const json& files = m.at("files");
  auto file = [&](const char* key) { return dir / files.at(key).get<std::string>(); };

  // labels define the visit list
  {
    std::istringstream in(read_file(file("labels")));
    std::string line;
    std::getline(in, line);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      line = strip_cr(line);
      if (trim(line).empty()) continue;
      auto f = split_csv_line(line);
      if (static_cast<int>(f.size()) != 2 + ds.num_labels) {
        throw FormatError("labels.csv line " + std::to_string(line_no) + ": wrong field count");
      }
      VisitRecord v;
      v.patient_id = f[0];
      v.visit_id = f[1];
      v.panel = LabPanel(ds.vocabulary.size());
      for (int l = 0; l < ds.num_labels; ++l) {
        if (f[2 + l] != "0" && f[2 + l] != "1") {
          throw FormatError("labels.csv line " + std::to_string(line_no) + ": label must be 0 or 1");
        }
        v.labels.push_back(f[2 + l] == "1");
      }
      ds.visits.push_back(std::move(v));
    }
  }
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  for (std::size_t i = 0; i < ds.visits.size(); ++i) {
    if (!index.emplace(std::make_pair(ds.visits[i].patient_id, ds.visits[i].visit_id), i).second) {
      throw FormatError("labels.csv: duplicate visit " + ds.visits[i].visit_id);
    }
  }
  {
    std::ifstream in(file("labs"));
    if (!in) throw IoError("cannot open " + file("labs").string());
    auto parsed = parse_lab_csv(in, ds.vocabulary);
    if (!parsed.errors.empty()) {
      throw FormatError("labs.csv line " + std::to_string(parsed.errors.front().line) + ": " +
                        parsed.errors.front().message);
    }
    for (auto& p : parsed.panels) {
      auto it = index.find({p.patient_id, p.visit_id});
      if (it == index.end()) throw FormatError("labs.csv: visit " + p.visit_id + " has no labels row");
      ds.visits[it->second].panel = std::move(p.panel);
    }
  }
  {
    std::istringstream in(read_file(file("notes")));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      try {
        const json j = json::parse(line);
        auto it = index.find({j.at("patient_id").get<std::string>(), j.at("visit_id").get<std::string>()});
        if (it == index.end()) throw FormatError("notes.jsonl line " + std::to_string(line_no) + ": unknown visit");
        for (const auto& [k, v] : j.at("sections").items()) {
          const auto s = parse_section_name(k);
          if (!s) throw FormatError("notes.jsonl line " + std::to_string(line_no) + ": unknown section " + k);
          ds.visits[it->second].notes[*s] = v.get<std::string>();
        }
      } catch (const json::exception& e) {
        throw FormatError("notes.jsonl line " + std::to_string(line_no) + ": " + e.what());
      }
    }
  }
  ds.normalization = normalization_from_json(read_file(file("normalization")));
  if (ds.normalization.mean.size() != ds.vocabulary.size()) {
    throw FormatError("normalization.json: length does not match vocabulary");
  }
  if (files.contains("embeddings") && !files.at("embeddings").is_null()) {
    ds.embeddings_file = files.at("embeddings").get<std::string>();
  }
  return ds;
}

std::pair<std::vector<std::string>, std::vector<std::string>> read_vocabulary(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> items, units;
  std::string line;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (trim(line).empty() || trim(line).front() == '#') continue;
    auto f = split_csv_line(line);
    items.emplace_back(trim(f[0]));
    units.emplace_back(f.size() > 1 ? std::string(trim(f[1])) : std::string());
  }
  if (items.empty()) throw FormatError("vocabulary file " + path.string() + " is empty");
  return {items, units};
}

}  // namespace medfuse::ehr
