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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>
#include <unordered_map>

#include "medfuse/errors.hpp"
#include "medfuse/io_util.hpp"
#include "medfuse/synth.hpp"

namespace medfuse::ehr {
namespace {

namespace fs = std::filesystem;

const fs::path kFixtures = MEDFUSE_FIXTURES;

LabParseResult parse(const std::string& csv, const std::vector<std::string>& vocab) {
  std::istringstream in(csv);
  return parse_lab_csv(in, vocab);
}

const std::string kHeader = "PATIENT_ID,VISIT_ID,ITEMID,VALUE,VALUEUOM,ABNORMAL\n";

TEST(LabCsv, TwoRowsGiveTwoObservedPositions) {
  const auto r = parse(kHeader + "P1,V1,A,1.5,mg/dL,0\nP1,V1,C,3,U/L,1\n", {"A", "B", "C"});
  ASSERT_EQ(r.panels.size(), 1u);
  const auto& p = r.panels[0].panel;
  EXPECT_EQ(p.observed_count(), 2u);
  EXPECT_EQ(p.observed_indices(), (std::vector<int>{0, 2}));
  EXPECT_EQ(p.values[0], 1.5);
  EXPECT_TRUE(p.abnormal[2]);
  EXPECT_FALSE(p.abnormal[0]);
  EXPECT_EQ(r.units, (std::vector<std::string>{"mg/dL", "", "U/L"}));
}

TEST(LabCsv, BadRowsAreReportedAndSkipped) {
  const auto r = parse(kHeader + "P1,V1,A,abc,mg/dL,0\nP1,V1,B,2,mg/dL,0\nP1,V1,A\nP1,V1,A,1,mg/dL,7\n", {"A", "B"});
  ASSERT_EQ(r.errors.size(), 3u);
  EXPECT_EQ(r.errors[0].line, 2u);
  EXPECT_EQ(r.errors[1].line, 4u);
  EXPECT_EQ(r.errors[2].line, 5u);
  ASSERT_EQ(r.panels.size(), 1u);
  EXPECT_EQ(r.panels[0].panel.observed_indices(), (std::vector<int>{1}));
}

TEST(LabCsv, WrongHeaderIsAFileLevelError) {
  EXPECT_THROW(parse("PATIENT,VISIT,ITEM,VALUE\n", {"A"}), FormatError);
  EXPECT_THROW(parse("", {"A"}), FormatError);
}

TEST(LabCsv, MatchesGroupingOracleOnRandomRows) {
  Rng rng(5);
  std::vector<std::string> vocab;
  for (int i = 0; i < 12; ++i) vocab.push_back("I" + std::to_string(i));
  struct Cell {
    double value;
    bool abnormal;
  };
  std::unordered_map<std::string, std::unordered_map<int, Cell>> oracle;
  std::vector<std::string> order;
  std::size_t unknown = 0, duplicates = 0;
  std::string csv = kHeader;
  for (int r = 0; r < 1000; ++r) {
    const int visit = static_cast<int>(rng.below(40));
    const int item = static_cast<int>(rng.below(15));  // 12..14 are not in the vocabulary
    const double value = rng.normal() * 50.0;
    const bool abnormal = rng.bernoulli(0.3);
    const std::string vid = "V" + std::to_string(visit);
    csv += "P" + std::to_string(visit / 2) + "," + vid + ",I" + std::to_string(item) + "," + format_double(value) +
           ",u," + (abnormal ? "1" : "0") + "\n";
    if (item >= 12) {
      ++unknown;
      continue;
    }
    if (!oracle.contains(vid)) order.push_back(vid);
    auto& cells = oracle[vid];
    if (cells.contains(item)) ++duplicates;
    cells[item] = {value, abnormal};
  }
  const auto r = parse(csv, vocab);
  EXPECT_TRUE(r.errors.empty());
  EXPECT_EQ(r.rows_read, 1000u);
  EXPECT_EQ(r.unknown_items, unknown);
  EXPECT_EQ(r.duplicate_rows, duplicates);
  ASSERT_EQ(r.panels.size(), order.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& got = r.panels[k];
    EXPECT_EQ(got.visit_id, order[k]);
    const auto& cells = oracle.at(order[k]);
    EXPECT_EQ(got.panel.observed_count(), cells.size());
    for (const auto& [item, cell] : cells) {
      ASSERT_TRUE(got.panel.observed[item]);
      EXPECT_EQ(got.panel.values[item], cell.value);
      EXPECT_EQ(got.panel.abnormal[item], cell.abnormal);
    }
  }
}

// ---------------------------------------------------------------------------

LabPanel panel_of(std::initializer_list<std::pair<int, double>> cells, std::size_t d) {
  LabPanel p(d);
  for (const auto& [i, v] : cells) p.set(i, v, false);
  return p;
}

TEST(Normalization, HandComputedPopulationStd) {
  const auto s = fit_normalization({panel_of({{0, 1.0}}, 1), panel_of({{0, 2.0}}, 1), panel_of({{0, 3.0}}, 1)}, 1);
  EXPECT_DOUBLE_EQ(s.mean[0], 2.0);
  EXPECT_DOUBLE_EQ(s.std[0], std::sqrt(2.0 / 3.0));
  EXPECT_TRUE(s.excluded.empty());
}

TEST(Normalization, ConstantAndRareItemsAreExcluded) {
  std::vector<LabPanel> panels;
  for (int n = 0; n < 10; ++n) panels.push_back(panel_of({{0, 4.0}, {1, double(n)}}, 3));
  panels[0].set(2, 1.0, false);
  const auto s = fit_normalization(panels, 2);
  EXPECT_TRUE(s.is_excluded(0));
  EXPECT_FALSE(s.is_excluded(1));
  EXPECT_TRUE(s.is_excluded(2));
  const auto z = apply_normalization(panels[3], s);
  EXPECT_FALSE(z.observed[0]);
  EXPECT_TRUE(z.observed[1]);
}

TEST(Normalization, ZScoresAndInverse) {
  Rng rng(8);
  std::vector<LabPanel> panels;
  for (int n = 0; n < 500; ++n) {
    LabPanel p(6);
    for (int i = 0; i < 6; ++i) {
      if (rng.bernoulli(0.7)) p.set(i, 100.0 * i + (i + 1) * rng.normal(), rng.bernoulli(0.1));
    }
    panels.push_back(p);
  }
  const auto s = fit_normalization(panels, 5);
  std::vector<double> sum(6, 0.0), sq(6, 0.0), count(6, 0.0);
  for (const auto& p : panels) {
    const auto z = apply_normalization(p, s);
    for (int i : z.observed_indices()) {
      sum[i] += z.values[i];
      sq[i] += z.values[i] * z.values[i];
      ++count[i];
    }
    const auto back = invert_normalization(z, s);
    for (int i : p.observed_indices()) {
      EXPECT_NEAR(back.values[i], p.values[i], 1e-9 * std::abs(p.values[i]) + 1e-12);
      EXPECT_EQ(back.abnormal[i], p.abnormal[i]);
    }
  }
  for (int i = 0; i < 6; ++i) {
    EXPECT_NEAR(sum[i] / count[i], 0.0, 1e-12);
    EXPECT_NEAR(sq[i] / count[i], 1.0, 1e-12);
  }
  const auto again = normalization_from_json(normalization_to_json(s));
  EXPECT_EQ(again.mean, s.mean);
  EXPECT_EQ(again.std, s.std);
  EXPECT_EQ(again.excluded, s.excluded);
}

// ---------------------------------------------------------------------------

class LabTextGolden : public ::testing::TestWithParam<const char*> {};

TEST_P(LabTextGolden, MatchesByteExact) {
  const std::string stem = GetParam();
  auto [vocab, units] = read_vocabulary(kFixtures / (stem + ".vocab"));
  std::istringstream in(read_file(kFixtures / (stem + ".csv")));
  const auto r = parse_lab_csv(in, vocab);
  ASSERT_EQ(r.panels.size(), 1u);
  EXPECT_TRUE(r.errors.empty());
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (units[i].empty()) units[i] = r.units[i];
  }
  EXPECT_EQ(render_abnormal_text(r.panels[0].panel, vocab, units), read_file(kFixtures / (stem + ".golden")));
}

INSTANTIATE_TEST_SUITE_P(Fixtures, LabTextGolden,
                         ::testing::Values("labtext_trig_glu", "labtext_none", "labtext_mixed"));

TEST(LabText, TwentyRandomItemsMatchJoinOracle) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 40;
    std::vector<std::string> vocab, units;
    for (int i = 0; i < d; ++i) {
      vocab.push_back("IT" + std::to_string(1000 + i));
      units.push_back(i % 4 == 0 ? "" : (i % 4 == 1 ? "mg/dL" : "mmol/L"));
    }
    LabPanel p(d);
    const auto perm = rng.permutation(d);
    std::vector<bool> chosen(d, false);
    for (int k = 0; k < 20; ++k) chosen[perm[k]] = true;
    for (int i = 0; i < d; ++i) {
      const double v = std::round(rng.normal() * 1e4) / 100.0;
      if (chosen[i]) p.set(i, v, true);
      else if (rng.bernoulli(0.5)) p.set(i, v, false);
    }
    std::vector<std::string> parts;
    for (int i = 0; i < d; ++i) {
      if (!chosen[i]) continue;
      std::ostringstream part;
      part << "ITEMID " << vocab[i] << ": " << format_double(p.values[i]);
      if (!units[i].empty()) part << " " << units[i];
      parts.push_back(part.str());
    }
    std::string expected = "These are abnormal results recorded: ";
    for (std::size_t k = 0; k < parts.size(); ++k) expected += parts[k] + (k + 1 < parts.size() ? "; " : ";");
    const std::string got = render_abnormal_text(p, vocab, units);
    ASSERT_EQ(got, expected);

    // split on "; " recovers the abnormal items in vocabulary order
    std::string body = got.substr(std::string(kAbnormalPrefix).size() + 1);
    body.pop_back();
    std::vector<std::string> pieces;
    for (std::size_t start = 0;;) {
      const auto at = body.find("; ", start);
      pieces.push_back(body.substr(start, at - start));
      if (at == std::string::npos) break;
      start = at + 2;
    }
    EXPECT_EQ(pieces, parts);
  }
}

// ---------------------------------------------------------------------------

TEST(NoteSections, DropsNonCanonicalSections) {
  const auto out = filter_note_sections(std::map<std::string, std::string>{
      {"Chief Complaint", "chest pain"}, {"Social History", "smoker"}});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out.at(NoteSection::kChiefComplaint), "chest pain");
}

TEST(NoteSections, KeepsAllFourVerbatim) {
  const std::vector<std::pair<std::string, std::string>> raw = {
      {"Chief Complaint", "a  b"}, {"Present Illness", "c\nd"}, {"Medical History", " e "},
      {"Medication on Admission", "f;"}};
  const auto out = filter_note_sections(raw);
  ASSERT_EQ(out.size(), 4u);
  for (std::size_t s = 0; s < 4; ++s) EXPECT_EQ(out.at(kNoteSections[s]), raw[s].second);
}

TEST(NoteSections, HeaderNormalisationTable) {
  const std::vector<std::pair<std::string, std::optional<NoteSection>>> table = {
      {"chief  complaint ", NoteSection::kChiefComplaint},
      {"CHIEF COMPLAINT:", NoteSection::kChiefComplaint},
      {"\tChief\nComplaint", NoteSection::kChiefComplaint},
      {"ChiefComplaint", NoteSection::kChiefComplaint},
      {"History of Present Illness:", NoteSection::kPresentIllness},
      {"present illness", NoteSection::kPresentIllness},
      {"Past Medical History", NoteSection::kMedicalHistory},
      {"medical-history", NoteSection::kMedicalHistory},  // punctuation is dropped
      {"Medications on Admission:", NoteSection::kMedicationOnAdmission},
      {"medication on admission", NoteSection::kMedicationOnAdmission},
      {"Social History", std::nullopt},
      {"Discharge Diagnosis", std::nullopt},
      {"", std::nullopt},
  };
  for (const auto& [header, expected] : table) EXPECT_EQ(match_section_header(header), expected) << header;
  EXPECT_EQ(normalize_header(" Chief  Complaint:"), "chief complaint");
}

TEST(NoteSections, RepeatedHeadersAreJoined) {
  const auto out = filter_note_sections(
      std::vector<std::pair<std::string, std::string>>{{"Chief Complaint", "one"}, {"chief complaint:", "two"}});
  EXPECT_EQ(out.at(NoteSection::kChiefComplaint), "one\ntwo");
}

// ---------------------------------------------------------------------------

synth::GenConfig small_gen() {
  synth::GenConfig c;
  c.vocab_size = 10;
  c.num_labels = 4;
  c.n_samples = 200;
  c.d_text = 5;
  return c;
}

TEST(Synth, ZeroMissingnessObservesEverything) {
  auto c = small_gen();
  c.missing_rate = 0.0;
  Rng rng(1);
  const auto out = synth::synth_generate(c, rng);
  for (const auto& v : out.dataset.visits) EXPECT_EQ(v.panel.observed_count(), 10u);
}

TEST(Synth, NoiselessSharedOnlyIsDeterministicInZShared) {
  auto c = small_gen();
  c.noise_sigma = 0.0;
  c.k_lab = 0;
  c.k_text = 0;
  c.missing_rate = 0.0;
  Rng rng(2);
  const auto out = synth::synth_generate(c, rng);
  const auto& t = out.truth;
  ASSERT_EQ(t.latents.cols(), c.k_shared);
  for (int n = 0; n < c.n_samples; ++n) {
    const auto& v = out.dataset.visits[n];
    const Eigen::VectorXd z = t.latents.row(n).transpose();
    const Eigen::VectorXd lab = t.w_lab * z;
    for (int i = 0; i < c.vocab_size; ++i) {
      EXPECT_NEAR(v.panel.values[i], t.item_offset[i] + t.item_scale[i] * lab(i), 1e-9);
    }
    for (std::size_t s = 0; s < kNoteSections.size(); ++s) {
      const auto* e = out.store.find(v.visit_id, section_name(kNoteSections[s]));
      ASSERT_NE(e, nullptr);
      const Eigen::VectorXd expected = t.w_text[s] * z;
      for (int j = 0; j < c.d_text; ++j) EXPECT_EQ((*e)[j], static_cast<float>(expected(j)));
    }
  }
}

TEST(Synth, LabelPrevalenceMatchesMonteCarloOracle) {
  auto c = small_gen();
  c.n_samples = 20000;
  Rng rng(3);
  const auto out = synth::synth_generate(c, rng);
  const auto& t = out.truth;
  const int k = static_cast<int>(t.latents.cols());
  Rng mc(99);
  std::vector<double> expected(c.num_labels, 0.0);
  const int draws = 1000000;
  Eigen::VectorXd z(k);
  for (int d = 0; d < draws; ++d) {
    for (int j = 0; j < k; ++j) z(j) = mc.normal();
    const Eigen::VectorXd logits = t.label_weights * z + t.label_bias;
    for (int l = 0; l < c.num_labels; ++l) expected[l] += 1.0 / (1.0 + std::exp(-logits(l)));
  }
  for (int l = 0; l < c.num_labels; ++l) {
    const double p = expected[l] / draws;
    double hits = 0;
    for (const auto& v : out.dataset.visits) hits += v.labels[l] ? 1 : 0;
    const double sd = std::sqrt(p * (1 - p) / c.n_samples);
    EXPECT_NEAR(hits / c.n_samples, p, 3 * sd) << "label " << l;
  }
}

TEST(Synth, IdenticalSeedsGiveIdenticalFiles) {
  const auto dir = fs::temp_directory_path() / "medfuse_synth_test";
  fs::remove_all(dir);
  for (const char* sub : {"a", "b"}) {
    Rng rng(17);
    const auto out = synth::synth_generate(small_gen(), rng);
    write_dataset(dir / sub, out.dataset);
    text::write_embedding_store(dir / sub / out.dataset.embeddings_file, out.store);
  }
  for (const auto& entry : fs::directory_iterator(dir / "a")) {
    EXPECT_EQ(read_file(entry.path()), read_file(dir / "b" / entry.path().filename())) << entry.path();
  }
  fs::remove_all(dir);
}

TEST(Synth, RejectsInvalidDims) {
  auto c = small_gen();
  c.vocab_size = 0;
  Rng rng(1);
  EXPECT_THROW(synth::synth_generate(c, rng), ConfigError);
  c = small_gen();
  c.k_shared = c.k_lab = c.k_text = 0;
  EXPECT_THROW(synth::synth_generate(c, rng), ConfigError);
}

// ---------------------------------------------------------------------------

TEST(DatasetDir, RoundTripReproducesVisits) {
  Rng rng(4);
  auto out = synth::synth_generate(small_gen(), rng);
  out.dataset.visits[0].notes[NoteSection::kChiefComplaint] = "quote \" comma , newline\n tab\t";
  out.dataset.visits[1].patient_id = "P,with,commas";
  const auto dir = fs::temp_directory_path() / "medfuse_dataset_test";
  fs::remove_all(dir);
  write_dataset(dir, out.dataset);
  const auto back = load_dataset(dir);
  EXPECT_EQ(back.vocabulary, out.dataset.vocabulary);
  EXPECT_EQ(back.units, out.dataset.units);
  EXPECT_EQ(back.num_labels, out.dataset.num_labels);
  EXPECT_EQ(back.embeddings_file, out.dataset.embeddings_file);
  EXPECT_EQ(back.normalization.mean, out.dataset.normalization.mean);
  ASSERT_EQ(back.visits.size(), out.dataset.visits.size());
  for (std::size_t i = 0; i < back.visits.size(); ++i) {
    const auto& a = back.visits[i];
    const auto& b = out.dataset.visits[i];
    EXPECT_EQ(a.patient_id, b.patient_id);
    EXPECT_EQ(a.visit_id, b.visit_id);
    EXPECT_EQ(a.notes, b.notes);
    EXPECT_TRUE(a.panel == b.panel) << b.visit_id;
    EXPECT_EQ(a.labels, b.labels);
  }
  EXPECT_EQ(back.split_indices(true), out.dataset.split_indices(true));
  fs::remove_all(dir);
}

TEST(DatasetDir, SplitIsPatientLevelAndNonEmpty) {
  Rng rng(6);
  const auto out = synth::synth_generate(small_gen(), rng);
  const auto& ds = out.dataset;
  std::map<std::string, bool> side;
  for (const auto& v : ds.visits) {
    const bool val = ds.is_validation(v);
    auto [it, fresh] = side.emplace(v.patient_id, val);
    if (!fresh) EXPECT_EQ(it->second, val) << v.patient_id;
  }
  const double share = double(ds.split_indices(true).size()) / ds.visits.size();
  EXPECT_GT(share, 0.1);
  EXPECT_LT(share, 0.3);
}

}  // namespace
}  // namespace medfuse::ehr
