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

#include "medfuse/synth.hpp"

#include <cmath>

#include "medfuse/errors.hpp"

namespace medfuse::synth {

void GenConfig::validate() const {
  auto positive = [](int v, const char* key) {
    if (v <= 0) throw ConfigError(std::string("data.") + key + " must be positive, got " + std::to_string(v));
  };
  auto non_negative = [](int v, const char* key) {
    if (v < 0) throw ConfigError(std::string("data.") + key + " must be >= 0, got " + std::to_string(v));
  };
  auto rate = [](double v, const char* key) {
    if (!(v >= 0.0 && v < 1.0)) throw ConfigError(std::string("data.") + key + " must be in [0, 1)");
  };
  positive(vocab_size, "vocab_size");
  positive(num_labels, "num_labels");
  positive(n_samples, "n_samples");
  positive(d_text, "d_text");
  positive(visits_per_patient, "visits_per_patient");
  non_negative(k_shared, "k_shared");
  non_negative(k_lab, "k_lab");
  non_negative(k_text, "k_text");
  non_negative(min_support, "min_support");
  if (k_shared + k_lab + k_text == 0) throw ConfigError("data.k_shared + k_lab + k_text must be positive");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("data.noise_sigma must be >= 0");
  if (!std::isfinite(label_scale)) throw ConfigError("data.label_scale must be finite");
  rate(missing_rate, "missing_rate");
  rate(section_missing_rate, "section_missing_rate");
  rate(val_fraction, "val_fraction");
}

namespace {

Matrix gaussian_matrix(int rows, int cols, double scale, Rng& rng) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

std::vector<float> to_floats(const Eigen::VectorXd& v) {
  std::vector<float> out(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v(i));
  return out;
}

std::string numbered(const char* prefix, int i, int width) {
  std::string digits = std::to_string(i);
  if (static_cast<int>(digits.size()) < width) digits.insert(0, width - digits.size(), '0');
  return prefix + digits;
}

}  // namespace

SynthOutput synth_generate(const GenConfig& cfg, Rng& rng) {
  cfg.validate();
  const int d = cfg.vocab_size;
  const int ks = cfg.k_shared, kl = cfg.k_lab, kt = cfg.k_text;
  const int k_lab_in = ks + kl, k_text_in = ks + kt, k_all = ks + kl + kt;
  const double sigma = cfg.noise_sigma;

  SynthOutput out;
  GroundTruth& truth = out.truth;
  truth.w_lab = k_lab_in > 0 ? gaussian_matrix(d, k_lab_in, 1.0 / std::sqrt(double(k_lab_in)), rng) : Matrix::Zero(d, 0);
  for (std::size_t s = 0; s < ehr::kNoteSections.size(); ++s) {
    truth.w_text.push_back(k_text_in > 0 ? gaussian_matrix(cfg.d_text, k_text_in, 1.0 / std::sqrt(double(k_text_in)), rng)
                                         : Matrix::Zero(cfg.d_text, 0));
  }
  truth.w_labtext = gaussian_matrix(cfg.d_text, d, 1.0 / std::sqrt(double(d)), rng);
  truth.label_weights = gaussian_matrix(cfg.num_labels, k_all, cfg.label_scale / std::sqrt(double(k_all)), rng);
  truth.label_bias.resize(cfg.num_labels);
  for (int l = 0; l < cfg.num_labels; ++l) truth.label_bias(l) = rng.uniform(-1.0, 0.0);
  for (int i = 0; i < d; ++i) {
    truth.item_offset.push_back(rng.uniform(10.0, 200.0));
    truth.item_scale.push_back(rng.uniform(1.0, 30.0));
  }
  // analytic std of each item's latent, for the abnormal flag
  std::vector<double> latent_sd(d);
  for (int i = 0; i < d; ++i) latent_sd[i] = std::sqrt(truth.w_lab.row(i).squaredNorm() + sigma * sigma);

  ehr::Dataset& ds = out.dataset;
  const int width = std::max(3, static_cast<int>(std::to_string(d).size()));
  for (int i = 0; i < d; ++i) {
    ds.vocabulary.push_back(numbered("LAB", i, width));
    ds.units.push_back(i % 3 == 0 ? "mg/dL" : (i % 3 == 1 ? "mmol/L" : "U/L"));
  }
  ds.num_labels = cfg.num_labels;
  ds.val_fraction = cfg.val_fraction;
  out.store = text::EmbeddingStore(cfg.d_text, "synthetic");

  truth.latents.resize(cfg.n_samples, k_all);
  const int id_width = std::max(6, static_cast<int>(std::to_string(cfg.n_samples).size()));
  for (int n = 0; n < cfg.n_samples; ++n) {
    Eigen::VectorXd z(k_all);
    for (int j = 0; j < k_all; ++j) z(j) = rng.normal();
    truth.latents.row(n) = z.transpose();
    const Eigen::VectorXd z_lab = z.head(k_lab_in);
    Eigen::VectorXd z_text(k_text_in);
    z_text << z.head(ks), z.tail(kt);

    ehr::VisitRecord v;
    v.patient_id = numbered("P", n / cfg.visits_per_patient, id_width);
    v.visit_id = numbered("V", n, id_width);
    v.panel = ehr::LabPanel(static_cast<std::size_t>(d));

    Eigen::VectorXd lab = truth.w_lab * z_lab;
    for (int i = 0; i < d; ++i) lab(i) += sigma * rng.normal();
    Eigen::VectorXd abnormal_code = Eigen::VectorXd::Zero(d);
    bool any_abnormal = false;
    for (int i = 0; i < d; ++i) {
      const bool observed = !rng.bernoulli(cfg.missing_rate);
      if (!observed) continue;
      const bool abnormal = latent_sd[i] > 0.0 && std::abs(lab(i)) / latent_sd[i] > 2.0;
      v.panel.set(static_cast<std::size_t>(i), truth.item_offset[i] + truth.item_scale[i] * lab(i), abnormal);
      if (abnormal) {
        abnormal_code(i) = lab(i) > 0 ? 1.0 : -1.0;
        any_abnormal = true;
      }
    }

    for (std::size_t s = 0; s < ehr::kNoteSections.size(); ++s) {
      Eigen::VectorXd e = truth.w_text[s] * z_text;
      for (int j = 0; j < cfg.d_text; ++j) e(j) += sigma * rng.normal();
      if (rng.bernoulli(cfg.section_missing_rate)) continue;
      const auto section = ehr::kNoteSections[s];
      v.notes[section] = "synthetic " + std::string(ehr::section_name(section)) + " note for " + v.visit_id;
      out.store.insert(v.visit_id, ehr::section_name(section), to_floats(e));
    }
    {
      Eigen::VectorXd e = truth.w_labtext * abnormal_code;
      for (int j = 0; j < cfg.d_text; ++j) e(j) += sigma * rng.normal();
      if (any_abnormal) out.store.insert(v.visit_id, text::kLabTextSection, to_floats(e));
    }

    const Eigen::VectorXd logits = truth.label_weights * z + truth.label_bias;
    for (int l = 0; l < cfg.num_labels; ++l) {
      const double p = 1.0 / (1.0 + std::exp(-logits(l)));
      v.labels.push_back(rng.bernoulli(p));
    }
    ds.visits.push_back(std::move(v));
  }

  std::vector<ehr::LabPanel> train_panels;
  for (const auto& v : ds.visits) {
    if (!ds.is_validation(v)) train_panels.push_back(v.panel);
  }
  if (train_panels.empty()) {
    for (const auto& v : ds.visits) train_panels.push_back(v.panel);
  }
  ds.normalization = ehr::fit_normalization(train_panels, cfg.min_support);
  ds.embeddings_file = "embeddings.emb";
  return out;
}

}  // namespace medfuse::synth
