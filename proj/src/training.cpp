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

#include "medfuse/training.hpp"

#include <cmath>
#include <sstream>

#include "medfuse/config_io.hpp"
#include "medfuse/errors.hpp"

namespace medfuse::train {

void TrainConfig::validate(const fusion::FusionConfig& fusion) const {
  fusion.validate();
  auto fail = [](const std::string& msg) { throw ConfigError("train." + msg); };
  if (batch_size < 1) fail("batch_size must be positive");
  if (fusion.lambda > 0.0 && batch_size < 2) {
    fail("batch_size must be >= 2 when fusion.lambda > 0 (the bound is identically 0 for one sample)");
  }
  if (epochs < 0) fail("epochs must be >= 0");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
  if (!(estimator_learning_rate > 0.0) || !std::isfinite(estimator_learning_rate)) {
    fail("estimator_learning_rate must be positive");
  }
  if (estimator_steps < 0) fail("estimator_steps must be >= 0");
  if (!(threshold > 0.0 && threshold < 1.0)) fail("threshold must be in (0, 1)");
  if (text_hidden < 0) fail("text_hidden must be >= 0");
  if (!(clip_norm >= 0.0)) fail("clip_norm must be >= 0");
  if (fusion.a_tokens != sources().slots()) {
    throw ConfigError("fusion.a_tokens must be " + std::to_string(sources().slots()) +
                      " (one token per note section plus the LabText token)");
  }
}

text::TextSources TrainConfig::sources() const {
  text::TextSources s;
  s.use_notes = use_text;
  s.use_labtext = use_labtext;
  return s;
}

// ---------------------------------------------------------------------------

FeatureSet build_features(const ehr::Dataset& data, const std::vector<int>& indices, const mltm::MltmParams* mltm,
                          const text::EmbeddingStore* store, const TrainConfig& config, int lab_tokens) {
  require(lab_tokens > 0, "build_features: lab_tokens must be positive");
  const text::TextSources sources = config.sources();
  const bool any_text = config.use_text || config.use_labtext;
  if (any_text && store == nullptr) throw ConfigError("text sources are enabled but no embedding store is available");
  if (config.use_mltm && mltm == nullptr) throw ConfigError("train.use_mltm is set but no lab model was given");
  if (config.use_mltm && mltm->config.vocab_size != static_cast<int>(data.vocabulary.size())) {
    throw DimensionError("lab model vocabulary size " + std::to_string(mltm->config.vocab_size) +
                         " differs from the dataset's " + std::to_string(data.vocabulary.size()));
  }

  FeatureSet f;
  f.samples = static_cast<int>(indices.size());
  f.text_slots = sources.slots();
  f.d_text = any_text && store->dim() > 0 ? store->dim() : 1;
  f.lab_tokens = lab_tokens;
  f.d_lab = config.use_mltm ? mltm->config.d_model : 1;
  f.text = Matrix::Zero(static_cast<Eigen::Index>(f.samples) * f.text_slots, f.d_text);
  f.text_valid.assign(static_cast<std::size_t>(f.samples) * f.text_slots, false);
  f.lab = Matrix::Zero(static_cast<Eigen::Index>(f.samples) * lab_tokens, f.d_lab);
  f.lab_valid.assign(static_cast<std::size_t>(f.samples) * lab_tokens, false);
  f.labels = Matrix::Zero(f.samples, data.num_labels);

  std::vector<ehr::LabPanel> panels;
  for (int s = 0; s < f.samples; ++s) {
    const auto& v = data.visits.at(static_cast<std::size_t>(indices[s]));
    f.visit_ids.push_back(v.visit_id);
    require(static_cast<int>(v.labels.size()) == data.num_labels, "build_features: label vector length");
    for (int l = 0; l < data.num_labels; ++l) f.labels(s, l) = v.labels[l] ? 1.0 : 0.0;
    if (any_text) {
      const auto raw = text::gather_text_slots(v.visit_id, *store, sources);
      f.text.middleRows(static_cast<Eigen::Index>(s) * f.text_slots, f.text_slots) = raw.vectors;
      for (int k = 0; k < f.text_slots; ++k) f.text_valid[s * f.text_slots + k] = raw.valid[k];
    }
    if (config.use_mltm) panels.push_back(ehr::apply_normalization(v.panel, data.normalization));
  }
  if (config.use_mltm) {
    const auto tokens = mltm::embed_panels(*mltm, panels, lab_tokens);
    for (int s = 0; s < f.samples; ++s) {
      f.lab.middleRows(static_cast<Eigen::Index>(s) * lab_tokens, lab_tokens) = tokens[s].tokens;
      for (int k = 0; k < lab_tokens; ++k) f.lab_valid[s * lab_tokens + k] = tokens[s].valid[k];
    }
  }
  return f;
}

// ---------------------------------------------------------------------------

FusionModel::FusionModel(const fusion::FusionConfig& c, int d_text, int d_lab, int text_hidden, Rng& rng)
    : config(c) {
  text_proj = text::TextProjection(d_text, c.d_model, text_hidden, rng);
  lab_proj = nn::Linear(d_lab, c.d_model, rng);
  fusion = fusion::FusionParams(c, rng);
  round_to_float(text_proj.first.weight);
  round_to_float(text_proj.second.weight);
  round_to_float(lab_proj.weight);
}

namespace {

struct Gathered {
  Matrix x;
  std::vector<bool> valid;
  ad::Vector mask;
};

Gathered gather(const Matrix& all, const std::vector<bool>& valid, int per_sample, const std::vector<int>& rows) {
  Gathered g;
  const auto n = static_cast<Eigen::Index>(rows.size()) * per_sample;
  g.x.resize(n, all.cols());
  g.valid.resize(static_cast<std::size_t>(n));
  g.mask.resize(n);
  for (std::size_t s = 0; s < rows.size(); ++s) {
    const Eigen::Index dst = static_cast<Eigen::Index>(s) * per_sample;
    const Eigen::Index src = static_cast<Eigen::Index>(rows[s]) * per_sample;
    g.x.middleRows(dst, per_sample) = all.middleRows(src, per_sample);
    for (int k = 0; k < per_sample; ++k) {
      g.valid[dst + k] = valid[src + k];
      g.mask(dst + k) = valid[src + k] ? 1.0 : 0.0;
    }
  }
  return g;
}

Matrix gather_labels(const Matrix& labels, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), labels.cols());
  for (std::size_t s = 0; s < rows.size(); ++s) out.row(static_cast<Eigen::Index>(s)) = labels.row(rows[s]);
  return out;
}

}  // namespace

fusion::BatchOutput forward_model(ad::Graph& g, const FusionModel& model, const FeatureSet& f,
                                  const std::vector<int>& rows, fusion::Probes* probes) {
  require(model.config.a_tokens == f.text_slots, "forward_model: text slot count differs from fusion.a_tokens");
  require(model.config.b_tokens == f.lab_tokens, "forward_model: lab token count differs from fusion.b_tokens");
  require(model.text_proj.first.in() == f.d_text && model.lab_proj.in() == f.d_lab,
          "forward_model: feature widths differ from the model");
  const Gathered t = gather(f.text, f.text_valid, f.text_slots, rows);
  const Gathered l = gather(f.lab, f.lab_valid, f.lab_tokens, rows);
  fusion::BatchInputs in;
  in.za = ad::scale_rows(g, model.text_proj(g, g.constant(t.x)), t.mask);
  in.valid_a = t.valid;
  in.zb = ad::scale_rows(g, model.lab_proj(g, g.constant(l.x)), l.mask);
  in.valid_b = l.valid;
  in.batch = static_cast<int>(rows.size());
  return fusion::forward_batch(g, model.fusion, in, probes);
}

Matrix predict_logits(const FusionModel& model, const FeatureSet& f) {
  Matrix out(f.samples, model.config.num_labels);
  constexpr int kChunk = 256;
  for (int start = 0; start < f.samples; start += kChunk) {
    const int end = std::min(f.samples, start + kChunk);
    std::vector<int> rows;
    for (int s = start; s < end; ++s) rows.push_back(s);
    ad::Graph g(false);
    out.middleRows(start, end - start) = g.value(forward_model(g, model, f, rows).logits);
  }
  return out;
}

MetricsReport evaluate(const FusionModel& model, const FeatureSet& f, double threshold) {
  if (f.samples == 0) throw ConfigError("cannot evaluate on an empty split");
  const Matrix logits = predict_logits(model, f);
  BoolMatrix pred(f.samples), truth(f.samples);
  for (int s = 0; s < f.samples; ++s) {
    for (Eigen::Index l = 0; l < logits.cols(); ++l) {
      pred[s].push_back(1.0 / (1.0 + std::exp(-logits(s, l))) >= threshold);
      truth[s].push_back(f.labels(s, l) > 0.5);
    }
  }
  return compute_metrics(pred, truth);
}

// ---------------------------------------------------------------------------

TrainState init_training(const TrainConfig& train, fusion::FusionConfig fusion, int d_text, int d_lab) {
  fusion.disentangled = train.use_disentangled_transformer;
  train.validate(fusion);
  TrainState s;
  s.train = train;
  s.d_text = d_text;
  s.d_lab = d_lab;
  Rng rng(train.seed);
  s.model = FusionModel(fusion, d_text, d_lab, train.text_hidden, rng);
  Rng est_rng(train.estimator_seed != 0 ? train.estimator_seed : train.seed ^ 0x9e3779b97f4a7c15ULL);
  s.estimator = fusion::MiEstimator(2 * fusion.d_model, fusion.d_model, fusion.estimator_hidden, est_rng);
  s.main_opt = Adam(AdamConfig{.learning_rate = train.learning_rate, .clip_norm = train.clip_norm});
  s.estimator_opt = Adam(AdamConfig{.learning_rate = train.estimator_learning_rate, .clip_norm = train.clip_norm});
  s.rng = rng;
  return s;
}

void run_training(TrainState& s, const FeatureSet& f, const TrainHooks& hooks) {
  const fusion::FusionConfig& fc = s.model.config;
  require(f.samples > 0, "run_training: no training samples");
  const bool mi_active = fc.lambda > 0.0 && fc.disentangled;
  const auto main_params = nn::param_list(s.model);
  const auto est_params = nn::param_list(s.estimator);
  const int n = f.samples, bs = s.train.batch_size;

  while (s.epochs_done < s.train.epochs) {
    const int epoch = s.epochs_done;
    const auto order = s.rng.permutation(n);
    EpochStats stats;
    int batches = 0;
    for (int start = 0; start < n; start += bs) {
      const std::vector<int> rows(order.begin() + start, order.begin() + std::min(n, start + bs));
      const Matrix labels = gather_labels(f.labels, rows);
      auto where = [&] { return " at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches); };

      if (mi_active && s.train.estimator_steps > 0) {
        Matrix x, y;
        {
          ad::Graph g(false);
          const auto out = forward_model(g, s.model, f, rows);
          x.resize(static_cast<Eigen::Index>(rows.size()), 2 * fc.d_model);
          x << g.value(out.pa), g.value(out.pb);
          y = g.value(out.pc);
        }
        for (int k = 0; k < s.train.estimator_steps; ++k) {
          ad::Graph g;
          const ad::Var ll = fusion::estimator_ll_graph(g, s.estimator, g.constant(x), g.constant(y));
          const double value = g.scalar(ll);
          if (!std::isfinite(value)) throw NumericError("estimator log-likelihood is not finite" + where());
          g.backward(ad::scale(g, ll, -1.0));
          s.estimator_opt.step(est_params, g);
          stats.estimator_ll += value / s.train.estimator_steps;
        }
      }

      ad::Graph g;
      for (const Matrix* p : est_params) g.freeze(*p);
      const auto out = forward_model(g, s.model, f, rows);
      const ad::Var focal = ad::focal_loss(g, out.logits, labels, fc.gamma, fc.alpha);
      ad::Var total = focal;
      double mi = 0.0;
      if (mi_active) {
        const ad::Var v = fusion::mi_loss_graph(g, s.estimator, out);
        mi = g.scalar(v);
        total = ad::add(g, focal, ad::scale(g, v, fc.lambda));
      }
      const double loss = g.scalar(total);
      if (!std::isfinite(loss)) throw NumericError("training loss is not finite" + where());
      g.backward(total);
      s.main_opt.step(main_params, g);
      stats.focal += g.scalar(focal);
      stats.mi += mi;
      stats.loss += loss;
      ++batches;
    }
    stats.focal /= batches;
    stats.mi /= batches;
    stats.estimator_ll /= batches;
    stats.loss /= batches;
    s.history.push_back(stats);
    ++s.epochs_done;
    if (hooks.on_epoch) hooks.on_epoch(s);
  }
}

// ---------------------------------------------------------------------------

namespace {

void put_adam(Checkpoint& ckpt, const std::string& name, const Adam& opt) {
  ckpt.put_u64(name + ".steps", static_cast<std::uint64_t>(opt.steps()));
  ckpt.put_u64(name + ".arrays", opt.first_moments().size());
  for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
    ckpt.put_f64(name + ".m." + std::to_string(i), opt.first_moments()[i], true);
    ckpt.put_f64(name + ".v." + std::to_string(i), opt.second_moments()[i], true);
  }
}

void get_adam(const Checkpoint& ckpt, const std::string& name, Adam& opt) {
  const auto arrays = ckpt.u64(name + ".arrays");
  std::vector<Matrix> m, v;
  for (std::uint64_t i = 0; i < arrays; ++i) {
    m.push_back(ckpt.matrix(name + ".m." + std::to_string(i)));
    v.push_back(ckpt.matrix(name + ".v." + std::to_string(i)));
  }
  opt.restore(static_cast<long long>(ckpt.u64(name + ".steps")), std::move(m), std::move(v));
}

std::string history_to_text(const std::vector<EpochStats>& h) {
  std::string out;
  for (const auto& e : h) {
    out += format_double(e.focal) + " " + format_double(e.mi) + " " + format_double(e.estimator_ll) + " " +
           format_double(e.loss) + "\n";
  }
  return out;
}

std::vector<EpochStats> history_from_text(const std::string& text) {
  std::vector<EpochStats> h;
  for (const auto& line : split(text, '\n')) {
    if (trim(line).empty()) continue;
    const auto f = split(line, ' ');
    if (f.size() != 4) throw FormatError("bad history line '" + line + "'");
    auto num = [&](const std::string& s) {
      const auto v = parse_double(s);
      if (!v) throw FormatError("bad history value '" + s + "'");
      return *v;
    };
    h.push_back({num(f[0]), num(f[1]), num(f[2]), num(f[3])});
  }
  return h;
}

}  // namespace

Checkpoint to_checkpoint(const TrainState& s) {
  Checkpoint ckpt{std::string(kCheckpointComponent)};
  ckpt.put_text("train_config", fields_to_text(s.train));
  ckpt.put_text("fusion_config", fields_to_text(s.model.config));
  ckpt.put_text("config_hash", s.config_hash);
  ckpt.put_u64("d_text", static_cast<std::uint64_t>(s.d_text));
  ckpt.put_u64("d_lab", static_cast<std::uint64_t>(s.d_lab));
  ckpt.put_u64("epochs_done", static_cast<std::uint64_t>(s.epochs_done));
  ckpt.put_text("history", history_to_text(s.history));
  save_params(ckpt, "model", s.model);
  save_params(ckpt, "estimator", s.estimator, true);
  put_adam(ckpt, "main_opt", s.main_opt);
  put_adam(ckpt, "estimator_opt", s.estimator_opt);
  ckpt.put_text("rng", s.rng.state());
  return ckpt;
}

TrainState from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.component() != kCheckpointComponent) {
    throw FormatError("checkpoint holds a '" + ckpt.component() + "' component, expected 'fusion'");
  }
  const auto train = fields_from_text<TrainConfig>(ckpt.text("train_config"), "train");
  const auto fusion = fields_from_text<fusion::FusionConfig>(ckpt.text("fusion_config"), "fusion");
  TrainState s = init_training(train, fusion, static_cast<int>(ckpt.u64("d_text")),
                               static_cast<int>(ckpt.u64("d_lab")));
  load_params(ckpt, "model", s.model);
  load_params(ckpt, "estimator", s.estimator);
  get_adam(ckpt, "main_opt", s.main_opt);
  get_adam(ckpt, "estimator_opt", s.estimator_opt);
  s.rng.set_state(ckpt.text("rng"));
  s.epochs_done = static_cast<int>(ckpt.u64("epochs_done"));
  s.history = history_from_text(ckpt.text("history"));
  s.config_hash = ckpt.text("config_hash");
  return s;
}

}  // namespace medfuse::train
