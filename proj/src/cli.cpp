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

#include "medfuse/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "medfuse/checkpoint.hpp"
#include "medfuse/config_io.hpp"
#include "medfuse/ehr_data.hpp"
#include "medfuse/errors.hpp"
#include "medfuse/io_util.hpp"
#include "medfuse/mltm.hpp"
#include "medfuse/run_config.hpp"
#include "medfuse/synth.hpp"
#include "medfuse/text_embed.hpp"
#include "medfuse/training.hpp"
#include "medfuse/verify.hpp"

namespace medfuse::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr double kGradcheckTolerance = 1e-4;
constexpr const char* kLabModelGroup = "lab_model";

std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv("MEDFUSE_SEED");
  if (raw == nullptr || *raw == '\0') return std::nullopt;
  std::uint64_t v = 0;
  if (!field_from_string(raw, v)) {
    throw ConfigError("MEDFUSE_SEED must be a non-negative integer, got '" + std::string(raw) + "'");
  }
  return v;
}

// flag, then MEDFUSE_SEED, then the fallback
std::uint64_t resolve_seed(const CLI::Option* flag, std::uint64_t flag_value, std::uint64_t fallback) {
  if (flag->count() > 0) return flag_value;
  if (auto e = env_seed()) return *e;
  return fallback;
}

RunConfig load_config(const std::string& path) {
  RunConfig c = path.empty() ? RunConfig{} : load_run_config(path);
  c.validate();
  return c;
}

// The stamp ignores train.epochs so a resumed run carries the same hash as an
// uninterrupted one.
std::string config_stamp(RunConfig c, std::uint64_t seed) {
  c.train.epochs = 0;
  return hex64(fnv1a64(write_run_config(c) + "\nseed = " + std::to_string(seed) + "\n"));
}

std::vector<ehr::LabPanel> normalized_panels(const ehr::Dataset& ds, const std::vector<int>& idx) {
  std::vector<ehr::LabPanel> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(ehr::apply_normalization(ds.visits[i].panel, ds.normalization));
  return out;
}

std::optional<text::EmbeddingStore> dataset_store(const fs::path& dir, const ehr::Dataset& ds) {
  if (ds.embeddings_file.empty()) return std::nullopt;
  auto loaded = text::load_embedding_store(dir / ds.embeddings_file);
  if (!loaded.rejected.empty()) {
    const auto& r = loaded.rejected.front();
    throw FormatError((dir / ds.embeddings_file).string() + " line " + std::to_string(r.line) + ": " + r.message);
  }
  return std::move(loaded.store);
}

void check_labels(const fusion::FusionConfig& fc, const ehr::Dataset& ds) {
  if (fc.num_labels != ds.num_labels) {
    throw ConfigError("fusion.num_labels = " + std::to_string(fc.num_labels) + " does not match the dataset's " +
                      std::to_string(ds.num_labels) + " labels");
  }
}

void check_vocab(const mltm::MltmConfig& mc, const ehr::Dataset& ds) {
  if (mc.vocab_size != static_cast<int>(ds.vocabulary.size())) {
    throw ConfigError("mltm.vocab_size = " + std::to_string(mc.vocab_size) + " does not match the dataset's " +
                      std::to_string(ds.vocabulary.size()) + " lab items");
  }
}

json metrics_summary(const MetricsReport& r) {
  return {{"f1_macro", r.f1_macro}, {"f1_weighted", r.f1_weighted}, {"precision", r.precision},
          {"recall", r.recall},     {"accuracy", r.accuracy},       {"samples", r.samples}};
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string config, out;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
};

json cmd_synth(const SynthArgs& a) {
  RunConfig cfg = load_config(a.config);
  const std::uint64_t seed = resolve_seed(a.seed_opt, a.seed, cfg.train.seed);
  Rng rng(seed);
  auto gen = synth::synth_generate(cfg.data, rng);
  gen.dataset.config_hash = config_stamp(cfg, seed);
  const fs::path dir(a.out);
  ehr::write_dataset(dir, gen.dataset);
  text::write_embedding_store(dir / gen.dataset.embeddings_file, gen.store);
  return {{"command", "synth"},
          {"visits", gen.dataset.visits.size()},
          {"train_visits", gen.dataset.split_indices(false).size()},
          {"val_visits", gen.dataset.split_indices(true).size()},
          {"embeddings", gen.store.size()},
          {"seed", seed},
          {"config_hash", gen.dataset.config_hash},
          {"out", dir.string()}};
}

// ---------------------------------------------------------------------------

struct PrepareArgs {
  std::string labs, notes, vocab, out, embed_url;
  int min_support = 5;
  double val_fraction = 0.2;
  int embed_dim = 0;
};

// One JSON object per line: {"patient_id", "visit_id", "sections": {header: text}, "labels": [0, 1, ...]}
std::vector<ehr::VisitRecord> read_notes(const fs::path& path, int& num_labels) {
  std::istringstream in(read_file(path));
  std::vector<ehr::VisitRecord> visits;
  std::string line;
  std::size_t line_no = 0;
  num_labels = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = path.string() + " line " + std::to_string(line_no) + ": ";
    try {
      const json j = json::parse(line);
      ehr::VisitRecord v;
      v.patient_id = j.at("patient_id").get<std::string>();
      v.visit_id = j.at("visit_id").get<std::string>();
      std::vector<std::pair<std::string, std::string>> raw;
      for (const auto& [k, text] : j.at("sections").items()) raw.emplace_back(k, text.get<std::string>());
      v.notes = ehr::filter_note_sections(raw);
      for (const auto& b : j.at("labels")) {
        const int x = b.is_boolean() ? int(b.get<bool>()) : b.get<int>();
        if (x != 0 && x != 1) throw FormatError("labels must be 0 or 1");
        v.labels.push_back(x == 1);
      }
      if (num_labels < 0) num_labels = static_cast<int>(v.labels.size());
      if (static_cast<int>(v.labels.size()) != num_labels) {
        throw FormatError("expected " + std::to_string(num_labels) + " labels, got " + std::to_string(v.labels.size()));
      }
      visits.push_back(std::move(v));
    } catch (const json::exception& e) {
      throw FormatError(where + e.what());
    } catch (const FormatError& e) {
      throw FormatError(where + e.what());
    }
  }
  if (visits.empty()) throw FormatError(path.string() + " holds no visits");
  if (num_labels < 1) throw FormatError(path.string() + ": visits carry no labels");
  return visits;
}

json cmd_prepare(const PrepareArgs& a) {
  if (a.min_support < 1) throw ConfigError("--min-support must be positive");
  if (!(a.val_fraction >= 0.0 && a.val_fraction < 1.0)) throw ConfigError("--val-fraction must be in [0, 1)");
  if (!a.embed_url.empty() && a.embed_dim < 1) throw ConfigError("--embed-dim must be positive with --embed-url");

  ehr::Dataset ds;
  std::tie(ds.vocabulary, ds.units) = ehr::read_vocabulary(a.vocab);
  ds.val_fraction = a.val_fraction;
  ds.visits = read_notes(a.notes, ds.num_labels);

  std::ifstream labs(a.labs);
  if (!labs) throw IoError("cannot open " + a.labs);
  const auto parsed = ehr::parse_lab_csv(labs, ds.vocabulary);
  for (std::size_t i = 0; i < ds.units.size(); ++i) {
    if (ds.units[i].empty()) ds.units[i] = parsed.units[i];
  }
  std::map<std::string, std::size_t> by_visit;
  for (std::size_t i = 0; i < ds.visits.size(); ++i) {
    if (!by_visit.emplace(ds.visits[i].visit_id, i).second) {
      throw FormatError(a.notes + ": visit " + ds.visits[i].visit_id + " appears twice");
    }
    ds.visits[i].panel = ehr::LabPanel(ds.vocabulary.size());
  }
  std::size_t unmatched = 0;
  for (const auto& p : parsed.panels) {
    const auto it = by_visit.find(p.visit_id);
    if (it == by_visit.end()) {
      ++unmatched;
      continue;
    }
    ds.visits[it->second].panel = p.panel;
  }

  std::vector<ehr::LabPanel> fit;
  for (const auto& v : ds.visits) {
    if (!ds.is_validation(v)) fit.push_back(v.panel);
  }
  if (fit.empty()) throw ConfigError("the training split is empty; lower --val-fraction");
  ds.normalization = ehr::fit_normalization(fit, a.min_support);

  std::ostringstream labtext;
  std::size_t rendered = 0;
  std::vector<std::string> texts(ds.visits.size());
  for (std::size_t i = 0; i < ds.visits.size(); ++i) {
    texts[i] = ehr::render_abnormal_text(ds.visits[i].panel, ds.vocabulary, ds.units);
    if (texts[i].empty()) continue;
    ++rendered;
    labtext << json{{"visit_id", ds.visits[i].visit_id}, {"text", texts[i]}}.dump() << '\n';
  }

  std::optional<text::EmbeddingStore> store;
  if (!a.embed_url.empty()) {
    text::HttpEmbeddingProvider provider(a.embed_url);
    text::CachedEmbeddingClient client(provider, a.embed_dim);
    store.emplace(a.embed_dim, a.embed_url);
    for (std::size_t i = 0; i < ds.visits.size(); ++i) {
      const auto& v = ds.visits[i];
      for (const auto& [s, note] : v.notes) store->insert(v.visit_id, ehr::section_name(s), client.request(note));
      if (!texts[i].empty()) store->insert(v.visit_id, text::kLabTextSection, client.request(texts[i]));
    }
    ds.embeddings_file = "embeddings.emb";
  }

  std::ostringstream stamp;
  stamp << fnv1a64(read_file(a.labs)) << ' ' << fnv1a64(read_file(a.notes)) << ' ' << fnv1a64(read_file(a.vocab))
        << ' ' << a.min_support << ' ' << format_double(a.val_fraction) << ' ' << a.embed_url << ' ' << a.embed_dim;
  ds.config_hash = hex64(fnv1a64(stamp.str()));

  const fs::path dir(a.out);
  ehr::write_dataset(dir, ds);
  write_file_atomic(dir / "labtext.jsonl", labtext.str());
  if (store) text::write_embedding_store(dir / ds.embeddings_file, *store);

  json summary = {{"command", "prepare"},
                  {"visits", ds.visits.size()},
                  {"labels", ds.num_labels},
                  {"lab_rows", parsed.rows_read},
                  {"lab_row_errors", parsed.errors.size()},
                  {"unknown_items", parsed.unknown_items},
                  {"duplicate_rows", parsed.duplicate_rows},
                  {"unmatched_lab_visits", unmatched},
                  {"labtext_rendered", rendered},
                  {"excluded_items", ds.normalization.excluded.size()},
                  {"embeddings", store ? store->size() : 0},
                  {"config_hash", ds.config_hash},
                  {"out", dir.string()}};
  if (!parsed.errors.empty()) {
    summary["first_row_error"] = "line " + std::to_string(parsed.errors.front().line) + ": " + parsed.errors.front().message;
  }
  return summary;
}

// ---------------------------------------------------------------------------

struct RenderArgs {
  std::string panel, vocab;
};

std::string cmd_render_labtext(const RenderArgs& a) {
  std::vector<std::string> vocab, units;
  if (!a.vocab.empty()) {
    std::tie(vocab, units) = ehr::read_vocabulary(a.vocab);
  } else {
    // items in order of first appearance
    std::istringstream in(read_file(a.panel));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto cols = split(line, ',');
      if (cols.size() < 3) continue;
      const std::string id(trim(cols[2]));
      if (!id.empty() && std::find(vocab.begin(), vocab.end(), id) == vocab.end()) vocab.push_back(id);
    }
    units.assign(vocab.size(), "");
  }
  std::istringstream in(read_file(a.panel));
  const auto parsed = ehr::parse_lab_csv(in, vocab);
  if (!parsed.errors.empty()) {
    throw FormatError(a.panel + " line " + std::to_string(parsed.errors.front().line) + ": " +
                      parsed.errors.front().message);
  }
  if (parsed.panels.size() != 1) {
    throw FormatError(a.panel + " must hold exactly one visit, found " + std::to_string(parsed.panels.size()));
  }
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (units[i].empty()) units[i] = parsed.units[i];
  }
  return ehr::render_abnormal_text(parsed.panels.front().panel, vocab, units);
}

// ---------------------------------------------------------------------------

struct PretrainArgs {
  std::string data, config, out;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
};

json cmd_pretrain(const PretrainArgs& a) {
  RunConfig cfg = load_config(a.config);
  const std::uint64_t seed = resolve_seed(a.seed_opt, a.seed, cfg.train.seed);
  const auto ds = ehr::load_dataset(a.data);
  check_vocab(cfg.mltm, ds);
  const auto train_panels = normalized_panels(ds, ds.split_indices(false));
  if (train_panels.empty()) throw ConfigError("the dataset's training split is empty");
  Rng rng(seed);
  const auto result = mltm::pretrain(train_panels, cfg.mltm, rng);
  const std::string hash = config_stamp(cfg, seed);
  mltm::save_mltm(a.out, result.params, seed, hash);

  json summary = {{"command", "pretrain-mltm"},
                  {"epochs", result.loss_history.size()},
                  {"final_loss", result.loss_history.empty() ? 0.0 : result.loss_history.back()},
                  {"skipped_panels", result.skipped_panels},
                  {"seed", seed},
                  {"config_hash", hash},
                  {"out", a.out}};
  const auto val = normalized_panels(ds, ds.split_indices(true));
  if (!val.empty()) {
    Rng eval_rng(seed + 1);
    summary["val_masked_mse"] = mltm::masked_value_mse(result.params, val, cfg.mltm.mask_ratio, eval_rng);
  }
  return summary;
}

// ---------------------------------------------------------------------------

struct Inputs {
  ehr::Dataset data;
  std::optional<text::EmbeddingStore> store;
};

Inputs load_inputs(const std::string& dir, const train::TrainConfig& tc) {
  Inputs in{ehr::load_dataset(dir), std::nullopt};
  if (tc.use_text || tc.use_labtext) {
    in.store = dataset_store(dir, in.data);
    if (!in.store) throw ConfigError("train.use_text and train.use_labtext need a dataset with an embedding store");
  }
  return in;
}

Checkpoint fusion_checkpoint(const train::TrainState& state, const mltm::MltmParams* lab_model) {
  Checkpoint ckpt = train::to_checkpoint(state);
  if (lab_model) {
    ckpt.put_text(std::string(kLabModelGroup) + ".config", fields_to_text(lab_model->config));
    save_params(ckpt, kLabModelGroup, *lab_model);
  }
  return ckpt;
}

std::optional<mltm::MltmParams> embedded_lab_model(const Checkpoint& ckpt) {
  const std::string key = std::string(kLabModelGroup) + ".config";
  if (!ckpt.has(key)) return std::nullopt;
  const auto config = fields_from_text<mltm::MltmConfig>(ckpt.text(key), "mltm");
  Rng scratch(0);
  mltm::MltmParams p(config, scratch);
  load_params(ckpt, kLabModelGroup, p);
  return p;
}

struct TrainArgs {
  std::string data, mltm, config, out, resume;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
};

json cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_config(a.config);
  cfg.train.seed = resolve_seed(a.seed_opt, a.seed, cfg.train.seed);
  cfg.train.validate(cfg.fusion);
  const auto in = load_inputs(a.data, cfg.train);
  check_labels(cfg.fusion, in.data);

  std::optional<mltm::MltmParams> lab_model;
  if (cfg.train.use_mltm) {
    if (a.mltm.empty()) throw ConfigError("--mltm is required when train.use_mltm is true");
    lab_model = mltm::load_mltm(a.mltm);
    if (lab_model->config.vocab_size != static_cast<int>(in.data.vocabulary.size())) {
      throw ConfigError(a.mltm + " was trained on " + std::to_string(lab_model->config.vocab_size) +
                        " lab items, the dataset has " + std::to_string(in.data.vocabulary.size()));
    }
  }
  const mltm::MltmParams* lab = lab_model ? &*lab_model : nullptr;
  const text::EmbeddingStore* store = in.store ? &*in.store : nullptr;
  const auto train_features =
      train::build_features(in.data, in.data.split_indices(false), lab, store, cfg.train, cfg.fusion.b_tokens);
  if (train_features.samples == 0) throw ConfigError("the dataset's training split is empty");

  const std::string hash = config_stamp(cfg, cfg.train.seed);
  train::TrainState state;
  if (!a.resume.empty()) {
    state = train::from_checkpoint(Checkpoint::load(a.resume));
    if (state.config_hash != hash) {
      throw ConfigError(a.resume + " was trained with a different configuration (hash " + state.config_hash +
                        ", current " + hash + ")");
    }
    state.train.epochs = cfg.train.epochs;
  } else {
    state = train::init_training(cfg.train, cfg.fusion, train_features.d_text, train_features.d_lab);
    state.config_hash = hash;
  }

  const fs::path out(a.out);
  train::run_training(state, train_features, {.on_epoch = [&](const train::TrainState& s) {
                        fusion_checkpoint(s, lab).save(out);
                      }});
  fusion_checkpoint(state, lab).save(out);

  json summary = {{"command", "train"},
                  {"epochs", state.epochs_done},
                  {"seed", cfg.train.seed},
                  {"config_hash", hash},
                  {"out", out.string()}};
  if (!state.history.empty()) {
    summary["first_focal"] = state.history.front().focal;
    summary["final_focal"] = state.history.back().focal;
    summary["final_mi"] = state.history.back().mi;
  }
  const auto val_idx = in.data.split_indices(true);
  if (!val_idx.empty()) {
    const auto val = train::build_features(in.data, val_idx, lab, store, cfg.train, cfg.fusion.b_tokens);
    summary["val"] = metrics_summary(train::evaluate(state.model, val, cfg.train.threshold));
  }
  return summary;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string ckpt, data, report, split = "val";
  double threshold = -1.0;
};

json cmd_evaluate(const EvaluateArgs& a) {
  const Checkpoint ckpt = Checkpoint::load(a.ckpt);
  const auto state = train::from_checkpoint(ckpt);
  const double tau = a.threshold < 0.0 ? state.train.threshold : a.threshold;
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("--threshold must be in (0, 1)");
  const auto in = load_inputs(a.data, state.train);
  check_labels(state.model.config, in.data);
  const auto lab_model = embedded_lab_model(ckpt);
  if (state.train.use_mltm && !lab_model) throw FormatError(a.ckpt + " holds no lab model");

  std::vector<int> idx;
  if (a.split == "all") {
    for (std::size_t i = 0; i < in.data.visits.size(); ++i) idx.push_back(static_cast<int>(i));
  } else {
    idx = in.data.split_indices(a.split == "val");
  }
  if (idx.empty()) throw ConfigError("the " + a.split + " split is empty");
  const auto features = train::build_features(in.data, idx, lab_model ? &*lab_model : nullptr,
                                              in.store ? &*in.store : nullptr, state.train,
                                              state.model.config.b_tokens);
  const auto report = train::evaluate(state.model, features, tau);
  write_file_atomic(a.report, metrics_to_json(report, state.config_hash, state.train.seed, a.split, tau) + "\n");

  json summary = {{"command", "evaluate"}, {"split", a.split},        {"threshold", tau},
                  {"config_hash", state.config_hash}, {"report", a.report}};
  summary.update(metrics_summary(report));
  return summary;
}

// ---------------------------------------------------------------------------

struct MiBenchArgs {
  MiBenchConfig bench;
  CLI::Option* seed_opt = nullptr;
};

json cmd_mi_bench(MiBenchArgs a) {
  a.bench.seed = resolve_seed(a.seed_opt, a.bench.seed, 0);
  const auto r = run_mi_bench(a.bench);
  return {{"command", "mi-bench"},      {"rho", a.bench.rho},          {"dim", a.bench.dim},
          {"seed", a.bench.seed},       {"analytic_mi", r.analytic},   {"estimate", r.estimate},
          {"estimate_sd", r.estimate_sd}, {"estimator_ll", r.estimator_ll}, {"true_ll", r.true_ll},
          {"seconds", r.seconds}};
}

struct GradcheckArgs {
  std::string target;
  std::uint64_t seed = 1;
};

json cmd_gradcheck(const GradcheckArgs& a, bool& passed) {
  const auto r = run_gradcheck(a.target, a.seed);
  passed = r.max_rel_error <= kGradcheckTolerance;
  return {{"command", "gradcheck"},   {"target", a.target},       {"max_rel_error", r.max_rel_error},
          {"checked", r.checked},     {"worst", r.worst},         {"tolerance", kGradcheckTolerance},
          {"pass", passed}};
}

// ---------------------------------------------------------------------------

void error_line(std::ostream& err, const char* kind, int code, const std::string& message) {
  err << json{{"error", kind}, {"exit", code}, {"message", message}}.dump() << '\n';
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal EHR fusion: lab-value encoder pretraining, text and lab fusion, evaluation."};
  app.name("medfuse");
  app.require_subcommand(1, 1);
  app.option_defaults()->always_capture_default();
  app.footer("MEDFUSE_SEED sets the seed when --seed is not given. Exit codes: 0 ok, 1 usage/config, 2 runtime.");

  SynthArgs synth_a;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset and its embedding store");
  synth->add_option("--config", synth_a.config, "Run config file; built-in defaults when empty");
  synth->add_option("--out", synth_a.out, "Output dataset directory")->required();
  synth_a.seed_opt = synth->add_option("--seed", synth_a.seed, "Seed; falls back to MEDFUSE_SEED, then train.seed");

  PrepareArgs prep_a;
  auto* prepare = app.add_subcommand("prepare", "Build a dataset directory from lab rows and notes");
  prepare->add_option("--labs", prep_a.labs, "Lab CSV (PATIENT_ID,VISIT_ID,ITEMID,VALUE,VALUEUOM,ABNORMAL)")
      ->required();
  prepare->add_option("--notes", prep_a.notes, "JSONL of {patient_id, visit_id, sections, labels}")->required();
  prepare->add_option("--vocab", prep_a.vocab, "Lab vocabulary, one ITEMID[,UNIT] per line")->required();
  prepare->add_option("--out", prep_a.out, "Output dataset directory")->required();
  prepare->add_option("--min-support", prep_a.min_support, "Items observed fewer times are excluded from scaling");
  prepare->add_option("--val-fraction", prep_a.val_fraction, "Share of patients in the validation split");
  prepare->add_option("--embed-url", prep_a.embed_url, "Embedding service URL; no store is built when empty");
  prepare->add_option("--embed-dim", prep_a.embed_dim, "Expected embedding width with --embed-url");

  RenderArgs render_a;
  auto* render = app.add_subcommand("render-labtext", "Print the abnormal-lab sentence for one visit");
  render->add_option("--panel", render_a.panel, "Lab CSV holding a single visit")->required();
  render->add_option("--vocab", render_a.vocab, "Vocabulary fixing item order; file order when empty");

  PretrainArgs pre_a;
  auto* pretrain = app.add_subcommand("pretrain-mltm", "Pretrain the masked lab-test model");
  pretrain->add_option("--data", pre_a.data, "Dataset directory")->required();
  pretrain->add_option("--config", pre_a.config, "Run config file; built-in defaults when empty");
  pretrain->add_option("--out", pre_a.out, "Output checkpoint")->required();
  pre_a.seed_opt = pretrain->add_option("--seed", pre_a.seed, "Seed; falls back to MEDFUSE_SEED, then train.seed");

  TrainArgs train_a;
  auto* train_cmd = app.add_subcommand("train", "Train the fusion classifier");
  train_cmd->add_option("--data", train_a.data, "Dataset directory")->required();
  train_cmd->add_option("--mltm", train_a.mltm, "Lab model checkpoint; required when train.use_mltm is true");
  train_cmd->add_option("--config", train_a.config, "Run config file; built-in defaults when empty");
  train_cmd->add_option("--out", train_a.out, "Output checkpoint, rewritten after every epoch")->required();
  train_cmd->add_option("--resume", train_a.resume, "Continue from this checkpoint up to train.epochs");
  train_a.seed_opt = train_cmd->add_option("--seed", train_a.seed, "Overrides train.seed; falls back to MEDFUSE_SEED");

  EvaluateArgs eval_a;
  auto* evaluate = app.add_subcommand("evaluate", "Score a trained checkpoint on a dataset split");
  evaluate->add_option("--ckpt", eval_a.ckpt, "Fusion checkpoint")->required();
  evaluate->add_option("--data", eval_a.data, "Dataset directory")->required();
  evaluate->add_option("--report", eval_a.report, "Output metrics JSON")->required();
  evaluate->add_option("--split", eval_a.split, "val, train or all")->check(CLI::IsMember({"val", "train", "all"}));
  evaluate->add_option("--threshold", eval_a.threshold, "Decision threshold; the checkpoint's when negative");

  MiBenchArgs mi_a;
  auto* mi = app.add_subcommand("mi-bench", "vCLUB on correlated Gaussians against the closed-form MI");
  mi->add_option("--rho", mi_a.bench.rho, "Correlation per dimension")->required();
  mi->add_option("--dim", mi_a.bench.dim, "Dimension of x and y");
  mi_a.seed_opt = mi->add_option("--seed", mi_a.bench.seed, "Seed; falls back to MEDFUSE_SEED, then 0");
  mi->add_option("--steps", mi_a.bench.train_steps, "Estimator training steps");
  mi->add_option("--hidden", mi_a.bench.hidden, "Estimator hidden width");
  mi->add_option("--batch", mi_a.bench.train_batch, "Training batch size");
  mi->add_option("--lr", mi_a.bench.learning_rate, "Estimator learning rate");
  mi->add_option("--eval-batches", mi_a.bench.eval_batches, "Fresh batches averaged");
  mi->add_option("--eval-batch", mi_a.bench.eval_batch, "Samples per evaluation batch");

  GradcheckArgs gc_a;
  auto* gc = app.add_subcommand("gradcheck", "Central-difference gradient check");
  gc->add_option("--target", gc_a.target, "focal, vclub or forward")
      ->required()
      ->check(CLI::IsMember(gradcheck_targets()));
  gc->add_option("--seed", gc_a.seed, "Seed of the random inputs");

  std::vector<const char*> argv{"medfuse"};
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    error_line(err, "usage", 1, e.what());
    return 1;
  }

  try {
    if (synth->parsed()) {
      out << cmd_synth(synth_a).dump() << '\n';
    } else if (prepare->parsed()) {
      out << cmd_prepare(prep_a).dump() << '\n';
    } else if (render->parsed()) {
      out << cmd_render_labtext(render_a) << '\n';
    } else if (pretrain->parsed()) {
      out << cmd_pretrain(pre_a).dump() << '\n';
    } else if (train_cmd->parsed()) {
      out << cmd_train(train_a).dump() << '\n';
    } else if (evaluate->parsed()) {
      out << cmd_evaluate(eval_a).dump() << '\n';
    } else if (mi->parsed()) {
      out << cmd_mi_bench(mi_a).dump() << '\n';
    } else if (gc->parsed()) {
      bool passed = false;
      out << cmd_gradcheck(gc_a, passed).dump() << '\n';
      if (!passed) {
        error_line(err, "gradcheck", 2, "relative error above " + format_double(kGradcheckTolerance));
        return 2;
      }
    }
  } catch (const ConfigError& e) {
    error_line(err, "config", 1, e.what());
    return 1;
  } catch (const NumericError& e) {
    error_line(err, "numeric", 2, e.what());
    return 2;
  } catch (const IoError& e) {
    error_line(err, "io", 2, e.what());
    return 2;
  } catch (const FormatError& e) {
    error_line(err, "format", 2, e.what());
    return 2;
  } catch (const RetriableError& e) {
    error_line(err, "retriable", 2, e.what());
    return 2;
  } catch (const std::exception& e) {
    error_line(err, "runtime", 2, e.what());
    return 2;
  }
  return 0;
}

}  // namespace medfuse::cli
