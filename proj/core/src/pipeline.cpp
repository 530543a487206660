/*
 * Copyright (c) 2026 The hmic Authors. All rights reserved.
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "hmic/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <mutex>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "hmic/error.hpp"
#include "hmic/random.hpp"
#include "hmic/wav_io.hpp"

namespace hmic {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                std::string_view where) {
  if (!obj.is_object()) throw ConfigError(std::string(where) + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown config key '" + std::string(where) + "." + key + "'");
    }
  }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

fs::path resolve(const fs::path& base, const std::string& text) {
  if (text.empty()) return {};
  fs::path p(text);
  if (p.is_relative() && !base.empty()) p = base / p;
  return p.lexically_normal();
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Each index is handled by
// exactly one worker, so results written per index do not depend on `jobs`.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            return;
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

std::string read_text(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json model_settings_json(const ModelSettings& m) {
  json j;
  j["backbone_channels"] = m.backbone_channels;
  j["head_channels"] = m.head_channels;
  j["lambda"] = m.lambda;
  j["lambda_per_machine"] = json::object();
  for (const auto& [k, v] : m.lambda_per_machine) j["lambda_per_machine"][k] = v;
  j["ablation"] = std::string(to_string(m.ablation));
  j["pooling"] = std::string(to_string(m.pooling));
  j["init"] = m.init;
  return j;
}

json train_json(const TrainConfig& t) { return json::parse(t.canonical_json()); }

json scoring_json(const RunConfig& c) {
  json j;
  j["mode"] = std::string(to_string(c.scoring));
  j["covariance"] = std::string(to_string(c.covariance));
  j["shrinkage_relative"] = c.shrinkage.relative;
  j["shrinkage_floor"] = c.shrinkage.floor;
  if (c.shrinkage.absolute) {
    j["shrinkage_absolute"] = *c.shrinkage.absolute;
  } else {
    j["shrinkage_absolute"] = nullptr;
  }
  return j;
}

// Settings that determine a checkpoint's bytes. Paths and jobs are excluded.
json train_identity(const RunConfig& c) {
  json j;
  j["dsp"] = json::parse(c.dsp.canonical_json());
  j["model"] = model_settings_json(c.model);
  j["train"] = train_json(c.train);
  json s = scoring_json(c);
  s.erase("mode");
  j["centres"] = std::move(s);
  return j;
}

std::string feature_cache_key(const DspConfig& dsp, const fs::path& wav) {
  return hex_digest(dsp.canonical_json() + "|" + file_digest(wav));
}

std::vector<std::uint64_t> shape_u64(const std::vector<int>& shape) {
  return {shape.begin(), shape.end()};
}

void put_centres(std::vector<NamedTensor>& out, const std::string& prefix, const CentreModel& model) {
  for (const auto& [section, groups] : model.sections()) {
    for (const auto& g : groups) {
      const std::string base = prefix + "/" + std::to_string(section) + "/" + std::to_string(g.label);
      const auto d = static_cast<std::uint64_t>(g.centre.size());
      NamedTensor centre{base + "/centre", {d}, {g.centre.data(), g.centre.data() + g.centre.size()}};
      NamedTensor cov{base + "/covariance", {d, d}, {}};
      cov.data.reserve(d * d);
      for (Eigen::Index r = 0; r < g.covariance.rows(); ++r) {
        for (Eigen::Index c = 0; c < g.covariance.cols(); ++c) cov.data.push_back(g.covariance(r, c));
      }
      NamedTensor info{base + "/info", {2}, {static_cast<double>(g.n_clips), g.epsilon}};
      out.push_back(std::move(centre));
      out.push_back(std::move(cov));
      out.push_back(std::move(info));
    }
  }
}

CentreModel get_centres(const Checkpoint& ckpt, const std::string& prefix) {
  struct Parts {
    const NamedTensor* centre = nullptr;
    const NamedTensor* cov = nullptr;
    const NamedTensor* info = nullptr;
  };
  std::map<std::pair<int, int>, Parts> found;
  const std::string head = prefix + "/";
  for (const auto& t : ckpt.tensors) {
    if (!t.name.starts_with(head)) continue;
    std::istringstream parts(t.name.substr(head.size()));
    std::string section_text;
    std::string label_text;
    std::string field;
    if (!std::getline(parts, section_text, '/') || !std::getline(parts, label_text, '/') ||
        !std::getline(parts, field)) {
      throw IoError("malformed checkpoint tensor name '" + t.name + "'");
    }
    Parts& p = found[{std::stoi(section_text), std::stoi(label_text)}];
    if (field == "centre") {
      p.centre = &t;
    } else if (field == "covariance") {
      p.cov = &t;
    } else if (field == "info") {
      p.info = &t;
    } else {
      throw IoError("unknown checkpoint tensor '" + t.name + "'");
    }
  }
  CentreModel model;
  for (const auto& [key, p] : found) {
    if (!p.centre || !p.cov || !p.info) {
      throw IoError("incomplete centre " + prefix + "/" + std::to_string(key.first) + "/" +
                    std::to_string(key.second) + " in checkpoint");
    }
    const auto d = static_cast<Eigen::Index>(p.centre->data.size());
    if (p.cov->data.size() != static_cast<std::size_t>(d * d) || p.info->data.size() != 2) {
      throw ShapeError("centre tensors of " + prefix + " have inconsistent sizes");
    }
    CentreGroup g;
    g.label = key.second;
    g.n_clips = static_cast<int>(p.info->data[0]);
    g.epsilon = p.info->data[1];
    g.centre = Eigen::Map<const Eigen::VectorXd>(p.centre->data.data(), d);
    g.covariance.resize(d, d);
    for (Eigen::Index r = 0; r < d; ++r) {
      for (Eigen::Index c = 0; c < d; ++c) g.covariance(r, c) = p.cov->data[static_cast<std::size_t>(r * d + c)];
    }
    model.add_group(key.first, std::move(g));
  }
  return model;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.n_mels = j.at("n_mels").get<int>();
  c.n_frames = j.at("n_frames").get<int>();
  c.backbone_channels = j.at("backbone_channels").get<std::vector<int>>();
  c.head_channels = j.at("head_channels").get<int>();
  c.n_sections = j.at("n_sections").get<int>();
  c.n_groups = j.at("n_groups").get<int>();
  c.lambda = j.at("lambda").get<double>();
  c.ablation = parse_ablation(j.at("ablation").get<std::string>());
  c.pooling = parse_pooling(j.at("pooling").get<std::string>());
  c.validate();
  return c;
}

fs::path scores_meta_path(const fs::path& scores) {
  return fs::path(scores.string() + ".meta.json");
}

}  // namespace

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

fs::path RunPaths::manifest_file() const {
  return manifest.empty() ? corpus / "manifest.csv" : manifest;
}

double ModelSettings::lambda_for(const std::string& machine_type) const {
  const auto it = lambda_per_machine.find(machine_type);
  return it == lambda_per_machine.end() ? lambda : it->second;
}

void RunConfig::validate() const {
  dsp.validate();
  train.validate();
  if (model.init != "random") {
    throw ConfigError("model.init must be \"random\"; pretrained initialisation is not supported");
  }
  if (model.backbone_channels.empty()) throw ConfigError("model.backbone_channels must not be empty");
  for (int c : model.backbone_channels) {
    if (c < 1) throw ConfigError("model.backbone_channels entries must be positive");
  }
  if (model.head_channels < 1) throw ConfigError("model.head_channels must be positive");
  if (!(model.lambda >= 0.0 && model.lambda <= 1.0)) throw ConfigError("model.lambda must lie in [0, 1]");
  for (const auto& [machine, value] : model.lambda_per_machine) {
    if (!(value >= 0.0 && value <= 1.0)) {
      throw ConfigError("model.lambda_per_machine." + machine + " must lie in [0, 1]");
    }
  }
  if (!(shrinkage.relative >= 0.0) || !(shrinkage.floor >= 0.0)) {
    throw ConfigError("shrinkage terms must be non-negative");
  }
  if (shrinkage.absolute && !(*shrinkage.absolute > 0.0)) {
    throw ConfigError("scoring.shrinkage_absolute must be positive");
  }
  if (!shrinkage.absolute && !(shrinkage.floor > 0.0)) {
    throw ConfigError("scoring.shrinkage_floor must be positive");
  }
  if (!(pauc_p > 0.0 && pauc_p <= 1.0)) throw ConfigError("eval.pauc_p must lie in (0, 1]");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (paths.corpus.empty() && paths.manifest.empty()) {
    throw ConfigError("paths.corpus or paths.manifest must be set");
  }
  if (paths.checkpoint_dir.empty()) throw ConfigError("paths.checkpoint_dir must be set");
  if (paths.scores.empty()) throw ConfigError("paths.scores must be set");
  if (paths.report_dir.empty()) throw ConfigError("paths.report_dir must be set");
}

std::string RunConfig::train_digest() const { return hex_digest("train|" + train_identity(*this).dump()); }

std::string RunConfig::score_digest() const {
  return hex_digest("score|" + train_digest() + "|" + std::string(to_string(scoring)));
}

std::string RunConfig::report_digest() const {
  std::ostringstream p;
  p.precision(17);
  p << pauc_p;
  return hex_digest("report|" + score_digest() + "|" + p.str());
}

std::string RunConfig::to_json() const {
  json j;
  j["paths"] = {{"synth_spec", paths.synth_spec.string()},
                {"corpus", paths.corpus.string()},
                {"manifest", paths.manifest.string()},
                {"cache", paths.cache.string()},
                {"checkpoint_dir", paths.checkpoint_dir.string()},
                {"scores", paths.scores.string()},
                {"report_dir", paths.report_dir.string()}};
  j["dsp"] = json::parse(dsp.canonical_json());
  j["model"] = model_settings_json(model);
  j["train"] = train_json(train);
  j["scoring"] = scoring_json(*this);
  j["eval"] = {{"pauc_p", pauc_p}};
  j["jobs"] = jobs;
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  c.paths.corpus = "corpus";
  c.paths.checkpoint_dir = "checkpoints";
  c.paths.scores = "scores.csv";
  c.paths.report_dir = "report";
  try {
    check_keys(j, {"paths", "dsp", "model", "train", "scoring", "eval", "jobs"}, "config");
    if (j.contains("paths")) {
      const auto& p = j["paths"];
      check_keys(p, {"synth_spec", "corpus", "manifest", "cache", "checkpoint_dir", "scores", "report_dir"},
                 "paths");
      auto path_field = [&](const char* key, fs::path& out) {
        if (p.contains(key)) out = p[key].get<std::string>();
      };
      path_field("synth_spec", c.paths.synth_spec);
      path_field("corpus", c.paths.corpus);
      path_field("manifest", c.paths.manifest);
      path_field("cache", c.paths.cache);
      path_field("checkpoint_dir", c.paths.checkpoint_dir);
      path_field("scores", c.paths.scores);
      path_field("report_dir", c.paths.report_dir);
    }
    if (j.contains("dsp")) {
      const auto& d = j["dsp"];
      check_keys(d, {"sample_rate_hz", "frame_size", "hop", "n_mels", "f_min_hz", "f_max_hz", "floor_epsilon"},
                 "dsp");
      read_field(d, "sample_rate_hz", c.dsp.sample_rate_hz);
      read_field(d, "frame_size", c.dsp.frame_size);
      read_field(d, "hop", c.dsp.hop);
      read_field(d, "n_mels", c.dsp.n_mels);
      read_field(d, "f_min_hz", c.dsp.f_min_hz);
      read_field(d, "f_max_hz", c.dsp.f_max_hz);
      read_field(d, "floor_epsilon", c.dsp.floor_epsilon);
    }
    if (j.contains("model")) {
      const auto& m = j["model"];
      check_keys(m, {"backbone_channels", "head_channels", "lambda", "lambda_per_machine", "ablation",
                     "pooling", "init"},
                 "model");
      read_field(m, "backbone_channels", c.model.backbone_channels);
      read_field(m, "head_channels", c.model.head_channels);
      read_field(m, "lambda", c.model.lambda);
      if (m.contains("lambda_per_machine")) {
        for (const auto& [k, v] : m["lambda_per_machine"].items()) c.model.lambda_per_machine[k] = v.get<double>();
      }
      if (m.contains("ablation")) c.model.ablation = parse_ablation(m["ablation"].get<std::string>());
      if (m.contains("pooling")) c.model.pooling = parse_pooling(m["pooling"].get<std::string>());
      read_field(m, "init", c.model.init);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      check_keys(t, {"epochs", "batch_size", "lr", "lr_min", "beta1", "beta2", "adam_epsilon", "seed"}, "train");
      read_field(t, "epochs", c.train.epochs);
      read_field(t, "batch_size", c.train.batch_size);
      read_field(t, "lr", c.train.lr);
      read_field(t, "lr_min", c.train.lr_min);
      read_field(t, "beta1", c.train.beta1);
      read_field(t, "beta2", c.train.beta2);
      read_field(t, "adam_epsilon", c.train.adam_epsilon);
      read_field(t, "seed", c.train.seed);
    }
    if (j.contains("scoring")) {
      const auto& s = j["scoring"];
      check_keys(s, {"mode", "covariance", "shrinkage_relative", "shrinkage_floor", "shrinkage_absolute"},
                 "scoring");
      if (s.contains("mode")) c.scoring = parse_scoring_mode(s["mode"].get<std::string>());
      if (s.contains("covariance")) c.covariance = parse_covariance_mode(s["covariance"].get<std::string>());
      read_field(s, "shrinkage_relative", c.shrinkage.relative);
      read_field(s, "shrinkage_floor", c.shrinkage.floor);
      if (s.contains("shrinkage_absolute") && !s["shrinkage_absolute"].is_null()) {
        c.shrinkage.absolute = s["shrinkage_absolute"].get<double>();
      }
    }
    if (j.contains("eval")) {
      check_keys(j["eval"], {"pauc_p"}, "eval");
      read_field(j["eval"], "pauc_p", c.pauc_p);
    }
    read_field(j, "jobs", c.jobs);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
  for (fs::path* p : {&c.paths.synth_spec, &c.paths.corpus, &c.paths.manifest, &c.paths.cache,
                      &c.paths.checkpoint_dir, &c.paths.scores, &c.paths.report_dir}) {
    *p = resolve(base_dir, p->string());
  }
  c.train.jobs = c.jobs;
  c.validate();
  return c;
}

RunConfig read_run_config(const fs::path& file) {
  if (!fs::exists(file)) throw ConfigError("config file not found: " + file.string());
  return run_config_from_json(read_text(file), file.parent_path());
}

void apply_overrides(RunConfig& config, const Overrides& o) {
  if (o.seed) config.train.seed = *o.seed;
  if (o.jobs) config.jobs = *o.jobs;
  if (o.scoring) config.scoring = *o.scoring;
  if (o.ablation) config.model.ablation = *o.ablation;
  if (o.pauc_p) config.pauc_p = *o.pauc_p;
  config.train.jobs = config.jobs;
  config.validate();
}

fs::path effective_cache_dir(const RunConfig& config) {
  if (const char* env = std::getenv("HMIC_CACHE_DIR"); env != nullptr && *env != '\0') return env;
  return config.paths.cache;
}

RowMatrix load_features(const LogMelExtractor& extractor, const fs::path& wav, const fs::path& cache_dir) {
  fs::path cached;
  if (!cache_dir.empty()) {
    cached = cache_dir / (feature_cache_key(extractor.config(), wav) + ".hmlm");
    if (fs::exists(cached)) return read_feature_file(cached).values;
  }
  RowMatrix values = standardize(extractor.extract(read_wav(wav)).values);
  quantize_to_float(values);
  if (!cached.empty()) {
    fs::create_directories(cache_dir);
    std::ostringstream tid;
    tid << std::this_thread::get_id();
    const fs::path tmp = cached.string() + ".tmp" + tid.str();
    write_feature_file(tmp, LogMelSpectrogram{values});
    fs::rename(tmp, cached);
  }
  return values;
}

fs::path checkpoint_path(const RunConfig& config, const std::string& machine_type) {
  return config.paths.checkpoint_dir / (machine_type + ".ckpt");
}

Checkpoint make_checkpoint(const RunConfig& config, const MachineModel& m) {
  json j;
  j["machine_type"] = m.machine_type;
  j["identity"] = train_identity(config);
  j["model"] = json::parse(m.params.config().canonical_json());
  j["label_space"] = json::array();
  for (const auto& key : m.space.groups()) {
    json g;
    g["section"] = key.section_id;
    g["attributes"] = json::array();
    for (const auto& [name, value] : key.attribute_pairs) g["attributes"].push_back({name, value});
    j["label_space"].push_back(std::move(g));
  }
  Checkpoint ckpt;
  ckpt.config_digest = config.train_digest();
  ckpt.config_json = j.dump(2);
  for (std::size_t i = 0; i < m.params.names().size(); ++i) {
    const Tensor& t = m.params.tensors()[i];
    ckpt.tensors.push_back({"model/" + m.params.names()[i], shape_u64(t.shape), t.data});
  }
  put_centres(ckpt.tensors, "agc", m.agc);
  put_centres(ckpt.tensors, "dc", m.dc);
  return ckpt;
}

MachineModel machine_model_from_checkpoint(const Checkpoint& ckpt) {
  MachineModel m;
  try {
    const json j = json::parse(ckpt.config_json);
    m.machine_type = j.at("machine_type").get<std::string>();
    const ModelConfig mc = model_config_from_json(j.at("model"));
    std::vector<AttributeGroupKey> keys;
    for (const auto& g : j.at("label_space")) {
      AttributeGroupKey key;
      key.section_id = g.at("section").get<int>();
      for (const auto& pair : g.at("attributes")) {
        key.attribute_pairs.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<std::string>());
      }
      keys.push_back(std::move(key));
    }
    m.space = LabelSpace::from_parts(m.machine_type, std::move(keys));
    std::vector<std::string> names;
    std::vector<Tensor> tensors;
    for (const auto& t : ckpt.tensors) {
      if (!t.name.starts_with("model/")) continue;
      names.push_back(t.name.substr(6));
      tensors.push_back(Tensor{{t.shape.begin(), t.shape.end()}, t.data});
    }
    m.params = ModelParams::from_tensors(mc, std::move(names), std::move(tensors));
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint metadata is malformed: ") + e.what());
  }
  m.agc = get_centres(ckpt, "agc");
  m.dc = get_centres(ckpt, "dc");
  return m;
}

GeneratedCorpus cmd_generate(const RunConfig& config) {
  config.validate();
  if (config.paths.corpus.empty()) throw ConfigError("paths.corpus must be set to generate a corpus");
  const SynthSpec spec =
      config.paths.synth_spec.empty() ? default_synth_spec() : read_synth_spec(config.paths.synth_spec);
  return generate(spec, config.paths.corpus, config.jobs);
}

std::vector<TrainSummary> cmd_train(const RunConfig& config) {
  config.validate();
  const fs::path manifest_file = config.paths.manifest_file();
  if (!fs::exists(manifest_file)) throw ConfigError("manifest not found: " + manifest_file.string());
  const auto entries = read_manifest(manifest_file);

  std::map<std::string, std::vector<const ManifestEntry*>> by_machine;
  for (const auto& e : entries) {
    if (e.meta.split == Split::kTrain) by_machine[e.meta.machine_type].push_back(&e);
  }
  if (by_machine.empty()) throw ConfigError("manifest " + manifest_file.string() + " has no training clips");

  fs::create_directories(config.paths.checkpoint_dir);
  const LogMelExtractor extractor(config.dsp);
  const fs::path cache = effective_cache_dir(config);

  std::vector<TrainSummary> summaries;
  for (const auto& [machine, members] : by_machine) {
    std::vector<ClipMeta> metas;
    metas.reserve(members.size());
    for (const auto* e : members) metas.push_back(e->meta);
    MachineModel mm;
    mm.machine_type = machine;
    mm.space = build_label_space(metas, machine);

    std::vector<TrainingExample> examples(members.size());
    parallel_for(members.size(), config.jobs, [&](std::size_t i) {
      examples[i].input = load_features(extractor, resolve_clip_path(manifest_file, *members[i]), cache);
      examples[i].labels = assign_labels(members[i]->meta, mm.space);
    });
    for (const auto& ex : examples) {
      if (ex.input.rows() != examples.front().input.rows() || ex.input.cols() != examples.front().input.cols()) {
        throw ShapeError("training clips of '" + machine + "' differ in length");
      }
    }

    ModelConfig mc;
    mc.n_mels = static_cast<int>(examples.front().input.rows());
    mc.n_frames = static_cast<int>(examples.front().input.cols());
    mc.backbone_channels = config.model.backbone_channels;
    mc.head_channels = config.model.head_channels;
    mc.n_sections = mm.space.num_sections();
    mc.n_groups = mm.space.num_groups();
    mc.lambda = config.model.lambda_for(machine);
    mc.ablation = config.model.ablation;
    mc.pooling = config.model.pooling;

    TrainConfig tc = config.train;
    tc.jobs = config.jobs;
    TrainResult result = train(examples, mm.space, mc, tc);
    mm.params = std::move(result.params);

    std::vector<Eigen::VectorXd> high(examples.size());
    parallel_for(examples.size(), config.jobs,
                 [&](std::size_t i) { high[i] = forward_features(examples[i].input, mm.params).high; });
    std::vector<AgcSample> agc;
    std::vector<DcSample> dc;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      const ClipMeta& meta = members[i]->meta;
      agc.push_back({high[i], examples[i].labels.ag_label, meta.section_id});
      dc.push_back({high[i], meta.domain, meta.section_id});
    }
    mm.agc = fit_agc(agc, config.shrinkage, config.covariance);
    mm.dc = fit_dc(dc, config.shrinkage, config.covariance);

    const fs::path ckpt_file = checkpoint_path(config, machine);
    write_checkpoint(ckpt_file, make_checkpoint(config, mm));
    write_training_log(config.paths.checkpoint_dir / (machine + ".train.csv"), result.log);

    TrainSummary s;
    s.machine_type = machine;
    s.checkpoint = ckpt_file;
    s.n_clips = static_cast<int>(examples.size());
    s.n_sections = mm.space.num_sections();
    s.n_groups = mm.space.num_groups();
    s.final_loss = result.log.empty() ? 0.0 : result.log.back().loss_total;
    summaries.push_back(std::move(s));
  }
  return summaries;
}

ScoreOutcome score_entries(const RunConfig& config, const fs::path& manifest_file,
                           const std::vector<ManifestEntry>& entries) {
  config.validate();
  const std::string expected = config.train_digest();
  std::map<std::string, std::optional<MachineModel>> models;
  for (const auto& e : entries) {
    if (models.contains(e.meta.machine_type)) continue;
    const fs::path file = checkpoint_path(config, e.meta.machine_type);
    if (!fs::exists(file)) {
      models[e.meta.machine_type] = std::nullopt;
      continue;
    }
    const Checkpoint ckpt = read_checkpoint(file);
    if (ckpt.config_digest != expected) {
      throw ConfigError("checkpoint " + file.string() + " was written with config digest " +
                        ckpt.config_digest + " but the current config has digest " + expected +
                        "; retrain or use the matching config");
    }
    models[e.meta.machine_type] = machine_model_from_checkpoint(ckpt);
  }

  const LogMelExtractor extractor(config.dsp);
  const fs::path cache = effective_cache_dir(config);
  ScoreOutcome out;
  out.records.resize(entries.size());
  std::vector<std::string> failures(entries.size());
  parallel_for(entries.size(), config.jobs, [&](std::size_t i) {
    const ManifestEntry& e = entries[i];
    ScoreRecord& rec = out.records[i];
    rec.clip_id = e.meta.clip_id;
    rec.section = e.meta.section_id;
    rec.score = std::numeric_limits<double>::quiet_NaN();
    rec.argmin_group = -1;
    const auto& model = models.at(e.meta.machine_type);
    if (!model) {
      failures[i] = "no checkpoint for machine type '" + e.meta.machine_type + "'";
      return;
    }
    const CentreModel& centres = config.scoring == ScoringMode::kAgc ? model->agc : model->dc;
    if (!centres.has_section(e.meta.section_id)) {
      failures[i] = "section " + std::to_string(e.meta.section_id) + " is unknown to the '" +
                    e.meta.machine_type + "' model";
      return;
    }
    try {
      const RowMatrix input = load_features(extractor, resolve_clip_path(manifest_file, e), cache);
      const Eigen::VectorXd f = forward_features(input, model->params).high;
      rec = score_centres(f, centres, e.meta.section_id, e.meta.clip_id);
    } catch (const Error& err) {
      failures[i] = err.what();
    }
  });
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (failures[i].empty()) continue;
    ++out.n_errors;
    out.errors.push_back(entries[i].meta.clip_id + ": " + failures[i]);
  }
  return out;
}

ScoreOutcome cmd_score(const RunConfig& config) {
  config.validate();
  const fs::path manifest_file = config.paths.manifest_file();
  if (!fs::exists(manifest_file)) throw ConfigError("manifest not found: " + manifest_file.string());
  std::vector<ManifestEntry> test;
  for (auto& e : read_manifest(manifest_file)) {
    if (e.meta.split == Split::kTest) test.push_back(std::move(e));
  }
  if (test.empty()) throw ConfigError("manifest " + manifest_file.string() + " has no test clips");
  ScoreOutcome out = score_entries(config, manifest_file, test);
  if (config.paths.scores.has_parent_path()) fs::create_directories(config.paths.scores.parent_path());
  write_scores(config.paths.scores, out.records);
  json meta;
  meta["config_digest"] = config.score_digest();
  meta["scoring"] = std::string(to_string(config.scoring));
  meta["n_errors"] = out.n_errors;
  std::ofstream side(scores_meta_path(config.paths.scores), std::ios::binary | std::ios::trunc);
  side << meta.dump(2) << "\n";
  if (!side) throw IoError("cannot write " + scores_meta_path(config.paths.scores).string());
  return out;
}

EvalReport cmd_eval(const RunConfig& config) {
  config.validate();
  const fs::path meta_file = scores_meta_path(config.paths.scores);
  if (!fs::exists(meta_file)) {
    throw IoError("scores digest file " + meta_file.string() + " is missing; rerun score");
  }
  std::string digest;
  try {
    digest = json::parse(read_text(meta_file)).at("config_digest").get<std::string>();
  } catch (const json::exception& e) {
    throw IoError("malformed " + meta_file.string() + ": " + e.what());
  }
  if (digest != config.score_digest()) {
    throw ConfigError("scores " + config.paths.scores.string() + " carry config digest " + digest +
                      " but the current config has digest " + config.score_digest());
  }
  const fs::path manifest_file = config.paths.manifest_file();
  if (!fs::exists(manifest_file)) throw ConfigError("manifest not found: " + manifest_file.string());
  std::map<std::string, ClipMeta> by_id;
  for (auto& e : read_manifest(manifest_file)) by_id.emplace(e.meta.clip_id, std::move(e.meta));

  std::vector<ScoredClip> clips;
  for (const auto& r : read_scores(config.paths.scores)) {
    const auto it = by_id.find(r.clip_id);
    if (it == by_id.end()) throw MetricError("scored clip '" + r.clip_id + "' is not in the manifest");
    const ClipMeta& m = it->second;
    if (!std::isfinite(r.score)) throw MetricError("clip '" + r.clip_id + "' has no score");
    if (m.condition == Condition::kUnknown || m.domain == Domain::kUnknown) {
      throw MetricError("clip '" + r.clip_id + "' has no ground-truth condition or domain");
    }
    clips.push_back({r.clip_id, m.machine_type, m.section_id, m.domain, m.condition == Condition::kAnomalous,
                     r.score});
  }
  EvalReport report = evaluate(clips, config.pauc_p);
  report.config_digest = config.report_digest();
  fs::create_directories(config.paths.report_dir);
  write_report_json(config.paths.report_dir / "report.json", report);
  write_report_csv(config.paths.report_dir / "report.csv", report);
  return report;
}

GroupCount count_attribute_groups(const fs::path& listing, const std::string& machine_type) {
  std::ifstream in(listing);
  if (!in) throw IoError("cannot open listing " + listing.string());
  std::vector<ClipMeta> train;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string field = line.substr(0, line.find(','));
    const auto slash = field.find_last_of("/\\");
    if (slash != std::string::npos) field = field.substr(slash + 1);
    if (!field.ends_with(".wav")) continue;
    try {
      ClipMeta meta = parse_dcase_filename(field, machine_type);
      if (meta.split == Split::kTrain) train.push_back(std::move(meta));
    } catch (const ParseError& e) {
      throw ParseError(listing.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (train.empty()) throw ParseError("listing " + listing.string() + " has no training files");
  const LabelSpace space = build_label_space(train, machine_type);
  GroupCount out;
  out.machine_type = machine_type;
  for (int s : space.sections()) {
    out.per_section[s] = static_cast<int>(space.groups_in_section(s).size());
  }
  out.total = space.num_groups();
  return out;
}

}  // namespace hmic
