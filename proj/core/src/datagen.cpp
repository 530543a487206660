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

#include "hmic/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <numbers>
#include <thread>

#include "hmic/error.hpp"
#include "hmic/random.hpp"
#include "hmic/wav_io.hpp"

namespace hmic {
namespace {

using json = nlohmann::ordered_json;

// Attribute name/value assignments in attribute order.
using Combo = std::vector<std::pair<std::string, std::string>>;

std::vector<Combo> combos_for(const SynthSection& section, Domain domain) {
  std::vector<Combo> out{Combo{}};
  for (const auto& attr : section.attributes) {
    const ToneTable& table =
        (domain == Domain::kTarget && !attr.target_values.empty()) ? attr.target_values
                                                                    : attr.source_values;
    std::vector<Combo> next;
    for (const auto& combo : out) {
      for (const auto& [value, _] : table) {
        Combo c = combo;
        c.emplace_back(attr.name, value);
        next.push_back(std::move(c));
      }
    }
    out = std::move(next);
  }
  return out;
}

std::string two_digits(int v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%02d", v);
  return buf;
}

std::string four_digits(int v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", v);
  return buf;
}

const SynthSection& find_section(const SynthSpec& spec, const std::string& machine, int id) {
  for (const auto& m : spec.machines) {
    if (m.name != machine) continue;
    for (const auto& s : m.sections) {
      if (s.id == id) return s;
    }
  }
  throw Error("synth spec has no section " + std::to_string(id) + " for machine '" + machine + "'");
}

const std::vector<double>& tones_for(const SynthSection& section, const std::string& name,
                                     const std::string& value) {
  for (const auto& attr : section.attributes) {
    if (attr.name != name) continue;
    if (const auto it = attr.source_values.find(value); it != attr.source_values.end()) return it->second;
    if (const auto it = attr.target_values.find(value); it != attr.target_values.end()) return it->second;
  }
  throw Error("synth spec has no tones for attribute " + name + "=" + value);
}

json tones_json(const ToneTable& t) {
  json j = json::object();
  for (const auto& [k, v] : t) j[k] = v;
  return j;
}

ToneTable tones_from(const json& j) {
  ToneTable t;
  for (const auto& [k, v] : j.items()) t[k] = v.get<std::vector<double>>();
  return t;
}

}  // namespace

void SynthSpec::validate() const {
  if (sample_rate_hz <= 0) throw ConfigError("synth sample_rate_hz must be positive");
  if (!(duration_s > 0.0)) throw ConfigError("synth duration_s must be positive");
  if (counts.train_source < 1 || counts.train_target < 1 || counts.test_normal < 1 ||
      counts.test_anomalous < 1) {
    throw ConfigError("synth clip counts must all be positive");
  }
  if (!(source_noise_rms >= 0.0) || !(target_noise_rms >= 0.0)) {
    throw ConfigError("synth noise levels must be non-negative");
  }
  if (machines.empty()) throw ConfigError("synth spec needs at least one machine type");
  const double nyquist = sample_rate_hz / 2.0;
  const double max_detune = std::pow(2.0, std::abs(anomaly.detune_cents) / 1200.0);
  auto check_tones = [&](const std::vector<double>& tones, double factor) {
    for (double f : tones) {
      if (!(f > 0.0) || f * factor * (1.0 + frequency_jitter) >= nyquist) {
        throw ConfigError("synth tone " + std::to_string(f) + " Hz is not below Nyquist");
      }
    }
  };
  for (const auto& m : machines) {
    if (m.name.empty() || m.name.find_first_of("/,_") != std::string::npos) {
      throw ConfigError("machine name '" + m.name + "' must be non-empty without '/', ',' or '_'");
    }
    if (m.sections.empty()) throw ConfigError("machine '" + m.name + "' has no sections");
    for (const auto& s : m.sections) {
      if (s.id < 0 || s.id > 99) throw ConfigError("section ids must lie in [0, 99]");
      check_tones(s.base_tones_hz, 1.0);
      int shifted = 0;
      for (const auto& a : s.attributes) {
        if (a.name.empty() || a.name.find_first_of("_=;,") != std::string::npos) {
          throw ConfigError("bad attribute name '" + a.name + "'");
        }
        if (a.source_values.empty()) throw ConfigError("attribute '" + a.name + "' has no values");
        for (const auto* table : {&a.source_values, &a.target_values}) {
          for (const auto& [value, tones] : *table) {
            if (value.empty() || value.find_first_of("_=;,") != std::string::npos) {
              throw ConfigError("bad attribute value '" + value + "'");
            }
            check_tones(tones, max_detune);
          }
        }
        if (!a.target_values.empty()) ++shifted;
      }
      if (shifted != 1) {
        throw ConfigError("section " + std::to_string(s.id) + " of '" + m.name +
                          "' needs exactly one attribute with target_values");
      }
    }
  }
}

SynthSpec default_synth_spec() {
  SynthSpec spec;
  const char* names[] = {"fan", "pump"};
  for (int k = 0; k < 2; ++k) {
    SynthMachine m;
    m.name = names[k];
    for (int s = 0; s < 3; ++s) {
      const double r = 1.0 + 0.06 * (3 * k + s);
      SynthSection sec;
      sec.id = s;
      sec.base_tones_hz = {140.0 * r, 280.0 * r, 420.0 * r};
      SynthAttribute spd;
      spd.name = "spd";
      spd.source_values = {{"A", {1200.0 * r, 2400.0 * r}}, {"B", {1500.0 * r, 3000.0 * r}}};
      spd.target_values = {{"C", {1850.0 * r, 3700.0 * r}}};
      SynthAttribute mic;
      mic.name = "mic";
      mic.source_values = {{"1", {520.0 * r}}, {"2", {650.0 * r}}};
      sec.attributes = {std::move(spd), std::move(mic)};
      m.sections.push_back(std::move(sec));
    }
    spec.machines.push_back(std::move(m));
  }
  return spec;
}

std::string synth_spec_to_json(const SynthSpec& spec) {
  json j;
  j["seed"] = spec.seed;
  j["sample_rate_hz"] = spec.sample_rate_hz;
  j["duration_s"] = spec.duration_s;
  j["tone_amplitude"] = spec.tone_amplitude;
  j["amplitude_jitter"] = spec.amplitude_jitter;
  j["frequency_jitter"] = spec.frequency_jitter;
  j["source_noise_rms"] = spec.source_noise_rms;
  j["target_noise_rms"] = spec.target_noise_rms;
  j["counts"] = {{"train_source", spec.counts.train_source},
                 {"train_target", spec.counts.train_target},
                 {"test_normal", spec.counts.test_normal},
                 {"test_anomalous", spec.counts.test_anomalous}};
  j["anomaly"] = {{"detune_cents", spec.anomaly.detune_cents},
                  {"transient_rate_hz", spec.anomaly.transient_rate_hz},
                  {"transient_amplitude", spec.anomaly.transient_amplitude},
                  {"transient_decay_ms", spec.anomaly.transient_decay_ms}};
  j["machines"] = json::array();
  for (const auto& m : spec.machines) {
    json jm;
    jm["name"] = m.name;
    jm["sections"] = json::array();
    for (const auto& s : m.sections) {
      json js;
      js["id"] = s.id;
      js["base_tones_hz"] = s.base_tones_hz;
      js["attributes"] = json::array();
      for (const auto& a : s.attributes) {
        json ja;
        ja["name"] = a.name;
        ja["source_values"] = tones_json(a.source_values);
        if (!a.target_values.empty()) ja["target_values"] = tones_json(a.target_values);
        js["attributes"].push_back(std::move(ja));
      }
      jm["sections"].push_back(std::move(js));
    }
    j["machines"].push_back(std::move(jm));
  }
  return j.dump(2) + "\n";
}

SynthSpec synth_spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("synth spec is not valid JSON: ") + e.what());
  }
  SynthSpec spec;
  try {
    spec.seed = j.value("seed", spec.seed);
    spec.sample_rate_hz = j.value("sample_rate_hz", spec.sample_rate_hz);
    spec.duration_s = j.value("duration_s", spec.duration_s);
    spec.tone_amplitude = j.value("tone_amplitude", spec.tone_amplitude);
    spec.amplitude_jitter = j.value("amplitude_jitter", spec.amplitude_jitter);
    spec.frequency_jitter = j.value("frequency_jitter", spec.frequency_jitter);
    spec.source_noise_rms = j.value("source_noise_rms", spec.source_noise_rms);
    spec.target_noise_rms = j.value("target_noise_rms", spec.target_noise_rms);
    if (j.contains("counts")) {
      const auto& c = j["counts"];
      spec.counts.train_source = c.value("train_source", spec.counts.train_source);
      spec.counts.train_target = c.value("train_target", spec.counts.train_target);
      spec.counts.test_normal = c.value("test_normal", spec.counts.test_normal);
      spec.counts.test_anomalous = c.value("test_anomalous", spec.counts.test_anomalous);
    }
    if (j.contains("anomaly")) {
      const auto& a = j["anomaly"];
      spec.anomaly.detune_cents = a.value("detune_cents", spec.anomaly.detune_cents);
      spec.anomaly.transient_rate_hz = a.value("transient_rate_hz", spec.anomaly.transient_rate_hz);
      spec.anomaly.transient_amplitude = a.value("transient_amplitude", spec.anomaly.transient_amplitude);
      spec.anomaly.transient_decay_ms = a.value("transient_decay_ms", spec.anomaly.transient_decay_ms);
    }
    if (j.contains("machines")) {
      for (const auto& jm : j["machines"]) {
        SynthMachine m;
        m.name = jm.at("name").get<std::string>();
        for (const auto& js : jm.at("sections")) {
          SynthSection s;
          s.id = js.at("id").get<int>();
          s.base_tones_hz = js.value("base_tones_hz", std::vector<double>{});
          for (const auto& ja : js.at("attributes")) {
            SynthAttribute a;
            a.name = ja.at("name").get<std::string>();
            a.source_values = tones_from(ja.at("source_values"));
            if (ja.contains("target_values")) a.target_values = tones_from(ja["target_values"]);
            s.attributes.push_back(std::move(a));
          }
          m.sections.push_back(std::move(s));
        }
        spec.machines.push_back(std::move(m));
      }
    } else {
      spec.machines = default_synth_spec().machines;
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad synth spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

SynthSpec read_synth_spec(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open synth spec " + file.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return synth_spec_from_json(text);
}

std::vector<ManifestEntry> plan_corpus(const SynthSpec& spec) {
  spec.validate();
  std::vector<ManifestEntry> out;
  for (const auto& m : spec.machines) {
    for (const auto& s : m.sections) {
      auto emit = [&](Domain domain, Split split, Condition condition, int count) {
        const auto combos = combos_for(s, domain);
        for (int i = 0; i < count; ++i) {
          const Combo& combo = combos[static_cast<std::size_t>(i) % combos.size()];
          std::string stem = "section_" + two_digits(s.id) + "_" + std::string(to_string(domain)) +
                             "_" + std::string(to_string(split)) + "_" +
                             (condition == Condition::kNormal ? "normal" : "anomaly") + "_" +
                             four_digits(i);
          ManifestEntry e;
          for (const auto& [name, value] : combo) {
            stem += "_" + name + "_" + value;
            e.meta.attributes.emplace(name, value);
          }
          e.meta.clip_id = m.name + "/" + stem;
          e.meta.machine_type = m.name;
          e.meta.section_id = s.id;
          e.meta.domain = domain;
          e.meta.split = split;
          e.meta.condition = condition;
          e.path = m.name + "/" + std::string(to_string(split)) + "/" + stem + ".wav";
          out.push_back(std::move(e));
        }
      };
      emit(Domain::kSource, Split::kTrain, Condition::kNormal, spec.counts.train_source);
      emit(Domain::kTarget, Split::kTrain, Condition::kNormal, spec.counts.train_target);
      for (Domain d : {Domain::kSource, Domain::kTarget}) {
        emit(d, Split::kTest, Condition::kNormal, spec.counts.test_normal);
        emit(d, Split::kTest, Condition::kAnomalous, spec.counts.test_anomalous);
      }
    }
  }
  return out;
}

Waveform synthesize_clip(const SynthSpec& spec, const ManifestEntry& entry) {
  const SynthSection& section = find_section(spec, entry.meta.machine_type, entry.meta.section_id);
  Rng rng(spec.seed ^ fnv1a64(entry.meta.clip_id));
  const bool anomalous = entry.meta.condition == Condition::kAnomalous;

  struct Tone {
    double freq;
    double amp;
    double phase;
  };
  std::vector<Tone> tones;
  auto add_tone = [&](double f, bool detune) {
    double freq = f * (1.0 + spec.frequency_jitter * rng.uniform(-1.0, 1.0));
    if (detune) {
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      freq *= std::pow(2.0, sign * spec.anomaly.detune_cents / 1200.0);
    }
    const double amp = spec.tone_amplitude * (1.0 + spec.amplitude_jitter * rng.uniform(-1.0, 1.0));
    tones.push_back({freq, amp, rng.uniform(0.0, 2.0 * std::numbers::pi)});
  };
  for (double f : section.base_tones_hz) add_tone(f, false);
  for (const auto& [name, value] : entry.meta.attributes) {
    for (double f : tones_for(section, name, value)) add_tone(f, anomalous);
  }

  Waveform wave;
  wave.sample_rate_hz = spec.sample_rate_hz;
  const auto n = static_cast<std::size_t>(std::llround(spec.duration_s * spec.sample_rate_hz));
  wave.samples.assign(n, 0.0);
  const double two_pi_over_sr = 2.0 * std::numbers::pi / spec.sample_rate_hz;
  for (const auto& t : tones) {
    const double w = t.freq * two_pi_over_sr;
    for (std::size_t i = 0; i < n; ++i) {
      wave.samples[i] += t.amp * std::sin(w * static_cast<double>(i) + t.phase);
    }
  }

  const double noise_rms =
      entry.meta.domain == Domain::kTarget ? spec.target_noise_rms : spec.source_noise_rms;
  for (double& s : wave.samples) s += noise_rms * rng.normal();

  if (anomalous && spec.anomaly.transient_rate_hz > 0.0) {
    const double decay = spec.anomaly.transient_decay_ms * 1e-3 * spec.sample_rate_hz;
    const auto burst_len = static_cast<std::size_t>(5.0 * decay);
    double t = 0.0;
    while (true) {
      double u;
      do {
        u = rng.uniform();
      } while (u <= 0.0);
      t += -std::log(u) / spec.anomaly.transient_rate_hz;
      const auto start = static_cast<std::size_t>(t * spec.sample_rate_hz);
      if (start >= n) break;
      for (std::size_t k = 0; k < burst_len && start + k < n; ++k) {
        wave.samples[start + k] += spec.anomaly.transient_amplitude *
                                   std::exp(-static_cast<double>(k) / decay) * rng.normal();
      }
    }
  }
  return wave;
}

GeneratedCorpus generate(const SynthSpec& spec, const std::filesystem::path& out_dir, int jobs) {
  GeneratedCorpus corpus;
  corpus.entries = plan_corpus(spec);
  for (const auto& e : corpus.entries) {
    std::filesystem::create_directories((out_dir / e.path).parent_path());
  }
  const auto render = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& e = corpus.entries[i];
      write_wav(out_dir / e.path, synthesize_clip(spec, e));
    }
  };
  const std::size_t total = corpus.entries.size();
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1, total);
  if (workers == 1) {
    render(0, total);
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (total + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(total, begin + chunk);
      if (begin < end) pool.emplace_back(render, begin, end);
    }
  }
  corpus.manifest = out_dir / "manifest.csv";
  write_manifest(corpus.manifest, corpus.entries);
  return corpus;
}

}  // namespace hmic
