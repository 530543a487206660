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

#pragma once

// Seeded synthetic corpus with attribute-driven acoustics and a controllable
// domain shift.
//
// A clip is a sum of sinusoids (the section's base tones plus one tone set
// per attribute value) over white noise. The target domain swaps the values
// of one attribute for a disjoint set and raises the noise floor. Anomalous
// test clips detune the attribute tones and add decaying noise bursts.
// Every clip is seeded from (spec seed, clip id), so output does not depend
// on generation order or parallelism.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hmic/dsp_frontend.hpp"
#include "hmic/manifest.hpp"

namespace hmic {

// Attribute value -> tone frequencies (Hz).
using ToneTable = std::map<std::string, std::vector<double>>;

struct SynthAttribute {
  std::string name;
  ToneTable source_values;
  ToneTable target_values;  // empty unless this is the shifted attribute
};

struct SynthSection {
  int id = 0;
  std::vector<double> base_tones_hz;
  std::vector<SynthAttribute> attributes;  // exactly one carries target_values
};

struct SynthMachine {
  std::string name;
  std::vector<SynthSection> sections;
};

struct SynthCounts {
  int train_source = 32;   // per section
  int train_target = 4;    // per section
  int test_normal = 10;    // per section and domain
  int test_anomalous = 10; // per section and domain
};

struct SynthAnomaly {
  double detune_cents = 100.0;
  double transient_rate_hz = 1.0;
  double transient_amplitude = 0.05;
  double transient_decay_ms = 8.0;
};

struct SynthSpec {
  std::uint64_t seed = 20221;
  int sample_rate_hz = 16000;
  double duration_s = 10.0;
  double tone_amplitude = 0.08;
  double amplitude_jitter = 0.1;     // relative, uniform
  double frequency_jitter = 0.002;   // relative, uniform
  double source_noise_rms = 0.005;
  double target_noise_rms = 0.012;
  SynthCounts counts;
  SynthAnomaly anomaly;
  std::vector<SynthMachine> machines;

  // Throws ConfigError on non-positive counts, tones at or above Nyquist, or
  // sections without exactly one shifted attribute.
  void validate() const;
};

// Two machine types, three sections each, attributes spd (shifted) and mic.
SynthSpec default_synth_spec();

SynthSpec synth_spec_from_json(const std::string& text);
std::string synth_spec_to_json(const SynthSpec& spec);
SynthSpec read_synth_spec(const std::filesystem::path& file);

// Metadata of every clip the spec describes, in generation order. Paths are
// "<machine>/<split>/<dcase file name>" and clip ids "<machine>/<stem>".
std::vector<ManifestEntry> plan_corpus(const SynthSpec& spec);

// Renders one planned clip.
Waveform synthesize_clip(const SynthSpec& spec, const ManifestEntry& entry);

struct GeneratedCorpus {
  std::filesystem::path manifest;
  std::vector<ManifestEntry> entries;
};

// Writes WAV files and manifest.csv under `out_dir`. `jobs` > 1 renders
// clips concurrently; output is identical either way.
GeneratedCorpus generate(const SynthSpec& spec, const std::filesystem::path& out_dir, int jobs = 1);

}  // namespace hmic
