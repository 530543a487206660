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

#include <gtest/gtest.h>

#include <Eigen/QR>
#include <cmath>
#include <numbers>
#include <set>

#include "hmic/datagen.hpp"
#include "hmic/error.hpp"
#include "hmic/manifest.hpp"
#include "hmic/metadata_tree.hpp"
#include "hmic/wav_io.hpp"
#include "test_support.hpp"

namespace hmic {
namespace {

SynthSpec clean_spec() {
  SynthSpec s;
  s.duration_s = 0.5;
  s.amplitude_jitter = 0.0;
  s.frequency_jitter = 0.0;
  s.source_noise_rms = 0.0;
  s.target_noise_rms = 0.0;
  s.anomaly.transient_rate_hz = 0.0;
  s.counts = {4, 1, 2, 2};
  SynthSection sec;
  sec.id = 7;
  sec.base_tones_hz = {200.0};
  sec.attributes.push_back({"spd", {{"A", {1000.0}}, {"B", {1500.0}}}, {{"C", {2500.0}}}});
  s.machines.push_back({"toy", {sec}});
  return s;
}

// Residual of the least-squares fit of `x` by sin/cos pairs at `freqs`.
double fit_residual(const std::vector<double>& x, const std::vector<double>& freqs, int sr) {
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd basis(n, 2 * static_cast<Eigen::Index>(freqs.size()));
  for (std::size_t k = 0; k < freqs.size(); ++k) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double ph = 2.0 * std::numbers::pi * freqs[k] * static_cast<double>(i) / sr;
      basis(i, static_cast<Eigen::Index>(2 * k)) = std::sin(ph);
      basis(i, static_cast<Eigen::Index>(2 * k + 1)) = std::cos(ph);
    }
  }
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(x.data(), n);
  const Eigen::VectorXd coef = basis.colPivHouseholderQr().solve(y);
  return (basis * coef - y).norm() / std::max(y.norm(), 1e-300);
}

TEST(Datagen, PlanCountsAndNames) {
  const SynthSpec s = clean_spec();
  const auto plan = plan_corpus(s);
  ASSERT_EQ(plan.size(), 4u + 1u + 2u * (2u + 2u));
  std::set<std::string> ids;
  for (const auto& e : plan) {
    ids.insert(e.meta.clip_id);
    EXPECT_EQ(e.meta.machine_type, "toy");
    EXPECT_EQ(e.meta.section_id, 7);
    EXPECT_EQ(e.path.substr(0, 4), "toy/");
  }
  EXPECT_EQ(ids.size(), plan.size());
}

TEST(Datagen, FileNamesParseBackToTheirMetadata) {
  for (const auto& e : plan_corpus(default_synth_spec())) {
    const std::string file = std::filesystem::path(e.path).filename().string();
    ClipMeta parsed = parse_dcase_filename(file, e.meta.machine_type);
    EXPECT_EQ(e.meta.machine_type + "/" + parsed.clip_id, e.meta.clip_id);
    parsed.clip_id = e.meta.clip_id;
    EXPECT_EQ(parsed, e.meta) << file;
  }
}

TEST(Datagen, TwoSourceValuesGiveTwoGroups) {
  std::vector<ClipMeta> source_train;
  std::vector<ClipMeta> all_train;
  for (const auto& e : plan_corpus(clean_spec())) {
    if (e.meta.split != Split::kTrain) continue;
    all_train.push_back(e.meta);
    if (e.meta.domain == Domain::kSource) source_train.push_back(e.meta);
  }
  EXPECT_EQ(build_label_space(source_train, "toy").num_groups(), 2);
  EXPECT_EQ(build_label_space(all_train, "toy").num_groups(), 3);
}

TEST(Datagen, NoiselessNormalClipIsItsToneSum) {
  const SynthSpec s = clean_spec();
  for (const auto& e : plan_corpus(s)) {
    if (e.meta.condition != Condition::kNormal) continue;
    const Waveform w = synthesize_clip(s, e);
    ASSERT_EQ(w.samples.size(), 8000u);
    const std::string v = e.meta.attributes.at("spd");
    const double f = v == "A" ? 1000.0 : v == "B" ? 1500.0 : 2500.0;
    EXPECT_LT(fit_residual(w.samples, {200.0, f}, 16000), 1e-9) << e.meta.clip_id;
    // the other values' tones are absent
    EXPECT_GT(fit_residual(w.samples, {200.0, f == 1000.0 ? 1500.0 : 1000.0}, 16000), 0.1);
  }
}

TEST(Datagen, AnomalousClipDetunesAttributeTones) {
  const SynthSpec s = clean_spec();
  const double up = std::pow(2.0, s.anomaly.detune_cents / 1200.0);
  int seen = 0;
  for (const auto& e : plan_corpus(s)) {
    if (e.meta.condition != Condition::kAnomalous) continue;
    ++seen;
    const Waveform w = synthesize_clip(s, e);
    const std::string v = e.meta.attributes.at("spd");
    const double f = v == "A" ? 1000.0 : v == "B" ? 1500.0 : 2500.0;
    EXPECT_LT(fit_residual(w.samples, {200.0, f * up, f / up}, 16000), 1e-9);
    EXPECT_GT(fit_residual(w.samples, {200.0, f}, 16000), 0.1);
  }
  EXPECT_EQ(seen, 4);
}

TEST(Datagen, NoiseLevelFollowsDomain) {
  SynthSpec s = clean_spec();
  s.machines[0].sections[0].base_tones_hz.clear();
  s.tone_amplitude = 1e-12;
  s.source_noise_rms = 0.01;
  s.target_noise_rms = 0.03;
  for (const auto& e : plan_corpus(s)) {
    if (e.meta.condition != Condition::kNormal) continue;
    const Waveform w = synthesize_clip(s, e);
    double ss = 0.0;
    for (double x : w.samples) ss += x * x;
    const double rms = std::sqrt(ss / static_cast<double>(w.samples.size()));
    const double want = e.meta.domain == Domain::kTarget ? 0.03 : 0.01;
    EXPECT_NEAR(rms, want, 0.1 * want);
  }
}

TEST(Datagen, GenerationIsReproducibleAndOrderFree) {
  SynthSpec s = default_synth_spec();
  s.duration_s = 0.25;
  s.counts = {3, 1, 1, 1};
  testing::TempDir a;
  testing::TempDir b;
  const auto ga = generate(s, a.path(), 1);
  const auto gb = generate(s, b.path(), 3);
  ASSERT_EQ(ga.entries, gb.entries);
  EXPECT_EQ(testing::slurp(ga.manifest), testing::slurp(gb.manifest));
  EXPECT_EQ(read_manifest(ga.manifest), ga.entries);
  for (const auto& e : ga.entries) {
    EXPECT_EQ(testing::slurp(a.path() / e.path), testing::slurp(b.path() / e.path)) << e.path;
  }
  const Waveform w = read_wav(a.path() / ga.entries.front().path);
  EXPECT_EQ(w.samples.size(), 4000u);

  SynthSpec other = s;
  other.seed += 1;
  EXPECT_NE(synthesize_clip(s, ga.entries.front()).samples, synthesize_clip(other, ga.entries.front()).samples);
}

TEST(Datagen, JsonRoundTrip) {
  const SynthSpec s = clean_spec();
  const std::string text = synth_spec_to_json(s);
  EXPECT_EQ(synth_spec_to_json(synth_spec_from_json(text)), text);
  const std::string d = synth_spec_to_json(default_synth_spec());
  EXPECT_EQ(synth_spec_to_json(synth_spec_from_json(d)), d);
  EXPECT_EQ(synth_spec_to_json(synth_spec_from_json(R"({"seed": 5})")).find("\"fan\"") != std::string::npos, true);
}

TEST(Datagen, ValidationRejectsBadSpecs) {
  SynthSpec s = clean_spec();
  s.machines[0].sections[0].base_tones_hz = {8000.0};
  EXPECT_THROW(s.validate(), ConfigError);
  s = clean_spec();
  s.machines[0].sections[0].attributes[0].target_values.clear();
  EXPECT_THROW(s.validate(), ConfigError);
  s = clean_spec();
  s.machines[0].name = "a_b";
  EXPECT_THROW(s.validate(), ConfigError);
  s = clean_spec();
  s.counts.test_anomalous = 0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = clean_spec();
  s.machines[0].sections[0].id = 100;
  EXPECT_THROW(s.validate(), ConfigError);
}

}  // namespace
}  // namespace hmic
