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

#include <benchmark/benchmark.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "hmic/dsp_frontend.hpp"
#include "hmic/evaluation.hpp"
#include "hmic/model.hpp"
#include "hmic/pipeline.hpp"
#include "hmic/random.hpp"
#include "hmic/scoring.hpp"

namespace {

hmic::Waveform noise_clip(std::uint64_t seed) {
  hmic::Rng rng(seed);
  hmic::Waveform w;
  w.samples.resize(160000);
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    w.samples[i] = 0.1 * std::sin(2.0 * std::numbers::pi * 1000.0 * static_cast<double>(i) / 16000.0) +
                   0.01 * rng.normal();
  }
  return w;
}

hmic::ModelConfig full_config() {
  hmic::ModelConfig c;
  c.n_sections = 3;
  c.n_groups = 18;
  return c;
}

hmic::TrainingExample example(std::uint64_t seed) {
  hmic::TrainingExample ex;
  ex.input = hmic::standardize(hmic::log_mel(noise_clip(seed)).values);
  ex.labels = {1, 7};
  return ex;
}

void BM_LogMel(benchmark::State& state) {
  const hmic::LogMelExtractor extractor{hmic::DspConfig{}};
  const auto wave = noise_clip(1);
  for (auto _ : state) benchmark::DoNotOptimize(extractor.extract(wave));
}
BENCHMARK(BM_LogMel)->Unit(benchmark::kMillisecond);

void BM_Forward(benchmark::State& state) {
  const auto params = hmic::ModelParams::initialize(full_config(), 1);
  const auto ex = example(2);
  for (auto _ : state) benchmark::DoNotOptimize(hmic::forward_features(ex.input, params));
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMillisecond);

void BM_SampleGradient(benchmark::State& state) {
  const auto params = hmic::ModelParams::initialize(full_config(), 1);
  const auto ex = example(3);
  const hmic::TrainingExample* batch[] = {&ex};
  for (auto _ : state) benchmark::DoNotOptimize(hmic::batch_gradient(params, batch, 0.5));
}
BENCHMARK(BM_SampleGradient)->Unit(benchmark::kMillisecond);

void BM_Mahalanobis(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  hmic::Rng rng(4);
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d * d; ++i) a.data()[i] = rng.normal();
  const Eigen::MatrixXd spd = a * a.transpose() + Eigen::MatrixXd::Identity(d, d);
  const Eigen::LLT<Eigen::MatrixXd> llt(spd);
  Eigen::VectorXd f(d);
  Eigen::VectorXd c(d);
  for (int i = 0; i < d; ++i) {
    f[i] = rng.normal();
    c[i] = rng.normal();
  }
  for (auto _ : state) benchmark::DoNotOptimize(hmic::mahalanobis(f, c, llt));
}
BENCHMARK(BM_Mahalanobis)->Arg(8)->Arg(64);

void BM_Auc(benchmark::State& state) {
  hmic::Rng rng(5);
  std::vector<hmic::ScoredClip> clips(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < clips.size(); ++i) {
    clips[i].anomalous = i % 2 == 0;
    clips[i].score = rng.normal() + (clips[i].anomalous ? 1.0 : 0.0);
  }
  for (auto _ : state) benchmark::DoNotOptimize(hmic::auc(clips));
}
BENCHMARK(BM_Auc)->Arg(200)->Arg(20000);

}  // namespace
int main(int argc, char** argv) {
  hmic::tune_allocator();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
