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

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "hmic/dsp_frontend.hpp"
#include "hmic/error.hpp"
#include "hmic/random.hpp"
#include "test_support.hpp"

namespace hmic {
namespace {

constexpr double kPi = std::numbers::pi;

Waveform tone(double hz, double seconds = 10.0, double amp = 0.5) {
  Waveform w;
  const auto n = static_cast<std::size_t>(seconds * 16000);
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = amp * std::sin(2.0 * kPi * hz * static_cast<double>(i) / 16000.0);
  return w;
}

// |DFT|^2 of one periodic-Hann-windowed, zero-padded frame by direct summation.
std::vector<double> direct_power(const std::vector<double>& x, std::size_t start, int n) {
  std::vector<double> out(static_cast<std::size_t>(n / 2 + 1));
  for (int k = 0; k <= n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const std::size_t idx = start + static_cast<std::size_t>(i);
      const double w = 0.5 - 0.5 * std::cos(2.0 * kPi * i / n);
      const double v = idx < x.size() ? x[idx] * w : 0.0;
      acc += v * std::polar(1.0, -2.0 * kPi * k * i / n);
    }
    out[static_cast<std::size_t>(k)] = std::norm(acc);
  }
  return out;
}

double htk_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double htk_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

TEST(Dsp, FrameCountCoversTheClip) {
  EXPECT_EQ(frame_count(160000, 512), 313);
  EXPECT_EQ(frame_count(512, 512), 1);
  EXPECT_EQ(frame_count(513, 512), 2);
  EXPECT_EQ(frame_count(1, 512), 1);
}

TEST(Dsp, TenSecondClipGives128By313) {
  const auto spec = log_mel(tone(440.0));
  EXPECT_EQ(spec.n_mels(), 128);
  EXPECT_EQ(spec.n_frames(), 313);
}

TEST(Dsp, HannIsPeriodic) {
  const auto w = hann_window(8);
  for (int i = 0; i < 8; ++i) EXPECT_NEAR(w[static_cast<std::size_t>(i)], 0.5 - 0.5 * std::cos(2 * kPi * i / 8), 1e-15);
  EXPECT_EQ(w[0], 0.0);
}

TEST(Dsp, SilenceGivesZeroPowerAndFloorLogMel) {
  Waveform w;
  w.samples.assign(16000, 0.0);
  const RowMatrix p = stft_power(w, 1024, 512);
  EXPECT_EQ(p.maxCoeff(), 0.0);
  const auto m = log_mel(w);
  EXPECT_TRUE((m.values.array() == std::log(1e-10)).all());
}

TEST(Dsp, ImpulseGivesFlatFrameSpectrum) {
  for (std::size_t at : {std::size_t{0}, std::size_t{300}}) {
    Waveform w;
    w.samples.assign(4096, 0.0);
    w.samples[at] = 1.0;
    const RowMatrix p = stft_power(w, 1024, 512);
    const auto oracle = direct_power(w.samples, 0, 1024);
    const double win = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(at) / 1024.0);
    for (int k = 0; k < 513; ++k) {
      EXPECT_NEAR(p(k, 0), win * win, 1e-12);
      EXPECT_NEAR(p(k, 0), oracle[static_cast<std::size_t>(k)], 1e-12);
    }
  }
}

TEST(Dsp, StftMatchesDirectDftOnNoise) {
  Rng rng(3);
  std::vector<double> x(300);
  for (double& v : x) v = rng.normal();
  const RowMatrix p = stft_power(Waveform{x, 16000}, 64, 32);
  ASSERT_EQ(p.cols(), frame_count(x.size(), 32));
  for (Eigen::Index t = 0; t < p.cols(); ++t) {
    const auto oracle = direct_power(x, static_cast<std::size_t>(t) * 32, 64);
    for (int k = 0; k <= 32; ++k) EXPECT_NEAR(p(k, t), oracle[static_cast<std::size_t>(k)], 1e-9);
  }
}

TEST(Dsp, MelFormulaIsHtk) {
  for (double f : {0.0, 300.0, 1000.0, 4000.0, 8000.0}) {
    EXPECT_NEAR(hz_to_mel(f), htk_mel(f), 1e-9);
    EXPECT_NEAR(mel_to_hz(hz_to_mel(f)), f, 1e-9);
  }
  EXPECT_NEAR(hz_to_mel(1000.0), 2595.0 * std::log10(1.0 + 1000.0 / 700.0), 1e-12);
}

TEST(Dsp, FilterbankRowsAreContiguousTriangles) {
  const RowMatrix fb = mel_filterbank(513, 128, 16000, 0.0, 8000.0);
  ASSERT_EQ(fb.rows(), 128);
  ASSERT_EQ(fb.cols(), 513);
  EXPECT_GE(fb.minCoeff(), 0.0);
  EXPECT_LE(fb.maxCoeff(), 1.0 + 1e-12);
  for (Eigen::Index m = 0; m < fb.rows(); ++m) {
    Eigen::Index first = -1;
    Eigen::Index last = -1;
    for (Eigen::Index k = 0; k < fb.cols(); ++k) {
      if (fb(m, k) > 0.0) {
        if (first < 0) first = k;
        last = k;
      }
    }
    ASSERT_GE(first, 0) << "empty filter " << m;
    for (Eigen::Index k = first; k <= last; ++k) EXPECT_GT(fb(m, k), 0.0) << "gap in filter " << m;
  }
  // overlapping unnormalised triangles: every column sums to at most 1
  for (Eigen::Index k = 0; k < fb.cols(); ++k) EXPECT_LE(fb.col(k).sum(), 1.0 + 1e-12);
}

TEST(Dsp, SingleFilterSpansTheRange) {
  const RowMatrix fb = mel_filterbank(513, 1, 16000, 0.0, 8000.0);
  const double centre_hz = htk_hz(0.5 * htk_mel(8000.0));
  const double bin_hz = 16000.0 / 1024.0;
  for (int k = 0; k < 513; ++k) {
    const double f = k * bin_hz;
    const double expected = f <= centre_hz ? f / centre_hz : (8000.0 - f) / (8000.0 - centre_hz);
    EXPECT_NEAR(fb(0, k), std::max(0.0, expected), 1e-9) << "bin " << k;
  }
}

TEST(Dsp, CentreFrequenciesAreEvenlySpacedInMel) {
  const auto c = mel_centre_frequencies(128, 0.0, 8000.0);
  ASSERT_EQ(c.size(), 128u);
  const double step = htk_mel(8000.0) / 129.0;
  for (std::size_t m = 0; m < c.size(); ++m) EXPECT_NEAR(c[m], htk_hz(step * static_cast<double>(m + 1)), 1e-9);
}

TEST(Dsp, PureTonesPeakAtTheirFilter) {
  const auto centres = mel_centre_frequencies(128, 0.0, 8000.0);
  for (int bin : {20, 45, 70, 95, 120}) {
    const double hz = centres[static_cast<std::size_t>(bin)];
    const auto m = log_mel(tone(hz));
    // nearest centre by direct search
    int nearest = 0;
    for (int j = 1; j < 128; ++j) {
      if (std::abs(centres[static_cast<std::size_t>(j)] - hz) < std::abs(centres[static_cast<std::size_t>(nearest)] - hz)) {
        nearest = j;
      }
    }
    ASSERT_EQ(nearest, bin);
    // frames whose window lies wholly inside the clip; the padded tail smears low tones
    const Eigen::Index full = (160000 - 1024) / 512 + 1;
    for (Eigen::Index t = 0; t < full; ++t) {
      Eigen::Index arg = 0;
      m.values.col(t).maxCoeff(&arg);
      ASSERT_EQ(arg, nearest) << hz << " Hz, frame " << t;
    }
  }
}

TEST(Dsp, ScalingShiftsLogMelByTwoLogGain) {
  const Waveform w = tone(1234.0, 2.0);
  Waveform scaled = w;
  for (double& s : scaled.samples) s *= 3.0;
  const auto a = log_mel(w).values;
  const auto b = log_mel(scaled).values;
  const double floor_log = std::log(1e-10);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a.data()[i] > floor_log + 1.0) EXPECT_NEAR(b.data()[i] - a.data()[i], 2.0 * std::log(3.0), 1e-9);
  }
}

TEST(Dsp, HopShiftMovesOneColumn) {
  Rng rng(9);
  Waveform w;
  for (int i = 0; i < 16000; ++i) w.samples.push_back(rng.normal());
  Waveform shifted;
  shifted.samples.assign(512, 0.0);
  shifted.samples.insert(shifted.samples.end(), w.samples.begin(), w.samples.end());
  const auto a = log_mel(w).values;
  const auto b = log_mel(shifted).values;
  for (Eigen::Index t = 0; t + 1 < a.cols(); ++t) {
    EXPECT_LT((b.col(t + 1) - a.col(t)).cwiseAbs().maxCoeff(), 1e-9) << "frame " << t;
  }
}

TEST(Dsp, OutputsAreFiniteAndAboveFloor) {
  Rng rng(5);
  Waveform w;
  for (int i = 0; i < 20000; ++i) w.samples.push_back(i % 3000 < 1000 ? 0.0 : 1e-3 * rng.normal());
  const auto m = log_mel(w).values;
  EXPECT_TRUE(m.allFinite());
  EXPECT_GE(m.minCoeff(), std::log(1e-10));
}

TEST(Dsp, RejectsMismatchedSampleRateAndBadConfig) {
  Waveform w = tone(440.0, 1.0);
  w.sample_rate_hz = 22050;
  EXPECT_THROW(log_mel(w), Error);
  DspConfig bad;
  bad.f_max_hz = 9000.0;
  EXPECT_THROW(LogMelExtractor{bad}, ConfigError);
  bad = DspConfig{};
  bad.frame_size = 1023;
  EXPECT_THROW(LogMelExtractor{bad}, ConfigError);
}

TEST(Dsp, StandardizeAndQuantize) {
  RowMatrix x(2, 3);
  x << 1, 2, 3, 4, 5, 6;
  const RowMatrix z = standardize(x);
  EXPECT_NEAR(z.mean(), 0.0, 1e-15);
  EXPECT_NEAR((z.array() * z.array()).mean(), 1.0, 1e-12);
  EXPECT_TRUE((standardize(RowMatrix::Constant(2, 2, 7.0)).array() == 0.0).all());
  RowMatrix q(1, 2);
  q << 0.1, 1.0 / 3.0;
  quantize_to_float(q);
  EXPECT_EQ(q(0, 0), static_cast<double>(0.1f));
  EXPECT_EQ(q(0, 1), static_cast<double>(1.0f / 3.0f));
}

TEST(Dsp, FeatureFileRoundTrip) {
  testing::TempDir dir;
  LogMelSpectrogram s;
  s.values = standardize(log_mel(tone(700.0, 1.0)).values);
  quantize_to_float(s.values);
  write_feature_file(dir / "f.hmlm", s);
  const auto r = read_feature_file(dir / "f.hmlm");
  EXPECT_EQ(r.values, s.values);
  std::ofstream(dir / "junk.hmlm") << "xx";
  EXPECT_THROW(read_feature_file(dir / "junk.hmlm"), Error);
}

}  // namespace
}  // namespace hmic
