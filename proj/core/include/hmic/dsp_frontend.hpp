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

// Waveform -> log-Mel spectrogram front end.
//
// Framing: frame t covers samples [t*hop, t*hop + frame_size), zero padded
// past the end, so n_frames = ceil(len / hop). A 10 s clip at 16 kHz with
// frame 1024 and hop 512 gives 313 frames. Periodic Hann window, HTK mel
// scale (mel = 2595 log10(1 + f/700)), unnormalised triangular filters,
// natural log with a floor.

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace hmic {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Waveform {
  std::vector<double> samples;
  int sample_rate_hz = 16000;
};

struct DspConfig {
  int sample_rate_hz = 16000;
  int frame_size = 1024;
  int hop = 512;
  int n_mels = 128;
  double f_min_hz = 0.0;
  double f_max_hz = 8000.0;
  double floor_epsilon = 1e-10;

  // Throws ConfigError when inconsistent.
  void validate() const;
  std::string canonical_json() const;

  bool operator==(const DspConfig&) const = default;
};

// values is [n_mels x n_frames], row-major.
struct LogMelSpectrogram {
  RowMatrix values;

  int n_mels() const { return static_cast<int>(values.rows()); }
  int n_frames() const { return static_cast<int>(values.cols()); }
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Periodic Hann window of the given length.
std::vector<double> hann_window(int length);

int frame_count(std::size_t n_samples, int hop);

// Power spectrogram [frame_size/2 + 1 x n_frames].
RowMatrix stft_power(const Waveform& wave, int frame_size, int hop);

// Triangular filters [n_mels x n_fft_bins]; bin k sits at k * sr / n_fft where
// n_fft = 2 * (n_fft_bins - 1).
RowMatrix mel_filterbank(int n_fft_bins, int n_mels, int sample_rate_hz, double f_min_hz,
                         double f_max_hz);

// Centre frequency of each mel filter in Hz.
std::vector<double> mel_centre_frequencies(int n_mels, double f_min_hz, double f_max_hz);

// Reusable extractor holding the window, FFT plan and filterbank for one
// config. Thread-safe for concurrent extract() calls.
class LogMelExtractor {
 public:
  explicit LogMelExtractor(DspConfig config);
  ~LogMelExtractor();
  LogMelExtractor(LogMelExtractor&&) noexcept;
  LogMelExtractor& operator=(LogMelExtractor&&) noexcept;

  const DspConfig& config() const { return config_; }
  const RowMatrix& filterbank() const { return filterbank_; }

  RowMatrix power(const Waveform& wave) const;
  LogMelSpectrogram extract(const Waveform& wave) const;

 private:
  struct FftPlan;
  DspConfig config_;
  std::vector<double> window_;
  RowMatrix filterbank_;
  std::unique_ptr<FftPlan> plan_;
};

LogMelSpectrogram log_mel(const Waveform& wave, const DspConfig& config = {});

// Zero mean, unit variance over the whole matrix. A constant matrix maps to
// all zeros.
RowMatrix standardize(const RowMatrix& values);

// Rounds every entry through float. Features are always stored at this
// precision so cached and freshly computed inputs are identical.
void quantize_to_float(RowMatrix& values);

// Feature cache file: 16-byte little-endian header
//   u32 magic 'HMLM', u32 version, u32 n_mels, u32 n_frames
// followed by n_mels * n_frames f32 values, row-major.
inline constexpr std::uint32_t kFeatureMagic = 0x4D4C4D48;  // "HMLM"
inline constexpr std::uint32_t kFeatureVersion = 1;

void write_feature_file(const std::filesystem::path& file, const LogMelSpectrogram& spec);
LogMelSpectrogram read_feature_file(const std::filesystem::path& file);

}  // namespace hmic
