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

#include "hmic/dsp_frontend.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <numbers>

#include "hmic/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "feature and checkpoint files assume a little-endian host");

namespace hmic {
namespace {

// FFTW's planner is not thread-safe; execution with new-array functions is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

void check_waveform(const Waveform& wave) {
  if (wave.samples.empty()) throw Error("empty waveform");
  if (wave.sample_rate_hz <= 0) throw Error("sample rate must be positive");
  for (double s : wave.samples) {
    if (!std::isfinite(s)) throw Error("waveform contains non-finite samples");
  }
}

}  // namespace

void DspConfig::validate() const {
  if (sample_rate_hz <= 0) throw ConfigError("dsp.sample_rate_hz must be positive");
  if (frame_size < 2 || frame_size % 2 != 0) throw ConfigError("dsp.frame_size must be even and >= 2");
  if (hop <= 0 || hop > frame_size) throw ConfigError("dsp.hop must be in (0, frame_size]");
  if (n_mels < 1) throw ConfigError("dsp.n_mels must be >= 1");
  if (!(f_min_hz >= 0.0 && f_min_hz < f_max_hz && f_max_hz <= sample_rate_hz / 2.0)) {
    throw ConfigError("dsp frequency range must satisfy 0 <= f_min < f_max <= sample_rate/2");
  }
  if (!(floor_epsilon > 0.0)) throw ConfigError("dsp.floor_epsilon must be positive");
}

std::string DspConfig::canonical_json() const {
  nlohmann::ordered_json j;
  j["sample_rate_hz"] = sample_rate_hz;
  j["frame_size"] = frame_size;
  j["hop"] = hop;
  j["n_mels"] = n_mels;
  j["f_min_hz"] = f_min_hz;
  j["f_max_hz"] = f_max_hz;
  j["floor_epsilon"] = floor_epsilon;
  return j.dump();
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> hann_window(int length) {
  std::vector<double> w(static_cast<std::size_t>(length));
  for (int n = 0; n < length; ++n) {
    w[static_cast<std::size_t>(n)] =
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / static_cast<double>(length));
  }
  return w;
}

int frame_count(std::size_t n_samples, int hop) {
  return static_cast<int>((n_samples + static_cast<std::size_t>(hop) - 1) /
                          static_cast<std::size_t>(hop));
}

std::vector<double> mel_centre_frequencies(int n_mels, double f_min_hz, double f_max_hz) {
  const double lo = hz_to_mel(f_min_hz);
  const double hi = hz_to_mel(f_max_hz);
  std::vector<double> centres(static_cast<std::size_t>(n_mels));
  for (int m = 0; m < n_mels; ++m) {
    centres[static_cast<std::size_t>(m)] = mel_to_hz(lo + (hi - lo) * (m + 1) / (n_mels + 1));
  }
  return centres;
}

RowMatrix mel_filterbank(int n_fft_bins, int n_mels, int sample_rate_hz, double f_min_hz,
                         double f_max_hz) {
  if (n_fft_bins < 2) throw Error("mel_filterbank needs at least two FFT bins");
  if (n_mels < 1) throw Error("mel_filterbank needs n_mels >= 1");
  if (sample_rate_hz <= 0) throw Error("sample rate must be positive");
  if (!(f_min_hz >= 0.0 && f_min_hz < f_max_hz && f_max_hz <= sample_rate_hz / 2.0)) {
    throw Error("invalid mel frequency range [" + std::to_string(f_min_hz) + ", " +
                std::to_string(f_max_hz) + "]");
  }
  const int n_fft = 2 * (n_fft_bins - 1);
  const double mel_lo = hz_to_mel(f_min_hz);
  const double mel_hi = hz_to_mel(f_max_hz);
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i) {
    edges[static_cast<std::size_t>(i)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));
  }

  RowMatrix fb = RowMatrix::Zero(n_mels, n_fft_bins);
  for (int m = 0; m < n_mels; ++m) {
    const double left = edges[static_cast<std::size_t>(m)];
    const double centre = edges[static_cast<std::size_t>(m) + 1];
    const double right = edges[static_cast<std::size_t>(m) + 2];
    for (int k = 0; k < n_fft_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate_hz / n_fft;
      const double up = (f - left) / (centre - left);
      const double down = (right - f) / (right - centre);
      fb(m, k) = std::max(0.0, std::min(up, down));
    }
    if (fb.row(m).sum() <= 0.0) {
      throw Error("mel filter " + std::to_string(m) +
                  " covers no FFT bin; reduce n_mels or increase frame_size");
    }
  }
  return fb;
}

struct LogMelExtractor::FftPlan {
  int size = 0;
  fftw_plan plan = nullptr;

  explicit FftPlan(int n) : size(n) {
    std::lock_guard lock(fftw_planner_mutex());
    double* in = fftw_alloc_real(static_cast<std::size_t>(n));
    fftw_complex* out = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    plan = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
    if (!plan) throw Error("FFTW failed to create a plan of size " + std::to_string(n));
  }
  ~FftPlan() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;
};

LogMelExtractor::LogMelExtractor(DspConfig config)
    : config_((config.validate(), config)),
      window_(hann_window(config.frame_size)),
      plan_(std::make_unique<FftPlan>(config.frame_size)) {
  filterbank_ = mel_filterbank(config_.frame_size / 2 + 1, config_.n_mels,
                               config_.sample_rate_hz, config_.f_min_hz, config_.f_max_hz);
}

LogMelExtractor::~LogMelExtractor() = default;
LogMelExtractor::LogMelExtractor(LogMelExtractor&&) noexcept = default;
LogMelExtractor& LogMelExtractor::operator=(LogMelExtractor&&) noexcept = default;

RowMatrix LogMelExtractor::power(const Waveform& wave) const {
  check_waveform(wave);
  const int n = config_.frame_size;
  const int hop = config_.hop;
  const int n_bins = n / 2 + 1;
  const int n_frames = frame_count(wave.samples.size(), hop);

  struct Buffers {
    double* in;
    fftw_complex* out;
    ~Buffers() {
      fftw_free(in);
      fftw_free(out);
    }
  } buf{fftw_alloc_real(static_cast<std::size_t>(n)),
        fftw_alloc_complex(static_cast<std::size_t>(n_bins))};

  RowMatrix power(n_bins, n_frames);
  const std::size_t len = wave.samples.size();
  for (int t = 0; t < n_frames; ++t) {
    const std::size_t start = static_cast<std::size_t>(t) * static_cast<std::size_t>(hop);
    for (int i = 0; i < n; ++i) {
      const std::size_t idx = start + static_cast<std::size_t>(i);
      buf.in[i] = idx < len ? wave.samples[idx] * window_[static_cast<std::size_t>(i)] : 0.0;
    }
    fftw_execute_dft_r2c(plan_->plan, buf.in, buf.out);
    for (int k = 0; k < n_bins; ++k) {
      power(k, t) = buf.out[k][0] * buf.out[k][0] + buf.out[k][1] * buf.out[k][1];
    }
  }
  return power;
}

LogMelSpectrogram LogMelExtractor::extract(const Waveform& wave) const {
  if (wave.sample_rate_hz != config_.sample_rate_hz) {
    throw Error("sample rate " + std::to_string(wave.sample_rate_hz) + " Hz does not match the " +
                std::to_string(config_.sample_rate_hz) + " Hz front end (resampling unsupported)");
  }
  const RowMatrix mel = filterbank_ * power(wave);
  LogMelSpectrogram out;
  out.values = mel.unaryExpr([eps = config_.floor_epsilon](double v) {
    return std::log(std::max(v, eps));
  });
  return out;
}

RowMatrix stft_power(const Waveform& wave, int frame_size, int hop) {
  DspConfig cfg;
  cfg.sample_rate_hz = wave.sample_rate_hz > 0 ? wave.sample_rate_hz : 16000;
  cfg.frame_size = frame_size;
  cfg.hop = hop;
  if (frame_size < 2 || frame_size % 2 != 0) throw Error("frame_size must be even and >= 2");
  if (hop <= 0 || hop > frame_size) throw Error("hop must be in (0, frame_size]");
  check_waveform(wave);
  // Only the window and plan are needed; skip the filterbank.
  cfg.n_mels = 1;
  cfg.f_max_hz = cfg.sample_rate_hz / 2.0;
  return LogMelExtractor(cfg).power(wave);
}

LogMelSpectrogram log_mel(const Waveform& wave, const DspConfig& config) {
  return LogMelExtractor(config).extract(wave);
}

RowMatrix standardize(const RowMatrix& values) {
  const double n = static_cast<double>(values.size());
  if (n == 0) return values;
  const double mean = values.sum() / n;
  const double var = (values.array() - mean).square().sum() / n;
  if (!(var > 0.0)) return RowMatrix::Zero(values.rows(), values.cols());
  return (values.array() - mean) / std::sqrt(var);
}

void quantize_to_float(RowMatrix& values) {
  values = values.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
}

void write_feature_file(const std::filesystem::path& file, const LogMelSpectrogram& spec) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write feature file " + file.string());
  const std::uint32_t header[4] = {kFeatureMagic, kFeatureVersion,
                                   static_cast<std::uint32_t>(spec.n_mels()),
                                   static_cast<std::uint32_t>(spec.n_frames())};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  std::vector<float> data(static_cast<std::size_t>(spec.values.size()));
  for (Eigen::Index i = 0; i < spec.values.size(); ++i) {
    data[static_cast<std::size_t>(i)] = static_cast<float>(spec.values.data()[i]);
  }
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw IoError("failed writing feature file " + file.string());
}

LogMelSpectrogram read_feature_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open feature file " + file.string());
  std::uint32_t header[4] = {};
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in || header[0] != kFeatureMagic) throw IoError("bad feature file magic in " + file.string());
  if (header[1] != kFeatureVersion) throw IoError("unsupported feature file version in " + file.string());
  const auto rows = static_cast<Eigen::Index>(header[2]);
  const auto cols = static_cast<Eigen::Index>(header[3]);
  std::vector<float> data(static_cast<std::size_t>(rows * cols));
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!in) throw IoError("truncated feature file " + file.string());
  LogMelSpectrogram spec;
  spec.values.resize(rows, cols);
  for (std::size_t i = 0; i < data.size(); ++i) spec.values.data()[i] = data[i];
  return spec;
}

}  // namespace hmic
