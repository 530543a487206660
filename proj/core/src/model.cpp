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

#include "hmic/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <numbers>
#include <optional>
#include <sstream>
#include <thread>

#include "hmic/error.hpp"
#include "hmic/random.hpp"

namespace hmic {
namespace {

constexpr int kKernel = 3;
constexpr int kTaps = kKernel * kKernel;

using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;
using ConstColMap = Eigen::Map<const Eigen::MatrixXd>;
using ColMap = Eigen::Map<Eigen::MatrixXd>;

struct ConvSlots {
  std::size_t weight;
  std::size_t bias;
  std::size_t gain;
};

std::size_t num_blocks(const ModelConfig& c) { return c.backbone_channels.size(); }

// Tensor indices of each layer, matching the order built by ModelParams::zeros.
struct Layout {
  std::vector<ConvSlots> blocks;
  std::optional<std::size_t> backbone_pool;
  ConvSlots head{};
  std::optional<std::size_t> head_pool;
  std::size_t id_weight = 0;  // bias follows
  std::size_t ag_weight = 0;  // bias follows
};

Layout layout_of(const ModelConfig& c) {
  Layout l;
  std::size_t i = 0;
  for (std::size_t b = 0; b < num_blocks(c); ++b, i += 3) l.blocks.push_back({i, i + 1, i + 2});
  if (c.pooling == Pooling::kDepthwise) l.backbone_pool = i++;
  l.head = {i, i + 1, i + 2};
  i += 3;
  if (c.pooling == Pooling::kDepthwise) l.head_pool = i++;
  l.id_weight = i;
  l.ag_weight = i + 2;
  return l;
}

Eigen::VectorXd global_pool(const RowMatrix& map, const Tensor* kernel) {
  if (!kernel) return map.rowwise().mean();
  const ConstMap k(kernel->data.data(), map.rows(), map.cols());
  return (map.array() * k.array()).rowwise().sum();
}

// Accumulates the kernel gradient and returns d(map).
RowMatrix global_pool_backward(const Eigen::VectorXd& d_feat, const RowMatrix& map,
                               const Tensor* kernel, Tensor* d_kernel) {
  if (!kernel) {
    RowMatrix d_map(map.rows(), map.cols());
    d_map.colwise() = d_feat / static_cast<double>(map.cols());
    return d_map;
  }
  MutMap dk(d_kernel->data.data(), map.rows(), map.cols());
  dk.array() += map.array().colwise() * d_feat.array();
  const ConstMap k(kernel->data.data(), map.rows(), map.cols());
  return k.array().colwise() * d_feat.array();
}

// Builds the [C*9, H*W] patch matrix of a zero-padded 3x3 "same" convolution.
void im2col(const double* in, int channels, int height, int width, RowMatrix& cols) {
  cols.resize(static_cast<Eigen::Index>(channels) * kTaps,
              static_cast<Eigen::Index>(height) * width);
  for (int c = 0; c < channels; ++c) {
    const double* plane = in + static_cast<std::ptrdiff_t>(c) * height * width;
    for (int ky = 0; ky < kKernel; ++ky) {
      for (int kx = 0; kx < kKernel; ++kx) {
        double* dst = cols.row(c * kTaps + ky * kKernel + kx).data();
        // output columns [x0, x1) read inside the image
        const int x0 = std::max(0, 1 - kx);
        const int x1 = std::min(width, width + 1 - kx);
        for (int y = 0; y < height; ++y) {
          const int sy = y + ky - 1;
          double* row = dst + static_cast<std::ptrdiff_t>(y) * width;
          if (sy < 0 || sy >= height) {
            std::fill(row, row + width, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::ptrdiff_t>(sy) * width;
          std::fill(row, row + x0, 0.0);
          std::copy(src + x0 + kx - 1, src + x1 + kx - 1, row + x0);
          std::fill(row + x1, row + width, 0.0);
        }
      }
    }
  }
}

// Adjoint of im2col: scatters patch gradients back onto a zeroed image.
void col2im(const RowMatrix& cols, int channels, int height, int width, double* out) {
  std::fill(out, out + static_cast<std::ptrdiff_t>(channels) * height * width, 0.0);
  for (int c = 0; c < channels; ++c) {
    double* plane = out + static_cast<std::ptrdiff_t>(c) * height * width;
    for (int ky = 0; ky < kKernel; ++ky) {
      for (int kx = 0; kx < kKernel; ++kx) {
        const double* src = cols.row(c * kTaps + ky * kKernel + kx).data();
        const int x0 = std::max(0, 1 - kx);
        const int x1 = std::min(width, width + 1 - kx);
        for (int y = 0; y < height; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= height) continue;
          const double* row = src + static_cast<std::ptrdiff_t>(y) * width;
          double* dst = plane + static_cast<std::ptrdiff_t>(sy) * width;
          for (int x = x0; x < x1; ++x) dst[x + kx - 1] += row[x];
        }
      }
    }
  }
}

struct ConvCache {
  int height = 0;
  int width = 0;
  RowMatrix cols;  // [Cin*9, H*W]
  RowMatrix z;     // pre-gain conv output [Cout, H*W]
  RowMatrix act;   // ReLU(gain * z)
};

struct ForwardCache {
  std::vector<ConvCache> blocks;
  std::vector<RowMatrix> pooled;  // block outputs after pooling, [C, h*w]
  std::vector<std::pair<int, int>> pooled_dims;
  ConvCache head;
  FeaturePair features;
};

void conv_forward(const RowMatrix& input, int in_channels, int height, int width,
                  const Tensor& weight, const Tensor& bias, const Tensor& gain, ConvCache& cache) {
  const int out_channels = weight.shape[0];
  cache.height = height;
  cache.width = width;
  im2col(input.data(), in_channels, height, width, cache.cols);
  // Products run on column-major views of the transposes, which Eigen
  // blocks better for these long, thin shapes.
  const Eigen::Index n = cache.cols.cols();
  const Eigen::Index k = cache.cols.rows();
  cache.z.resize(out_channels, n);
  ColMap(cache.z.data(), n, out_channels).noalias() =
      ConstColMap(cache.cols.data(), n, k) * ConstColMap(weight.data.data(), k, out_channels);
  cache.act.resize(cache.z.rows(), cache.z.cols());
  for (int c = 0; c < out_channels; ++c) {
    const double b = bias.data[static_cast<std::size_t>(c)];
    const double g = gain.data[static_cast<std::size_t>(c)];
    auto zr = cache.z.row(c);
    zr.array() += b;
    cache.act.row(c) = (g * zr.array()).max(0.0);
  }
}

// Returns d(input) as [Cin, H*W] when want_input_grad is set.
RowMatrix conv_backward(const RowMatrix& d_act, const ConvCache& cache, int in_channels,
                        const Tensor& weight, const Tensor& gain, Tensor& d_weight,
                        Tensor& d_bias, Tensor& d_gain, bool want_input_grad) {
  const int out_channels = weight.shape[0];
  RowMatrix dz(d_act.rows(), d_act.cols());
  for (int c = 0; c < out_channels; ++c) {
    const double g = gain.data[static_cast<std::size_t>(c)];
    const auto z = cache.z.row(c).array();
    const auto active = ((g * z) > 0.0).cast<double>();
    const auto da = d_act.row(c).array() * active;
    d_gain.data[static_cast<std::size_t>(c)] += (da * z).sum();
    dz.row(c) = g * da;
    d_bias.data[static_cast<std::size_t>(c)] += dz.row(c).sum();
  }
  const auto k = static_cast<Eigen::Index>(in_channels) * kTaps;
  const Eigen::Index n = dz.cols();
  const ConstColMap dz_t(dz.data(), n, out_channels);
  const ConstColMap cols_t(cache.cols.data(), n, k);
  ColMap(d_weight.data.data(), k, out_channels).noalias() += cols_t.transpose() * dz_t;
  if (!want_input_grad) return {};
  RowMatrix d_cols(k, n);
  ColMap(d_cols.data(), n, k).noalias() =
      dz_t * ConstColMap(weight.data.data(), k, out_channels).transpose();
  RowMatrix d_input(in_channels, static_cast<Eigen::Index>(cache.height) * cache.width);
  col2im(d_cols, in_channels, cache.height, cache.width, d_input.data());
  return d_input;
}

RowMatrix avg_pool_2x2(const RowMatrix& act, int height, int width) {
  const int ph = height / 2;
  const int pw = width / 2;
  RowMatrix out(act.rows(), static_cast<Eigen::Index>(ph) * pw);
  for (Eigen::Index c = 0; c < act.rows(); ++c) {
    const double* src = act.row(c).data();
    double* dst = out.row(c).data();
    for (int y = 0; y < ph; ++y) {
      const double* r0 = src + static_cast<std::ptrdiff_t>(2 * y) * width;
      const double* r1 = r0 + width;
      for (int x = 0; x < pw; ++x) {
        dst[y * pw + x] = 0.25 * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]);
      }
    }
  }
  return out;
}

RowMatrix avg_pool_2x2_backward(const RowMatrix& d_out, int height, int width) {
  const int ph = height / 2;
  const int pw = width / 2;
  RowMatrix d_in = RowMatrix::Zero(d_out.rows(), static_cast<Eigen::Index>(height) * width);
  for (Eigen::Index c = 0; c < d_out.rows(); ++c) {
    const double* src = d_out.row(c).data();
    double* dst = d_in.row(c).data();
    for (int y = 0; y < ph; ++y) {
      double* r0 = dst + static_cast<std::ptrdiff_t>(2 * y) * width;
      double* r1 = r0 + width;
      for (int x = 0; x < pw; ++x) {
        const double g = 0.25 * src[y * pw + x];
        r0[2 * x] = g;
        r0[2 * x + 1] = g;
        r1[2 * x] = g;
        r1[2 * x + 1] = g;
      }
    }
  }
  return d_in;
}

void check_input(const RowMatrix& input, const ModelConfig& c) {
  if (input.rows() != c.n_mels || input.cols() != c.n_frames) {
    throw ShapeError("model input is " + std::to_string(input.rows()) + "x" +
                     std::to_string(input.cols()) + ", expected " + std::to_string(c.n_mels) +
                     "x" + std::to_string(c.n_frames));
  }
}

void forward_impl(const RowMatrix& input, const ModelParams& params, ForwardCache& cache) {
  const ModelConfig& cfg = params.config();
  check_input(input, cfg);
  const auto& t = params.tensors();
  const Layout lay = layout_of(cfg);
  const std::size_t nb = num_blocks(cfg);
  cache.blocks.resize(nb);
  cache.pooled.resize(nb);
  cache.pooled_dims.resize(nb);

  int channels = 1;
  int height = cfg.n_mels;
  int width = cfg.n_frames;
  const RowMatrix* x = &input;
  for (std::size_t b = 0; b < nb; ++b) {
    const auto s = lay.blocks[b];
    conv_forward(*x, channels, height, width, t[s.weight], t[s.bias], t[s.gain], cache.blocks[b]);
    cache.pooled[b] = avg_pool_2x2(cache.blocks[b].act, height, width);
    channels = cfg.backbone_channels[b];
    height /= 2;
    width /= 2;
    cache.pooled_dims[b] = {height, width};
    x = &cache.pooled[b];
  }
  cache.features.low = global_pool(*x, lay.backbone_pool ? &t[*lay.backbone_pool] : nullptr);

  const auto hs = lay.head;
  conv_forward(*x, channels, height, width, t[hs.weight], t[hs.bias], t[hs.gain], cache.head);
  cache.features.high = global_pool(cache.head.act, lay.head_pool ? &t[*lay.head_pool] : nullptr);
}

struct SampleResult {
  LossBreakdown loss;
  std::vector<Tensor> grads;
};

std::vector<Tensor> zero_grads(const ModelParams& params) {
  std::vector<Tensor> g;
  g.reserve(params.tensors().size());
  for (const auto& t : params.tensors()) g.push_back(Tensor::zeros(t.shape));
  return g;
}

SampleResult sample_gradient(const ModelParams& params, const TrainingExample& ex, double lambda) {
  const ModelConfig& cfg = params.config();
  const auto& t = params.tensors();
  ForwardCache cache;
  forward_impl(ex.input, params, cache);
  const Logits logits = classify(cache.features, params);

  SampleResult out;
  out.loss = loss(logits.id, logits.ag, ex.labels.id_label, ex.labels.ag_label, lambda);
  out.grads = zero_grads(params);
  auto& g = out.grads;

  const Layout lay = layout_of(cfg);
  const std::size_t nb = num_blocks(cfg);
  const int d_low = cfg.feature_dim_low();
  const int d_high = cfg.feature_dim_high();
  const RowMatrix& last_map = cache.pooled[nb - 1];
  const auto pool_kernel = [&](const std::optional<std::size_t>& slot) {
    return slot ? &t[*slot] : nullptr;
  };
  const auto pool_grad = [&](const std::optional<std::size_t>& slot) {
    return slot ? &g[*slot] : nullptr;
  };

  // d(total) / d(last backbone map), [d_l, h*w]
  RowMatrix d_map = RowMatrix::Zero(last_map.rows(), last_map.cols());

  if (lambda != 0.0) {
    Eigen::VectorXd d_logits = softmax(logits.id);
    d_logits(ex.labels.id_label) -= 1.0;
    d_logits *= lambda;
    const std::size_t ws = lay.id_weight;
    MutMap(g[ws].data.data(), cfg.n_sections, d_low).noalias() +=
        d_logits * cache.features.low.transpose();
    Eigen::Map<Eigen::VectorXd>(g[ws + 1].data.data(), cfg.n_sections) += d_logits;
    const Eigen::VectorXd d_low_feat =
        ConstMap(t[ws].data.data(), cfg.n_sections, d_low).transpose() * d_logits;
    d_map += global_pool_backward(d_low_feat, last_map, pool_kernel(lay.backbone_pool),
                                  pool_grad(lay.backbone_pool));
  }

  if (lambda != 1.0) {
    Eigen::VectorXd d_logits = softmax(logits.ag);
    d_logits(ex.labels.ag_label) -= 1.0;
    d_logits *= (1.0 - lambda);
    const std::size_t ws = lay.ag_weight;
    MutMap(g[ws].data.data(), cfg.n_groups, d_high).noalias() +=
        d_logits * cache.features.high.transpose();
    Eigen::Map<Eigen::VectorXd>(g[ws + 1].data.data(), cfg.n_groups) += d_logits;
    const Eigen::VectorXd d_high_feat =
        ConstMap(t[ws].data.data(), cfg.n_groups, d_high).transpose() * d_logits;
    const RowMatrix d_head_act = global_pool_backward(
        d_high_feat, cache.head.act, pool_kernel(lay.head_pool), pool_grad(lay.head_pool));
    const auto hs = lay.head;
    d_map += conv_backward(d_head_act, cache.head, d_low, t[hs.weight], t[hs.gain], g[hs.weight],
                           g[hs.bias], g[hs.gain], true);
  }

  RowMatrix d_pooled = std::move(d_map);
  for (std::size_t b = nb; b-- > 0;) {
    const ConvCache& bc = cache.blocks[b];
    const RowMatrix d_act = avg_pool_2x2_backward(d_pooled, bc.height, bc.width);
    const int in_channels = b == 0 ? 1 : cfg.backbone_channels[b - 1];
    const auto s = lay.blocks[b];
    d_pooled = conv_backward(d_act, bc, in_channels, t[s.weight], t[s.gain], g[s.weight],
                             g[s.bias], g[s.gain], b > 0);
  }
  return out;
}

void check_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw Error("lambda must lie in [0, 1], got " + std::to_string(lambda));
  }
}

}  // namespace

std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::kHmic: return "hmic";
    case Ablation::kDomainOnly: return "domain_only";
    case Ablation::kAttributeOnly: return "attribute_only";
  }
  return "hmic";
}

Ablation parse_ablation(std::string_view text) {
  if (text == "hmic") return Ablation::kHmic;
  if (text == "domain_only") return Ablation::kDomainOnly;
  if (text == "attribute_only") return Ablation::kAttributeOnly;
  throw ConfigError("unknown ablation '" + std::string(text) +
                    "' (expected hmic, domain_only or attribute_only)");
}

std::string_view to_string(Pooling p) { return p == Pooling::kDepthwise ? "depthwise" : "average"; }

Pooling parse_pooling(std::string_view text) {
  if (text == "depthwise") return Pooling::kDepthwise;
  if (text == "average") return Pooling::kAverage;
  throw ConfigError("unknown pooling '" + std::string(text) + "' (expected depthwise or average)");
}

std::pair<int, int> ModelConfig::final_map_dims() const {
  int h = n_mels;
  int w = n_frames;
  for (std::size_t i = 0; i < backbone_channels.size(); ++i) {
    h /= 2;
    w /= 2;
  }
  return {h, w};
}

double ModelConfig::effective_lambda() const {
  switch (ablation) {
    case Ablation::kDomainOnly: return 1.0;
    case Ablation::kAttributeOnly: return 0.0;
    case Ablation::kHmic: break;
  }
  return lambda;
}

void ModelConfig::validate() const {
  if (n_mels < 1 || n_frames < 1) throw ConfigError("model input dimensions must be positive");
  if (backbone_channels.empty()) throw ConfigError("model needs at least one backbone block");
  int h = n_mels;
  int w = n_frames;
  for (int c : backbone_channels) {
    if (c < 1) throw ConfigError("backbone channel counts must be positive");
    h /= 2;
    w /= 2;
  }
  if (h < 1 || w < 1) {
    throw ConfigError("input " + std::to_string(n_mels) + "x" + std::to_string(n_frames) +
                      " is too small for " + std::to_string(backbone_channels.size()) +
                      " pooling blocks");
  }
  if (head_channels < 1) throw ConfigError("head_channels must be positive");
  if (n_sections < 1 || n_groups < 1) throw ConfigError("label counts must be positive");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
}

std::string ModelConfig::canonical_json() const {
  nlohmann::ordered_json j;
  j["n_mels"] = n_mels;
  j["n_frames"] = n_frames;
  j["backbone_channels"] = backbone_channels;
  j["head_channels"] = head_channels;
  j["n_sections"] = n_sections;
  j["n_groups"] = n_groups;
  j["lambda"] = lambda;
  j["ablation"] = std::string(to_string(ablation));
  j["pooling"] = std::string(to_string(pooling));
  return j.dump();
}

Tensor Tensor::zeros(std::vector<int> shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return Tensor{std::move(shape), std::vector<double>(n, 0.0)};
}

ModelParams ModelParams::zeros(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  p.config_ = config;
  int in = 1;
  auto add_conv = [&](const std::string& prefix, int out) {
    p.names_.push_back(prefix + "/weight");
    p.tensors_.push_back(Tensor::zeros({out, in, kKernel, kKernel}));
    p.names_.push_back(prefix + "/bias");
    p.tensors_.push_back(Tensor::zeros({out}));
    p.names_.push_back(prefix + "/gain");
    p.tensors_.push_back(Tensor::zeros({out}));
    in = out;
  };
  const auto [map_h, map_w] = config.final_map_dims();
  auto add_pool = [&](const std::string& prefix, int channels) {
    if (config.pooling != Pooling::kDepthwise) return;
    p.names_.push_back(prefix + "/pool");
    p.tensors_.push_back(Tensor::zeros({channels, map_h, map_w}));
  };
  for (std::size_t b = 0; b < config.backbone_channels.size(); ++b) {
    add_conv("backbone/" + std::to_string(b), config.backbone_channels[b]);
  }
  add_pool("backbone", config.feature_dim_low());
  add_conv("head", config.head_channels);
  add_pool("head", config.head_channels);
  p.names_.push_back("id/weight");
  p.tensors_.push_back(Tensor::zeros({config.n_sections, config.feature_dim_low()}));
  p.names_.push_back("id/bias");
  p.tensors_.push_back(Tensor::zeros({config.n_sections}));
  p.names_.push_back("ag/weight");
  p.tensors_.push_back(Tensor::zeros({config.n_groups, config.feature_dim_high()}));
  p.names_.push_back("ag/bias");
  p.tensors_.push_back(Tensor::zeros({config.n_groups}));
  return p;
}

ModelParams ModelParams::initialize(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = zeros(config);
  Rng rng(seed);
  const double gain0 = std::sqrt(6.0);
  // fan_in of a bias or gain is that of the weight tensor preceding it.
  double bound = 1.0;
  for (std::size_t i = 0; i < p.tensors_.size(); ++i) {
    const std::string& name = p.names_[i];
    Tensor& t = p.tensors_[i];
    if (name.ends_with("/pool")) {
      bound = 1.0 / std::sqrt(static_cast<double>(t.shape[1] * t.shape[2]));
    }
    if (name.ends_with("/weight")) {
      std::size_t fan_in = 1;
      for (std::size_t d = 1; d < t.shape.size(); ++d) fan_in *= static_cast<std::size_t>(t.shape[d]);
      bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    }
    if (name.ends_with("/gain")) {
      std::fill(t.data.begin(), t.data.end(), gain0);
    } else {
      for (double& v : t.data) v = rng.uniform(-bound, bound);
    }
  }
  return p;
}

Tensor& ModelParams::at(std::string_view name) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return tensors_[i];
  }
  throw Error("no parameter tensor named '" + std::string(name) + "'");
}

const Tensor& ModelParams::at(std::string_view name) const {
  return const_cast<ModelParams*>(this)->at(name);
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

ModelParams ModelParams::from_tensors(const ModelConfig& config, std::vector<std::string> names,
                                      std::vector<Tensor> tensors) {
  ModelParams p = zeros(config);
  if (names != p.names_) throw Error("parameter tensor names do not match the model layout");
  if (tensors.size() != p.tensors_.size()) throw Error("parameter tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].shape != p.tensors_[i].shape || tensors[i].data.size() != p.tensors_[i].size()) {
      throw ShapeError("parameter '" + p.names_[i] + "' has the wrong shape");
    }
    for (double v : tensors[i].data) {
      if (!std::isfinite(v)) throw Error("parameter '" + p.names_[i] + "' is not finite");
    }
  }
  p.tensors_ = std::move(tensors);
  return p;
}

FeaturePair forward_features(const RowMatrix& input, const ModelParams& params) {
  ForwardCache cache;
  forward_impl(input, params, cache);
  return std::move(cache.features);
}

Logits classify(const FeaturePair& features, const ModelParams& params) {
  const ModelConfig& cfg = params.config();
  if (features.low.size() != cfg.feature_dim_low() || features.high.size() != cfg.feature_dim_high()) {
    throw ShapeError("feature dimensions do not match the classifier");
  }
  const auto& t = params.tensors();
  const Layout lay = layout_of(cfg);
  const std::size_t id = lay.id_weight;
  const std::size_t ag = lay.ag_weight;
  Logits out;
  out.id = ConstMap(t[id].data.data(), cfg.n_sections, cfg.feature_dim_low()) * features.low +
           Eigen::Map<const Eigen::VectorXd>(t[id + 1].data.data(), cfg.n_sections);
  out.ag = ConstMap(t[ag].data.data(), cfg.n_groups, cfg.feature_dim_high()) * features.high +
           Eigen::Map<const Eigen::VectorXd>(t[ag + 1].data.data(), cfg.n_groups);
  return out;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp();
  return e / e.sum();
}

double cross_entropy(const Eigen::VectorXd& logits, int label) {
  if (label < 0 || label >= logits.size()) {
    throw Error("label " + std::to_string(label) + " out of range for " +
                std::to_string(logits.size()) + " classes");
  }
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return std::max(0.0, lse - logits(label));
}

LossBreakdown loss(const Eigen::VectorXd& logits_id, const Eigen::VectorXd& logits_ag,
                   int id_label, int ag_label, double lambda) {
  check_lambda(lambda);
  LossBreakdown out;
  out.loss_id = cross_entropy(logits_id, id_label);
  out.loss_ag = cross_entropy(logits_ag, ag_label);
  out.loss_total = lambda * out.loss_id + (1.0 - lambda) * out.loss_ag;
  return out;
}

BatchGradient batch_gradient(const ModelParams& params,
                             std::span<const TrainingExample* const> batch, double lambda,
                             int jobs) {
  check_lambda(lambda);
  if (batch.empty()) throw Error("empty batch");
  std::vector<SampleResult> results(batch.size());
  const auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) results[i] = sample_gradient(params, *batch[i], lambda);
  };
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1, batch.size());
  if (workers == 1) {
    run(0, batch.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (batch.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(batch.size(), begin + chunk);
      if (begin < end) pool.emplace_back(run, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  BatchGradient out;
  out.grads = zero_grads(params);
  double sum_id = 0.0;
  double sum_ag = 0.0;
  for (const auto& r : results) {
    sum_id += r.loss.loss_id;
    sum_ag += r.loss.loss_ag;
    for (std::size_t k = 0; k < out.grads.size(); ++k) {
      auto& dst = out.grads[k].data;
      const auto& src = r.grads[k].data;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (auto& g : out.grads) {
    for (double& v : g.data) v *= inv;
  }
  out.loss.loss_id = sum_id * inv;
  out.loss.loss_ag = sum_ag * inv;
  out.loss.loss_total = lambda * out.loss.loss_id + (1.0 - lambda) * out.loss.loss_ag;
  return out;
}

LossBreakdown batch_loss(const ModelParams& params, std::span<const TrainingExample* const> batch,
                         double lambda) {
  check_lambda(lambda);
  if (batch.empty()) throw Error("empty batch");
  double sum_id = 0.0;
  double sum_ag = 0.0;
  for (const TrainingExample* ex : batch) {
    const Logits logits = classify(forward_features(ex->input, params), params);
    const LossBreakdown l = loss(logits.id, logits.ag, ex->labels.id_label, ex->labels.ag_label, lambda);
    sum_id += l.loss_id;
    sum_ag += l.loss_ag;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  LossBreakdown out;
  out.loss_id = sum_id * inv;
  out.loss_ag = sum_ag * inv;
  out.loss_total = lambda * out.loss_id + (1.0 - lambda) * out.loss_ag;
  return out;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(lr > 0.0) || !(lr_min >= 0.0) || lr_min > lr) {
    throw ConfigError("learning rates must satisfy 0 <= lr_min <= lr, lr > 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be positive");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
}

std::string TrainConfig::canonical_json() const {
  nlohmann::ordered_json j;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["lr_min"] = lr_min;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_epsilon"] = adam_epsilon;
  j["seed"] = seed;
  return j.dump();
}

double cosine_lr(const TrainConfig& c, int epoch) {
  return c.lr_min + 0.5 * (c.lr - c.lr_min) *
                        (1.0 + std::cos(std::numbers::pi * epoch / static_cast<double>(c.epochs)));
}

TrainResult train(std::span<const TrainingExample> corpus, const LabelSpace& space,
                  const ModelConfig& model_config, const TrainConfig& train_config,
                  const EpochCallback& on_epoch) {
  model_config.validate();
  train_config.validate();
  if (corpus.empty()) throw Error("cannot train on an empty corpus");
  if (model_config.n_sections != space.num_sections() || model_config.n_groups != space.num_groups()) {
    throw Error("model label sizes (" + std::to_string(model_config.n_sections) + " sections, " +
                std::to_string(model_config.n_groups) + " groups) do not match the label space (" +
                std::to_string(space.num_sections()) + ", " + std::to_string(space.num_groups()) + ")");
  }
  for (const auto& ex : corpus) {
    const auto [id, ag] = ex.labels;
    if (id < 0 || id >= space.num_sections() || ag < 0 || ag >= space.num_groups() ||
        space.section_of_group(ag) != space.sections()[static_cast<std::size_t>(id)]) {
      throw Error("training labels (" + std::to_string(id) + ", " + std::to_string(ag) +
                  ") are inconsistent with the label space");
    }
  }

  const double lambda = model_config.effective_lambda();
  TrainResult result;
  result.params = ModelParams::initialize(model_config, train_config.seed);
  auto& params = result.params.tensors();

  std::vector<Tensor> m;
  std::vector<Tensor> v;
  for (const auto& t : params) {
    m.push_back(Tensor::zeros(t.shape));
    v.push_back(Tensor::zeros(t.shape));
  }

  Rng rng(train_config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const double b1 = train_config.beta1;
  const double b2 = train_config.beta2;
  long step = 0;
  std::vector<const TrainingExample*> batch;
  for (int epoch = 0; epoch < train_config.epochs; ++epoch) {
    const double lr = cosine_lr(train_config, epoch);
    rng.shuffle(std::span<std::size_t>(order));
    double sum_id = 0.0;
    double sum_ag = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(train_config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(train_config.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(&corpus[order[i]]);
      const BatchGradient bg = batch_gradient(result.params, batch, lambda, train_config.jobs);
      sum_id += bg.loss.loss_id * static_cast<double>(batch.size());
      sum_ag += bg.loss.loss_ag * static_cast<double>(batch.size());

      ++step;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k].data;
        auto& mk = m[k].data;
        auto& vk = v[k].data;
        const auto& g = bg.grads[k].data;
        for (std::size_t i = 0; i < p.size(); ++i) {
          mk[i] = b1 * mk[i] + (1.0 - b1) * g[i];
          vk[i] = b2 * vk[i] + (1.0 - b2) * g[i] * g[i];
          p[i] -= lr * (mk[i] / c1) / (std::sqrt(vk[i] / c2) + train_config.adam_epsilon);
        }
      }
    }
    EpochLog log;
    log.epoch = epoch;
    log.loss_id = sum_id / static_cast<double>(corpus.size());
    log.loss_ag = sum_ag / static_cast<double>(corpus.size());
    log.loss_total = lambda * log.loss_id + (1.0 - lambda) * log.loss_ag;
    log.lr = lr;
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

void write_training_log(const std::filesystem::path& file, const std::vector<EpochLog>& log) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write training log " + file.string());
  out << "epoch,loss_id,loss_ag,loss_total,lr\n";
  out << std::setprecision(17);
  for (const auto& e : log) {
    out << e.epoch << ',' << e.loss_id << ',' << e.loss_ag << ',' << e.loss_total << ',' << e.lr << '\n';
  }
  if (!out) throw IoError("failed writing training log " + file.string());
}

GradientCheckResult gradient_check(const ModelParams& params,
                                   std::span<const TrainingExample* const> batch, double lambda,
                                   double epsilon) {
  const BatchGradient analytic = batch_gradient(params, batch, lambda);
  GradientCheckResult result;
  ModelParams probe = params;
  for (std::size_t k = 0; k < probe.tensors().size(); ++k) {
    auto& data = probe.tensors()[k].data;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + epsilon;
      const double up = batch_loss(probe, batch, lambda).loss_total;
      data[i] = saved - epsilon;
      const double down = batch_loss(probe, batch, lambda).loss_total;
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic.grads[k].data[i];
      const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-6);
      ++result.entries_checked;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_parameter = probe.names()[k] + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace hmic
