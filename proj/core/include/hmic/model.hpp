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

// Dual-head classifier constrained by the section / attribute-group tree.
//
//   input X [n_mels x n_frames]
//   backbone: B blocks of (3x3 conv, per-channel gain, ReLU, 2x2 avg pool)
//   f_l = global pooling of the last backbone map            -> section head
//   head:     one (3x3 conv, gain, ReLU) block on that map
//   f_h = global pooling of the head map                     -> group head
//
// Global pooling is either a learned depthwise kernel spanning the whole map
// (default; keeps where on the mel axis a pattern occurred) or a plain mean.
//
// Both classifiers are linear. Training minimises
//   L = lambda * CE(section) + (1 - lambda) * CE(group)
// and both terms backpropagate through the shared backbone. Everything is f64.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hmic/dsp_frontend.hpp"
#include "hmic/metadata_tree.hpp"

namespace hmic {

enum class Ablation {
  kHmic,           // both heads, weighted by lambda
  kDomainOnly,     // section head only (lambda forced to 1)
  kAttributeOnly,  // group head only (lambda forced to 0)
};

std::string_view to_string(Ablation a);
Ablation parse_ablation(std::string_view text);

enum class Pooling {
  kDepthwise,  // f[c] = sum_{y,x} K[c,y,x] * A[c,y,x]
  kAverage,    // f[c] = mean_{y,x} A[c,y,x]
};

std::string_view to_string(Pooling p);
Pooling parse_pooling(std::string_view text);

struct ModelConfig {
  int n_mels = 128;
  int n_frames = 313;
  std::vector<int> backbone_channels{8, 32, 64};  // last entry is d_l
  int head_channels = 64;                         // d_h
  int n_sections = 1;
  int n_groups = 1;
  double lambda = 0.5;
  Ablation ablation = Ablation::kHmic;
  Pooling pooling = Pooling::kDepthwise;

  // Spatial size of the last backbone map (and of the head map).
  std::pair<int, int> final_map_dims() const;
  int feature_dim_low() const { return backbone_channels.back(); }
  int feature_dim_high() const { return head_channels; }
  // Loss weight on the section head after applying the ablation mode.
  double effective_lambda() const;

  void validate() const;
  std::string canonical_json() const;

  bool operator==(const ModelConfig&) const = default;
};

struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  static Tensor zeros(std::vector<int> shape);
  std::size_t size() const { return data.size(); }

  bool operator==(const Tensor&) const = default;
};

// Named parameter tensors in a fixed order:
//   backbone/<i>/{weight,bias,gain}, [backbone/pool], head/{weight,bias,gain},
//   [head/pool], id/{weight,bias}, ag/{weight,bias}
// Conv weights are [out, in, 3, 3]; depthwise pooling kernels are [C, h, w];
// classifier weights are [classes, dim].
class ModelParams {
 public:
  ModelParams() = default;

  // Weights and biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; gains
  // start at sqrt(6), which keeps activation variance roughly constant
  // through a ReLU layer under that init.
  static ModelParams initialize(const ModelConfig& config, std::uint64_t seed);
  static ModelParams zeros(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }

  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  std::size_t parameter_count() const;

  // Rebuilds params from checkpoint tensors, checking names and shapes.
  static ModelParams from_tensors(const ModelConfig& config, std::vector<std::string> names,
                                  std::vector<Tensor> tensors);

  bool operator==(const ModelParams&) const = default;

 private:
  ModelConfig config_;
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

struct FeaturePair {
  Eigen::VectorXd low;   // f_l [d_l]
  Eigen::VectorXd high;  // f_h [d_h]
};

struct Logits {
  Eigen::VectorXd id;  // [n_sections]
  Eigen::VectorXd ag;  // [n_groups]
};

struct LossBreakdown {
  double loss_id = 0.0;
  double loss_ag = 0.0;
  double loss_total = 0.0;
};

// Inference forward pass. Throws ShapeError when the input does not match
// config (n_mels x n_frames).
FeaturePair forward_features(const RowMatrix& input, const ModelParams& params);

Logits classify(const FeaturePair& features, const ModelParams& params);

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);
// -log softmax(logits)[label]; throws Error when label is out of range.
double cross_entropy(const Eigen::VectorXd& logits, int label);

LossBreakdown loss(const Eigen::VectorXd& logits_id, const Eigen::VectorXd& logits_ag,
                   int id_label, int ag_label, double lambda);

struct TrainingExample {
  RowMatrix input;  // standardised log-Mel
  LabelPair labels;
};

// Mean loss over a batch and its gradient with respect to every parameter
// tensor (same order and shapes as params.tensors()). Per-sample gradients
// are summed in batch order, so the result does not depend on `jobs`.
struct BatchGradient {
  LossBreakdown loss;
  std::vector<Tensor> grads;
};

BatchGradient batch_gradient(const ModelParams& params,
                             std::span<const TrainingExample* const> batch, double lambda,
                             int jobs = 1);
LossBreakdown batch_loss(const ModelParams& params,
                         std::span<const TrainingExample* const> batch, double lambda);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double lr = 1e-4;
  double lr_min = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 1;
  int jobs = 1;

  void validate() const;
  std::string canonical_json() const;
};

// Cosine annealing from lr to lr_min over `epochs`, evaluated per epoch.
double cosine_lr(const TrainConfig& config, int epoch);

struct EpochLog {
  int epoch = 0;
  double loss_id = 0.0;
  double loss_ag = 0.0;
  double loss_total = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Adam with per-epoch cosine annealing; mini-batches are a seeded shuffle of
// the corpus each epoch. Throws Error on an empty corpus and when labels or
// model sizes disagree with the label space.
TrainResult train(std::span<const TrainingExample> corpus, const LabelSpace& space,
                  const ModelConfig& model_config, const TrainConfig& train_config,
                  const EpochCallback& on_epoch = {});

void write_training_log(const std::filesystem::path& file, const std::vector<EpochLog>& log);

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;  // "<tensor>[<flat index>]"
  std::size_t entries_checked = 0;
};

// Compares analytic gradients with central differences
// (L(p + eps) - L(p - eps)) / (2 eps) for every entry of every tensor.
// Relative error is |a - n| / max(|a| + |n|, 1e-6).
GradientCheckResult gradient_check(const ModelParams& params,
                                   std::span<const TrainingExample* const> batch, double lambda,
                                   double epsilon = 1e-5);

}  // namespace hmic
