// Copyright 2026 The DFA Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Multi-task optimization of the trainable modules with learnable loss
// weights, checkpoint bundles, scoring and the module ablation.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dfa/checkpoint.hpp"
#include "dfa/data_pipeline.hpp"
#include "dfa/metrics.hpp"
#include "dfa/model.hpp"

namespace dfa {

/// Effective weight w_i = softplus(raw_i); raw starts at log(e - 1) so every
/// weight starts at 1.
struct LossWeightsImpl : torch::nn::Module {
  LossWeightsImpl();
  torch::Tensor effective() const;  // [3]: global, local, fusion

  torch::Tensor raw_global, raw_local, raw_fusion;
};
TORCH_MODULE(LossWeights);

struct StreamLosses {
  std::optional<torch::Tensor> global;  // loss_1
  std::optional<torch::Tensor> local;   // loss_2
  std::optional<torch::Tensor> fusion;  // loss_3
};

/// Two-class cross-entropy of each active head against the labels.
StreamLosses stream_losses(const ModelOutput& output, const torch::Tensor& labels);

/// Weighted sum over the active terms; absent terms contribute nothing.
/// Raises kNumerical on a non-finite result.
torch::Tensor total_loss(const StreamLosses& losses, const LossWeightsImpl& weights);

struct TrainConfig {
  double lr = 2e-6;
  int batch_size = 32;
  int epochs = 6;
  std::uint64_t seed = 706;
  /// Stop after this many optimizer steps in total (0 = no limit).
  int max_steps = 0;
  Ablation ablation;

  void validate() const;
};

struct StepRecord {
  int step = 0;
  int epoch = 0;
  std::optional<double> loss_global, loss_local, loss_fusion;
  double loss_total = 0.0;
  std::array<double, 3> weights{};
};

struct EpochRecord {
  int epoch = 0;
  int steps = 0;
  std::optional<double> loss_global, loss_local, loss_fusion;  // epoch means
  double loss_total = 0.0;
  std::array<double, 3> weights{};
  double train_accuracy = 0.0;
  std::optional<double> val_auc, val_eer;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  int total_steps = 0;
  int best_epoch = -1;
  double final_train_accuracy = 0.0;
};

/// Everything needed to resume or evaluate: trainable modules, loss weights,
/// optimizer moments and bookkeeping metadata. Never holds encoder weights.
struct CheckpointMeta {
  int epoch = 0;
  std::string config_hash;
  std::string encoder_checkpoint;
};

class Trainer {
 public:
  Trainer(DFAModel model, TrainConfig config);

  DFAModel& model() { return model_; }
  LossWeights& loss_weights() { return weights_; }
  torch::optim::Adam& optimizer() { return *optimizer_; }

  /// The optimizer's parameters: adapter, local stream, fusion, loss weights.
  std::vector<torch::Tensor> trainable_parameters();

  /// One optimizer step on a batch.
  StepRecord step(const SampleSet& batch);

  /// Full run. Callbacks receive each step and epoch record as they happen.
  /// When `out_dir` is set, best.safetensors and last.safetensors are written
  /// there (best by validation AUC, else by train accuracy).
  TrainResult train(const SampleSet& train_set, const SampleSet* val_set,
                    const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                    const std::function<void(const StepRecord&)>& on_step = {},
                    const std::function<void(const EpochRecord&)>& on_epoch = {},
                    const CheckpointMeta& meta = {});

  TensorStore bundle(const CheckpointMeta& meta) const;
  /// Restores modules, loss weights and optimizer state; returns the metadata.
  CheckpointMeta restore(const TensorStore& store);

 private:
  DFAModel model_;
  TrainConfig config_;
  LossWeights weights_;
  std::unique_ptr<torch::optim::Adam> optimizer_;
  std::vector<std::pair<std::string, torch::Tensor>> named_params_;
  int step_count_ = 0;
};

/// Loads only the module part of a bundle (adapter, local, fusion).
void load_model_bundle(DFAModelImpl& model, const TensorStore& store);

struct ScoredSamples {
  ScoreTable table;
  torch::Tensor pooled;  // [M, D_f] when the fusion head is on
};

/// Eval-mode, no-grad scoring in batches.
ScoredSamples score_samples(DFAModelImpl& model, const SampleSet& samples, const Ablation& ablation,
                            int batch_size = 32);

/// The four toggle patterns in report order: no global, no local, no fusion
/// head, full model.
std::vector<Ablation> ablation_patterns();

/// Builds a fresh model per pattern (same seed), trains it and scores the
/// evaluation set.
std::vector<AblationRow> ablate(const TrainConfig& base,
                                const std::function<DFAModel()>& make_model, const SampleSet& train_set,
                                const SampleSet& eval_set);

}  // namespace dfa
