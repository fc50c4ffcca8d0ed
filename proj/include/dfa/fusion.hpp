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

// Joint transformer over the concatenated global and local token sequences,
// followed by mean pooling and a two-way head.

#pragma once

#include <optional>

#include <torch/torch.h>

#include "dfa/transformer.hpp"

namespace dfa {

struct FusionConfig {
  int depth = 2;
  int num_heads = 4;
  double mlp_ratio = 4.0;

  void validate(int feature_dim) const;
};

struct Prediction {
  torch::Tensor logits;  // [N, 2]
  torch::Tensor score;   // [N], softmax probability of the fake class
  torch::Tensor pooled;  // [N, D_f], mean-pooled fused tokens
};

/// Score of the fake class from two-way logits.
inline torch::Tensor fake_score(const torch::Tensor& logits) { return torch::softmax(logits, -1).select(-1, 1); }

struct FusionClassifierImpl : torch::nn::Module {
  FusionClassifierImpl(FusionConfig config, int feature_dim);

  const FusionConfig& config() const { return config_; }

  /// Either stream may be absent (ablation); at least one is required.
  /// Stream-identity embeddings are added before the blocks.
  Prediction fuse_and_classify(const std::optional<torch::Tensor>& g, const std::optional<torch::Tensor>& l);

  torch::Tensor stream_embed;  // [2, D_f]: row 0 global, row 1 local
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::LayerNorm norm{nullptr};
  torch::nn::Linear head{nullptr};

 private:
  FusionConfig config_;
  int feature_dim_;
};
TORCH_MODULE(FusionClassifier);

}  // namespace dfa
