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

// Full detector: frozen encoder, global adapter, local stream and fusion
// classifier, with per-stream ablation switches.

#pragma once

#include <optional>
#include <string>

#include <torch/torch.h>

#include "dfa/encoder.hpp"
#include "dfa/fusion.hpp"
#include "dfa/global_adapter.hpp"
#include "dfa/local_stream.hpp"

namespace dfa {

struct ModelConfig {
  EncoderConfig encoder;
  AdapterConfig adapter;
  LocalConfig local;
  FusionConfig fusion;
  int feature_dim = 256;

  void validate() const;

  /// ViT-L/14 encoder, ViT-Tiny adapter, ResNeXt-50 local backbone.
  static ModelConfig full();
  /// Desk-scale configuration used by tests and the synthetic runs.
  static ModelConfig miniature();
};

struct Ablation {
  bool global_on = true;
  bool local_on = true;
  bool ifc_on = true;

  /// "G1-L1-F1" style tag.
  std::string tag() const;
  void validate() const;
};

struct ModelOutput {
  std::optional<torch::Tensor> global_logits;  // aux head of the global stream
  std::optional<torch::Tensor> local_logits;   // aux head of the local stream
  std::optional<torch::Tensor> fused_logits;   // fusion classifier
  std::optional<torch::Tensor> pooled;         // fusion pooled features [N, D_f]
  torch::Tensor score;                         // [N] fake probability
};

/// The encoder is shared, frozen and deliberately not registered as a
/// submodule: parameters() and state() cover only the trainable parts.
struct DFAModelImpl : torch::nn::Module {
  DFAModelImpl(ModelConfig config, VisionEncoder encoder);

  const ModelConfig& config() const { return config_; }
  VisionEncoder& encoder() { return encoder_; }

  /// images [N, 3, S, S] normalized, landmarks [N, 81, 2] in pixels of S.
  ModelOutput forward(const torch::Tensor& images, const torch::Tensor& landmarks, const Ablation& ablation = {});

  GlobalAdapter adapter{nullptr};
  LocalStream local{nullptr};
  FusionClassifier fusion{nullptr};

 private:
  ModelConfig config_;
  VisionEncoder encoder_;
};
TORCH_MODULE(DFAModel);

}  // namespace dfa
