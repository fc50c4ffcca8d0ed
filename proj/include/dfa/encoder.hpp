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

// Frozen CLIP-style vision transformer with intermediate taps and a
// shadow-token side path.
//
// Token layout inside the encoder is [CLS, vis_1 .. vis_T] (CLIP order).
// The shadow path sees X_full = [vis_1 .. vis_T, CLS, SLS_1 .. SLS_LQ]; the
// attention bias covers the T visual key positions and is zero on the CLS
// and SLS keys. Original tokens never attend to shadow tokens, so the frozen
// computation is exactly the vanilla one.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include <torch/torch.h>

#include "dfa/checkpoint.hpp"
#include "dfa/transformer.hpp"

namespace dfa {

struct EncoderConfig {
  int depth = 24;
  int embed_dim = 1024;
  int num_heads = 16;
  int patch_size = 14;
  int image_size = 224;
  double mlp_ratio = 4.0;
  std::set<int> tap_layers{1, 8, 15};
  std::set<int> inject_layers{13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24};

  int grid() const { return image_size / patch_size; }
  int num_visual_tokens() const { return grid() * grid(); }
  void validate() const;

  /// CLIP ViT-L/14 visual tower at 224 px.
  static EncoderConfig vit_l14();
  /// depth 4, dim 64, 4 heads, patch 16, image 64.
  static EncoderConfig miniature();
};

/// Outputs of one frozen forward pass.
struct EncoderTapSet {
  std::map<int, torch::Tensor> taps;  // layer -> visual tokens [N, T, D]
  torch::Tensor final_cls;            // [N, D], after the output LayerNorm
  torch::Tensor final_visual;         // [N, T, D], last block output
  std::optional<torch::Tensor> final_sls;  // [N, L_Q, D], injection only

  /// Token states [N, 1 + T, D] entering every layer from the first inject
  /// layer on; the shadow pass replays these.
  std::map<int, torch::Tensor> layer_inputs;
};

struct VisionEncoderImpl : torch::nn::Module {
  explicit VisionEncoderImpl(EncoderConfig config);

  const EncoderConfig& config() const { return config_; }
  bool initialized() const { return initialized_; }

  /// Seeded random weights (reference miniature encoder, tests).
  void init_random(std::uint64_t seed);

  /// Accepts published CLIP visual names or internal names; extra tensors are
  /// ignored, missing or misshapen ones raise kLoad.
  void load_checkpoint(const TensorStore& store);
  TensorStore state() const { return module_state(*this); }

  /// Frozen forward over images [N, 3, S, S]. No autograd graph is recorded.
  EncoderTapSet forward_frozen(const torch::Tensor& images);

  /// Bias-guided attention for the shadow tokens at `layer` (1-based):
  /// Softmax(Q(x_sls) K(x_full)^T / sqrt(d_k) + bias) V(x_full), heads merged
  /// and passed through the layer's output projection. Inputs are the
  /// pre-LayerNorm states; bias_flat is [N, H, L_Q, T + 1 + L_Q].
  torch::Tensor shadow_attention_update(const torch::Tensor& x_sls, const torch::Tensor& x_full,
                                        const torch::Tensor& bias_flat, int layer);

  /// The softmax rows behind shadow_attention_update: [N, H, L_Q, T + 1 + L_Q].
  torch::Tensor shadow_attention_weights(const torch::Tensor& x_sls, const torch::Tensor& x_full,
                                         const torch::Tensor& bias_flat, int layer);

  /// Pads a visual-grid bias [N, H, L_Q, h, w] with zeros for the CLS and
  /// shadow key positions: [N, H, L_Q, T + 1 + L_Q].
  torch::Tensor flatten_bias(const torch::Tensor& bias) const;

  /// Runs the shadow tokens through the encoder using the states cached in
  /// `taps`. Shadow tokens start as copies of the CLS token entering the first
  /// inject layer; inject layers add `bias`, later non-inject layers use zero
  /// bias. Returns the final shadow states after the output LayerNorm. The
  /// result is differentiable with respect to `bias`.
  torch::Tensor run_shadow(const EncoderTapSet& taps, const torch::Tensor& bias,
                           int num_shadow_tokens);

  /// forward_frozen followed by run_shadow.
  EncoderTapSet forward_injected(const torch::Tensor& images, const torch::Tensor& bias,
                                 int num_shadow_tokens);

  /// Vanilla block `layer` (1-based) applied to token states [N, L, D].
  torch::Tensor run_block(const torch::Tensor& x, int layer);

  /// Patch embedding + CLS + positions + pre-LayerNorm: [N, 1 + T, D].
  torch::Tensor embed(const torch::Tensor& images);

  torch::nn::Conv2d patch_embed{nullptr};
  torch::Tensor cls_token;
  torch::Tensor pos_embed;
  torch::nn::LayerNorm norm_pre{nullptr};
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::LayerNorm norm_post{nullptr};

 private:
  void freeze();
  BlockImpl& block(int layer);
  void check_bias(const torch::Tensor& bias_flat, int64_t num_shadow) const;

  EncoderConfig config_;
  bool initialized_ = false;
};
TORCH_MODULE(VisionEncoder);

}  // namespace dfa
