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

// Global feature adapter: a small trainable ViT that runs beside the frozen
// encoder, absorbs its intermediate features, and produces the attention
// bias that steers the encoder's shadow tokens.
//
// Adapter token layout is [query_1 .. query_LQ, patch_1 .. patch_Ta].

#pragma once

#include <vector>

#include <torch/torch.h>

#include "dfa/encoder.hpp"
#include "dfa/transformer.hpp"

namespace dfa {

struct AdapterConfig {
  int depth = 12;
  int embed_dim = 192;
  int num_heads = 3;
  int patch_size = 16;
  int image_size = 224;
  double mlp_ratio = 4.0;
  int num_query_tokens = 4;
  int mlp_out_dim = 8;
  int num_bias_heads = 16;
  std::vector<int> fuse_in_layers{1, 2, 3};
  std::vector<int> source_tap_layers{1, 8, 15};
  /// Q_attn / V_attn are read after this many blocks.
  int bias_after_layer = 3;
  /// Feed the raw image through the adapter's own patch embedding.
  bool use_image = true;

  int grid() const { return image_size / patch_size; }
  int num_patch_tokens() const { return grid() * grid(); }
  void validate(const EncoderConfig& encoder) const;

  /// ViT-Tiny sized adapter for the ViT-L/14 encoder.
  static AdapterConfig vit_tiny();
  /// Matches EncoderConfig::miniature().
  static AdapterConfig miniature();
};

struct GlobalFeatures {
  torch::Tensor g_fmp;       // [N, L_Q + Ta, D_f]
  torch::Tensor aux_logits;  // [N, 2]
};

struct AdapterOutput {
  torch::Tensor bias;          // [N, H, L_Q, h_e, w_e] on the encoder grid
  torch::Tensor final_tokens;  // [N, Ta, D_a] adapter patch tokens after the last block
};

struct GlobalAdapterImpl : torch::nn::Module {
  GlobalAdapterImpl(AdapterConfig config, const EncoderConfig& encoder, int feature_dim);

  const AdapterConfig& config() const { return config_; }

  /// Initial adapter tokens [N, L_Q + Ta, D_a].
  torch::Tensor embed(const torch::Tensor& images);

  /// Tap i ([N, T, D_enc]) reshaped to a map, projected by the i-th 1x1
  /// convolution and resampled to the adapter grid: [N, D_a, h_a, w_a].
  torch::Tensor project_tap(const torch::Tensor& tap, std::size_t index);

  /// Adds every tap routed into adapter layer `adapter_layer` (1-based) to the
  /// patch part of `states`.
  torch::Tensor fuse_multilevel(const EncoderTapSet& taps, const torch::Tensor& states, int adapter_layer);

  /// B[n,a,q,i,j] = sum_d Q'[n,q,a,d] * V'[n,a,d,i,j] after the two MLPs.
  /// q_attn [N, L_Q, D_a], v_attn [N, D_a, h, w] -> [N, H, L_Q, h, w].
  torch::Tensor compute_bias(const torch::Tensor& q_attn, const torch::Tensor& v_attn);

  /// The contraction alone: q_proj [N, L_Q, H, D_out], v_proj [N, H, D_out, h, w].
  static torch::Tensor contract_bias(const torch::Tensor& q_proj, const torch::Tensor& v_proj);

  torch::Tensor project_queries(const torch::Tensor& q_attn);  // [N, L_Q, H, D_out]
  torch::Tensor project_visual(const torch::Tensor& v_attn);   // [N, H, D_out, h, w]

  /// Full adapter pass: fusion, bias (resampled to the encoder grid), and the
  /// remaining blocks.
  AdapterOutput forward(const torch::Tensor& images, const EncoderTapSet& taps);

  /// Projects shadow states and adapter tokens to D_f, concatenates them along
  /// the sequence axis and attaches the auxiliary 2-way head.
  GlobalFeatures produce_global_features(const torch::Tensor& final_sls, const torch::Tensor& final_tokens);

  torch::nn::Conv2d patch_embed{nullptr};
  torch::Tensor pos_embed;
  torch::Tensor query_embed;
  torch::nn::ModuleList fuse_proj{nullptr};
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::LayerNorm norm{nullptr};
  torch::nn::Sequential q_mlp{nullptr};
  torch::nn::Sequential v_mlp{nullptr};
  torch::nn::Linear sls_proj{nullptr};
  torch::nn::Linear token_proj{nullptr};
  torch::nn::Linear aux_head{nullptr};

 private:
  AdapterConfig config_;
  int encoder_grid_;
  int encoder_dim_;
};
TORCH_MODULE(GlobalAdapter);

}  // namespace dfa
