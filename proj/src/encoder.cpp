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

#include "dfa/encoder.hpp"

#include <cmath>

#include "dfa/error.hpp"

namespace dfa {

void EncoderConfig::validate() const {
  check(depth >= 1 && embed_dim >= 1 && num_heads >= 1 && patch_size >= 1 && image_size >= 1,
        ErrorKind::kConfig, "encoder dimensions must be positive");
  check(embed_dim % num_heads == 0, ErrorKind::kConfig, "encoder embed_dim must divide by num_heads");
  check(image_size % patch_size == 0, ErrorKind::kConfig,
        "encoder image_size " + std::to_string(image_size) + " not divisible by patch_size " +
            std::to_string(patch_size));
  for (int l : tap_layers) {
    check(l >= 1 && l <= depth, ErrorKind::kConfig, "tap layer " + std::to_string(l) + " outside [1, depth]");
  }
  for (int l : inject_layers) {
    check(l >= 1 && l <= depth, ErrorKind::kConfig,
          "inject layer " + std::to_string(l) + " outside [1, depth]");
  }
}

EncoderConfig EncoderConfig::vit_l14() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::miniature() {
  EncoderConfig c;
  c.depth = 4;
  c.embed_dim = 64;
  c.num_heads = 4;
  c.patch_size = 16;
  c.image_size = 64;
  c.tap_layers = {1, 2, 3};
  c.inject_layers = {3, 4};
  return c;
}

VisionEncoderImpl::VisionEncoderImpl(EncoderConfig config) : config_(std::move(config)) {
  config_.validate();
  const int64_t d = config_.embed_dim;
  patch_embed = register_module(
      "patch_embed",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(3, d, config_.patch_size).stride(config_.patch_size).bias(false)));
  cls_token = register_parameter("cls_token", torch::zeros({d}));
  pos_embed = register_parameter("pos_embed", torch::zeros({config_.num_visual_tokens() + 1, d}));
  norm_pre = register_module("norm_pre", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int i = 0; i < config_.depth; ++i) {
    blocks->push_back(Block(d, config_.num_heads, config_.mlp_ratio, Activation::kQuickGelu));
  }
  norm_post = register_module("norm_post", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  freeze();
}

void VisionEncoderImpl::freeze() {
  for (auto& p : parameters()) p.set_requires_grad(false);
}

void VisionEncoderImpl::init_random(std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = at::detail::createCPUGenerator(seed);
  for (auto& item : named_parameters()) {
    auto& p = item.value();
    const std::string& name = item.key();
    const bool is_norm = name.find("norm") != std::string::npos;
    if (is_norm) {
      if (name.ends_with(".weight")) {
        p.fill_(1.0);
      } else {
        p.zero_();
      }
    } else if (name == "cls_token" || name == "pos_embed") {
      p.normal_(0.0, 0.02, gen);
    } else if (name.ends_with(".bias")) {
      p.normal_(0.0, 0.01, gen);
    } else {
      const double fan_in = static_cast<double>(p.numel() / p.size(0));
      p.normal_(0.0, 1.0 / std::sqrt(fan_in), gen);
    }
  }
  initialized_ = true;
}

void VisionEncoderImpl::load_checkpoint(const TensorStore& store) {
  load_module_state(*this, canonicalize_encoder_store(store));
  freeze();
  initialized_ = true;
}

BlockImpl& VisionEncoderImpl::block(int layer) {
  check(layer >= 1 && layer <= config_.depth, ErrorKind::kConfig,
        "layer " + std::to_string(layer) + " outside [1, " + std::to_string(config_.depth) + "]");
  return *blocks[static_cast<std::size_t>(layer - 1)]->as<BlockImpl>();
}

torch::Tensor VisionEncoderImpl::embed(const torch::Tensor& images) {
  check(initialized_, ErrorKind::kUninitialized, "encoder weights not loaded");
  check(images.dim() == 4 && images.size(1) == 3 && images.size(2) == config_.image_size &&
            images.size(3) == config_.image_size,
        ErrorKind::kShape,
        "encoder expects images [N, 3, " + std::to_string(config_.image_size) + ", " +
            std::to_string(config_.image_size) + "], got " + c10::str(images.sizes()));
  auto x = patch_embed->forward(images);  // [N, D, g, g]
  x = x.flatten(2).transpose(1, 2);       // [N, T, D]
  auto cls = cls_token.view({1, 1, -1}).expand({x.size(0), 1, x.size(2)});
  x = torch::cat({cls, x}, 1) + pos_embed.unsqueeze(0);
  return norm_pre->forward(x);
}

torch::Tensor VisionEncoderImpl::run_block(const torch::Tensor& x, int layer) {
  return block(layer).forward(x);
}

EncoderTapSet VisionEncoderImpl::forward_frozen(const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  EncoderTapSet out;
  auto x = embed(images);
  const int first_inject =
      config_.inject_layers.empty() ? config_.depth + 1 : *config_.inject_layers.begin();
  for (int layer = 1; layer <= config_.depth; ++layer) {
    if (layer >= first_inject) out.layer_inputs[layer] = x;
    x = run_block(x, layer);
    if (config_.tap_layers.count(layer)) out.taps[layer] = x.narrow(1, 1, x.size(1) - 1);
  }
  out.final_visual = x.narrow(1, 1, x.size(1) - 1);
  out.final_cls = norm_post->forward(x.select(1, 0));
  return out;
}

void VisionEncoderImpl::check_bias(const torch::Tensor& bias_flat, int64_t num_shadow) const {
  check(bias_flat.dim() == 4, ErrorKind::kShape, "bias_flat must be [N, H, L_Q, T + 1 + L_Q]");
  check(bias_flat.size(1) == config_.num_heads, ErrorKind::kConfig,
        "bias has " + std::to_string(bias_flat.size(1)) + " heads but the encoder has " +
            std::to_string(config_.num_heads));
  check(bias_flat.size(2) == num_shadow &&
            bias_flat.size(3) == config_.num_visual_tokens() + 1 + num_shadow,
        ErrorKind::kShape, "bias_flat shape " + c10::str(bias_flat.sizes()) + " does not match tokens");
}

torch::Tensor VisionEncoderImpl::shadow_attention_weights(const torch::Tensor& x_sls,
                                                          const torch::Tensor& x_full,
                                                          const torch::Tensor& bias_flat, int layer) {
  check_bias(bias_flat, x_sls.size(1));
  auto& blk = block(layer);
  return blk.attn->probabilities(blk.norm1->forward(x_sls), blk.norm1->forward(x_full), bias_flat);
}

torch::Tensor VisionEncoderImpl::shadow_attention_update(const torch::Tensor& x_sls, const torch::Tensor& x_full,
                                                         const torch::Tensor& bias_flat, int layer) {
  check_bias(bias_flat, x_sls.size(1));
  auto& blk = block(layer);
  return blk.attn->attend(blk.norm1->forward(x_sls), blk.norm1->forward(x_full), bias_flat);
}

torch::Tensor VisionEncoderImpl::flatten_bias(const torch::Tensor& bias) const {
  check(bias.dim() == 5, ErrorKind::kShape, "bias must be [N, H, L_Q, h, w]");
  check(bias.size(1) == config_.num_heads, ErrorKind::kConfig,
        "bias has " + std::to_string(bias.size(1)) + " heads but the encoder has " +
            std::to_string(config_.num_heads));
  check(bias.size(3) * bias.size(4) == config_.num_visual_tokens(), ErrorKind::kShape,
        "bias grid " + std::to_string(bias.size(3)) + "x" + std::to_string(bias.size(4)) +
            " does not cover " + std::to_string(config_.num_visual_tokens()) + " visual tokens");
  const auto n = bias.size(0), h = bias.size(1), lq = bias.size(2);
  auto visual = bias.reshape({n, h, lq, config_.num_visual_tokens()});
  auto zeros = torch::zeros({n, h, lq, 1 + lq}, bias.options());
  return torch::cat({visual, zeros}, -1);
}

torch::Tensor VisionEncoderImpl::run_shadow(const EncoderTapSet& taps, const torch::Tensor& bias,
                                            int num_shadow_tokens) {
  check(num_shadow_tokens >= 1, ErrorKind::kConfig, "need at least one shadow token");
  check(!config_.inject_layers.empty(), ErrorKind::kConfig, "encoder has no inject layers");
  const int first = *config_.inject_layers.begin();
  check(taps.layer_inputs.count(first) > 0, ErrorKind::kInvalidArgument,
        "tap set lacks cached layer inputs; run forward_frozen first");
  auto biased = flatten_bias(bias);
  auto zero_bias = torch::zeros_like(biased);

  const auto& entry = taps.layer_inputs.at(first);
  auto sls = entry.narrow(1, 0, 1).expand({entry.size(0), num_shadow_tokens, entry.size(2)}).clone();
  for (int layer = first; layer <= config_.depth; ++layer) {
    const auto& x = taps.layer_inputs.at(layer);
    auto vis = x.narrow(1, 1, x.size(1) - 1);
    auto cls = x.narrow(1, 0, 1);
    auto full = torch::cat({vis, cls, sls}, 1);
    const auto& b = config_.inject_layers.count(layer) ? biased : zero_bias;
    sls = sls + shadow_attention_update(sls, full, b, layer);
    auto& blk = block(layer);
    sls = sls + blk.mlp->forward(blk.norm2->forward(sls));
  }
  return norm_post->forward(sls);
}

EncoderTapSet VisionEncoderImpl::forward_injected(const torch::Tensor& images, const torch::Tensor& bias,
                                                  int num_shadow_tokens) {
  EncoderTapSet taps = forward_frozen(images);
  taps.final_sls = run_shadow(taps, bias, num_shadow_tokens);
  return taps;
}

}  // namespace dfa
