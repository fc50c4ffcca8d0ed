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

#include "dfa/global_adapter.hpp"

#include <algorithm>

#include "dfa/error.hpp"

namespace F = torch::nn::functional;

namespace dfa {

void AdapterConfig::validate(const EncoderConfig& encoder) const {
  check(depth >= 1 && embed_dim >= 1 && num_heads >= 1 && patch_size >= 1, ErrorKind::kConfig,
        "adapter dimensions must be positive");
  check(image_size % patch_size == 0, ErrorKind::kConfig, "adapter image_size must divide by patch_size");
  check(num_query_tokens >= 1 && mlp_out_dim >= 1, ErrorKind::kConfig,
        "adapter needs num_query_tokens >= 1 and mlp_out_dim >= 1");
  check(fuse_in_layers.size() == source_tap_layers.size(), ErrorKind::kConfig,
        "fuse_in_layers and source_tap_layers must have the same length");
  check(num_bias_heads == encoder.num_heads, ErrorKind::kConfig,
        "adapter num_bias_heads (" + std::to_string(num_bias_heads) + ") must equal encoder heads (" +
            std::to_string(encoder.num_heads) + ")");
  check(bias_after_layer >= 1 && bias_after_layer <= depth, ErrorKind::kConfig,
        "bias_after_layer outside [1, depth]");
  for (int l : fuse_in_layers) {
    check(l >= 1 && l <= depth, ErrorKind::kConfig, "fuse_in layer " + std::to_string(l) + " outside [1, depth]");
  }
  for (int l : source_tap_layers) {
    check(encoder.tap_layers.count(l) > 0, ErrorKind::kConfig,
          "source tap layer " + std::to_string(l) + " is not an encoder tap layer");
  }
}

AdapterConfig AdapterConfig::vit_tiny() { return AdapterConfig{}; }

AdapterConfig AdapterConfig::miniature() {
  AdapterConfig c;
  c.depth = 4;
  c.embed_dim = 32;
  c.num_heads = 4;
  c.patch_size = 16;
  c.image_size = 64;
  c.num_bias_heads = 4;
  c.source_tap_layers = {1, 2, 3};
  return c;
}

GlobalAdapterImpl::GlobalAdapterImpl(AdapterConfig config, const EncoderConfig& encoder, int feature_dim)
    : config_(std::move(config)), encoder_grid_(encoder.grid()), encoder_dim_(encoder.embed_dim) {
  config_.validate(encoder);
  const int64_t d = config_.embed_dim;
  const int64_t hidden = 2 * config_.mlp_out_dim;
  const int64_t out = static_cast<int64_t>(config_.num_bias_heads) * config_.mlp_out_dim;

  patch_embed = register_module(
      "patch_embed", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, d, config_.patch_size).stride(config_.patch_size)));
  pos_embed = register_parameter("pos_embed", torch::randn({config_.num_patch_tokens(), d}) * 0.02);
  query_embed = register_parameter("query_embed", torch::randn({config_.num_query_tokens, d}) * 0.02);
  fuse_proj = register_module("fuse_proj", torch::nn::ModuleList());
  for (std::size_t i = 0; i < config_.fuse_in_layers.size(); ++i) {
    fuse_proj->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(encoder_dim_, d, 1)));
  }
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int i = 0; i < config_.depth; ++i) {
    blocks->push_back(Block(d, config_.num_heads, config_.mlp_ratio, Activation::kGelu));
  }
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  q_mlp = register_module("q_mlp", torch::nn::Sequential(torch::nn::Linear(d, hidden), torch::nn::GELU(),
                                                         torch::nn::Linear(hidden, out)));
  v_mlp = register_module("v_mlp", torch::nn::Sequential(torch::nn::Linear(d, hidden), torch::nn::GELU(),
                                                         torch::nn::Linear(hidden, out)));
  sls_proj = register_module("sls_proj", torch::nn::Linear(encoder_dim_, feature_dim));
  token_proj = register_module("token_proj", torch::nn::Linear(d, feature_dim));
  aux_head = register_module("aux_head", torch::nn::Linear(feature_dim, 2));
}

torch::Tensor GlobalAdapterImpl::embed(const torch::Tensor& images) {
  check(images.dim() == 4 && images.size(2) == config_.image_size && images.size(3) == config_.image_size,
        ErrorKind::kShape, "adapter expects images of size " + std::to_string(config_.image_size));
  const auto n = images.size(0);
  torch::Tensor patches;
  if (config_.use_image) {
    patches = patch_embed->forward(images).flatten(2).transpose(1, 2) + pos_embed.unsqueeze(0);
  } else {
    patches = pos_embed.unsqueeze(0).expand({n, -1, -1});
  }
  auto queries = query_embed.unsqueeze(0).expand({n, -1, -1});
  return torch::cat({queries, patches}, 1);
}

torch::Tensor GlobalAdapterImpl::project_tap(const torch::Tensor& tap, std::size_t index) {
  check(index < fuse_proj->size(), ErrorKind::kInvalidArgument, "no fusion projection #" + std::to_string(index));
  check(tap.dim() == 3 && tap.size(1) == static_cast<int64_t>(encoder_grid_) * encoder_grid_ &&
            tap.size(2) == encoder_dim_,
        ErrorKind::kShape, "tap must be [N, T, D_enc], got " + c10::str(tap.sizes()));
  auto map = tap.transpose(1, 2).reshape({tap.size(0), encoder_dim_, encoder_grid_, encoder_grid_});
  auto projected = fuse_proj[index]->as<torch::nn::Conv2dImpl>()->forward(map);
  const int g = config_.grid();
  if (g != encoder_grid_) {
    projected = F::interpolate(projected, F::InterpolateFuncOptions()
                                              .size(std::vector<int64_t>{g, g})
                                              .mode(torch::kBilinear)
                                              .align_corners(false));
  }
  check(projected.size(2) == g && projected.size(3) == g, ErrorKind::kShape,
        "fused tap grid does not match the adapter grid");
  return projected;
}

torch::Tensor GlobalAdapterImpl::fuse_multilevel(const EncoderTapSet& taps, const torch::Tensor& states,
                                                 int adapter_layer) {
  const int64_t lq = config_.num_query_tokens;
  torch::Tensor out = states;
  for (std::size_t i = 0; i < config_.fuse_in_layers.size(); ++i) {
    if (config_.fuse_in_layers[i] != adapter_layer) continue;
    const int src = config_.source_tap_layers[i];
    auto it = taps.taps.find(src);
    check(it != taps.taps.end(), ErrorKind::kShape, "encoder tap for layer " + std::to_string(src) + " missing");
    auto delta = project_tap(it->second.to(states.dtype()), i).flatten(2).transpose(1, 2);  // [N, Ta, D_a]
    auto queries = out.narrow(1, 0, lq);
    auto patches = out.narrow(1, lq, out.size(1) - lq) + delta;
    out = torch::cat({queries, patches}, 1);
  }
  return out;
}

torch::Tensor GlobalAdapterImpl::contract_bias(const torch::Tensor& q_proj, const torch::Tensor& v_proj) {
  check(q_proj.dim() == 4 && v_proj.dim() == 5, ErrorKind::kShape,
        "contract_bias expects q [N, L_Q, H, D_out] and v [N, H, D_out, h, w]");
  check(q_proj.size(0) == v_proj.size(0) && q_proj.size(2) == v_proj.size(1) && q_proj.size(3) == v_proj.size(2),
        ErrorKind::kShape, "contract_bias operand shapes disagree");
  return torch::einsum("nqad,nadij->naqij", {q_proj, v_proj});
}

torch::Tensor GlobalAdapterImpl::project_queries(const torch::Tensor& q_attn) {
  auto q = q_mlp->forward(q_attn);
  return q.view({q_attn.size(0), q_attn.size(1), config_.num_bias_heads, config_.mlp_out_dim});
}

torch::Tensor GlobalAdapterImpl::project_visual(const torch::Tensor& v_attn) {
  const auto n = v_attn.size(0), h = v_attn.size(2), w = v_attn.size(3);
  auto v = v_mlp->forward(v_attn.permute({0, 2, 3, 1}));  // [N, h, w, H * D_out]
  return v.view({n, h, w, config_.num_bias_heads, config_.mlp_out_dim}).permute({0, 3, 4, 1, 2});
}

torch::Tensor GlobalAdapterImpl::compute_bias(const torch::Tensor& q_attn, const torch::Tensor& v_attn) {
  check(q_attn.dim() == 3 && v_attn.dim() == 4 && q_attn.size(2) == v_attn.size(1), ErrorKind::kShape,
        "compute_bias expects q_attn [N, L_Q, D] and v_attn [N, D, h, w]");
  auto bias = contract_bias(project_queries(q_attn), project_visual(v_attn));
  check(torch::isfinite(bias).all().item<bool>(), ErrorKind::kNumerical,
        "non-finite attention bias after adapter layer " + std::to_string(config_.bias_after_layer));
  return bias;
}

AdapterOutput GlobalAdapterImpl::forward(const torch::Tensor& images, const EncoderTapSet& taps) {
  const int64_t lq = config_.num_query_tokens;
  const int g = config_.grid();
  auto x = embed(images);
  torch::Tensor bias;
  for (int layer = 1; layer <= config_.depth; ++layer) {
    x = fuse_multilevel(taps, x, layer);
    x = blocks[static_cast<std::size_t>(layer - 1)]->as<BlockImpl>()->forward(x);
    if (layer == config_.bias_after_layer) {
      auto q_attn = x.narrow(1, 0, lq);
      auto v_attn = x.narrow(1, lq, x.size(1) - lq).transpose(1, 2).reshape({x.size(0), x.size(2), g, g});
      bias = compute_bias(q_attn, v_attn);
    }
  }
  if (g != encoder_grid_) {
    const auto n = bias.size(0), h = bias.size(1);
    auto flat = bias.reshape({n, h * lq, g, g});
    flat = F::interpolate(flat, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{encoder_grid_, encoder_grid_})
                                    .mode(torch::kBilinear)
                                    .align_corners(false));
    bias = flat.reshape({n, h, lq, encoder_grid_, encoder_grid_});
  }
  auto tokens = norm->forward(x).narrow(1, lq, x.size(1) - lq);
  return {bias, tokens};
}

GlobalFeatures GlobalAdapterImpl::produce_global_features(const torch::Tensor& final_sls,
                                                          const torch::Tensor& final_tokens) {
  check(final_sls.dim() == 3 && final_sls.size(2) == encoder_dim_, ErrorKind::kShape,
        "final_sls must be [N, L_Q, D_enc]");
  check(final_tokens.dim() == 3 && final_tokens.size(2) == config_.embed_dim, ErrorKind::kShape,
        "adapter tokens must be [N, Ta, D_a]");
  auto g = torch::cat({sls_proj->forward(final_sls), token_proj->forward(final_tokens)}, 1);
  return {g, aux_head->forward(g.mean(1))};
}

}  // namespace dfa
