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

// Pre-norm transformer pieces shared by the encoder, the adapter and the
// fusion classifier. Header-only; the attention here exposes separate query
// and key/value inputs plus an additive logit bias, which the shadow-token
// path needs.

#pragma once

#include <cmath>
#include <limits>
#include <optional>

#include <torch/torch.h>

#include "dfa/error.hpp"

namespace dfa {

enum class Activation { kGelu, kQuickGelu };

inline torch::Tensor activate(const torch::Tensor& x, Activation act) {
  if (act == Activation::kQuickGelu) return x * torch::sigmoid(1.702 * x);
  return torch::gelu(x);
}

/// Multi-head attention with a fused [3D, D] input projection.
struct AttentionImpl : torch::nn::Module {
  AttentionImpl(int64_t dim, int64_t heads) : dim(dim), heads(heads) {
    check(heads > 0 && dim % heads == 0, ErrorKind::kConfig,
          "embed dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) + " heads");
    qkv = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
    proj = register_module("proj", torch::nn::Linear(dim, dim));
  }

  int64_t head_dim() const { return dim / heads; }

  /// Softmax(Q K^T / sqrt(d_k) + bias) per head: [N, H, Lq, Lk]. `bias` must
  /// broadcast to that shape; `key_mask` (bool, true = blocked) likewise.
  torch::Tensor probabilities(const torch::Tensor& query_in, const torch::Tensor& kv_in,
                              const std::optional<torch::Tensor>& bias = std::nullopt,
                              const std::optional<torch::Tensor>& key_mask = std::nullopt) {
    auto q = project(query_in, 0);
    auto k = project(kv_in, 1);
    auto logits = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim()));
    if (bias) logits = logits + *bias;
    if (key_mask) logits = logits.masked_fill(*key_mask, -std::numeric_limits<double>::infinity());
    return torch::softmax(logits, -1);
  }

  /// Attention output after the output projection: [N, Lq, D].
  torch::Tensor attend(const torch::Tensor& query_in, const torch::Tensor& kv_in,
                       const std::optional<torch::Tensor>& bias = std::nullopt,
                       const std::optional<torch::Tensor>& key_mask = std::nullopt) {
    auto probs = probabilities(query_in, kv_in, bias, key_mask);
    auto v = project(kv_in, 2);
    auto out = torch::matmul(probs, v);  // [N, H, Lq, dh]
    const auto n = query_in.size(0);
    const auto lq = query_in.size(1);
    out = out.transpose(1, 2).reshape({n, lq, dim});
    return proj->forward(out);
  }

  torch::Tensor forward(const torch::Tensor& x) { return attend(x, x); }

  /// One of the q/k/v projections split into heads: [N, H, L, dh].
  torch::Tensor project(const torch::Tensor& x, int which) const {
    auto w = qkv->weight.narrow(0, which * dim, dim);
    auto b = qkv->bias.narrow(0, which * dim, dim);
    auto y = torch::nn::functional::linear(x, w, b);
    return y.view({x.size(0), x.size(1), heads, head_dim()}).transpose(1, 2);
  }

  int64_t dim;
  int64_t heads;
  torch::nn::Linear qkv{nullptr};
  torch::nn::Linear proj{nullptr};
};
TORCH_MODULE(Attention);

struct MlpImpl : torch::nn::Module {
  MlpImpl(int64_t dim, int64_t hidden, Activation act) : act(act) {
    fc1 = register_module("fc1", torch::nn::Linear(dim, hidden));
    fc2 = register_module("fc2", torch::nn::Linear(hidden, dim));
  }

  torch::Tensor forward(const torch::Tensor& x) { return fc2->forward(activate(fc1->forward(x), act)); }

  Activation act;
  torch::nn::Linear fc1{nullptr};
  torch::nn::Linear fc2{nullptr};
};
TORCH_MODULE(Mlp);

struct BlockImpl : torch::nn::Module {
  BlockImpl(int64_t dim, int64_t heads, double mlp_ratio, Activation act) {
    norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    attn = register_module("attn", Attention(dim, heads));
    norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    mlp = register_module("mlp", Mlp(dim, static_cast<int64_t>(dim * mlp_ratio), act));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto h = norm1->forward(x);
    auto y = x + attn->attend(h, h);
    return y + mlp->forward(norm2->forward(y));
  }

  torch::nn::LayerNorm norm1{nullptr};
  Attention attn{nullptr};
  torch::nn::LayerNorm norm2{nullptr};
  Mlp mlp{nullptr};
};
TORCH_MODULE(Block);

}  // namespace dfa
