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

#include "dfa/fusion.hpp"

#include <vector>

#include "dfa/error.hpp"

namespace dfa {

void FusionConfig::validate(int feature_dim) const {
  check(depth >= 0, ErrorKind::kConfig, "fusion depth must be >= 0");
  check(num_heads >= 1 && feature_dim % num_heads == 0, ErrorKind::kConfig,
        "fusion heads must divide feature_dim " + std::to_string(feature_dim));
}

FusionClassifierImpl::FusionClassifierImpl(FusionConfig config, int feature_dim)
    : config_(config), feature_dim_(feature_dim) {
  config_.validate(feature_dim);
  stream_embed = register_parameter("stream_embed", torch::randn({2, feature_dim}) * 0.02);
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int i = 0; i < config_.depth; ++i) {
    blocks->push_back(Block(feature_dim, config_.num_heads, config_.mlp_ratio, Activation::kGelu));
  }
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({feature_dim})));
  head = register_module("head", torch::nn::Linear(feature_dim, 2));
}

Prediction FusionClassifierImpl::fuse_and_classify(const std::optional<torch::Tensor>& g,
                                                   const std::optional<torch::Tensor>& l) {
  check(g.has_value() || l.has_value(), ErrorKind::kInvalidArgument, "fusion needs at least one stream");
  std::vector<torch::Tensor> parts;
  auto add = [&](const std::optional<torch::Tensor>& t, int64_t stream, const char* name) {
    if (!t) return;
    check(t->dim() == 3 && t->size(2) == feature_dim_, ErrorKind::kShape,
          std::string(name) + " must be [N, T, " + std::to_string(feature_dim_) + "], got " + c10::str(t->sizes()));
    parts.push_back(*t + stream_embed[stream].to(t->dtype()));
  };
  add(g, 0, "G_fmp");
  add(l, 1, "L_fmp");
  if (parts.size() == 2) {
    check(parts[0].size(0) == parts[1].size(0), ErrorKind::kShape, "stream batch sizes differ");
  }
  auto x = torch::cat(parts, 1);
  for (const auto& block : *blocks) x = block->as<BlockImpl>()->forward(x);
  auto pooled = norm->forward(x).mean(1);
  auto logits = head->forward(pooled);
  return {logits, fake_score(logits), pooled};
}

}  // namespace dfa
