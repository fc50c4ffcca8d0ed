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

#include "dfa/model.hpp"

#include <vector>

#include "dfa/error.hpp"

namespace dfa {

void ModelConfig::validate() const {
  encoder.validate();
  adapter.validate(encoder);
  check(feature_dim >= 1, ErrorKind::kConfig, "feature_dim must be positive");
  check(adapter.image_size == encoder.image_size, ErrorKind::kConfig,
        "adapter and encoder must see the same input size");
  validate_regions(local.regions);
  fusion.validate(feature_dim);
}

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.encoder = EncoderConfig::vit_l14();
  c.adapter = AdapterConfig::vit_tiny();
  return c;
}

ModelConfig ModelConfig::miniature() {
  ModelConfig c;
  c.encoder = EncoderConfig::miniature();
  c.adapter = AdapterConfig::miniature();
  c.local = LocalConfig::miniature();
  c.feature_dim = 32;
  return c;
}

std::string Ablation::tag() const {
  return std::string("G") + (global_on ? "1" : "0") + "-L" + (local_on ? "1" : "0") + "-F" + (ifc_on ? "1" : "0");
}

void Ablation::validate() const {
  check(global_on || local_on, ErrorKind::kConfig, "ablation must keep the global or the local stream");
}

DFAModelImpl::DFAModelImpl(ModelConfig config, VisionEncoder encoder)
    : config_(std::move(config)), encoder_(std::move(encoder)) {
  config_.validate();
  check(!encoder_.is_empty(), ErrorKind::kUninitialized, "model needs an encoder");
  const auto& ec = encoder_->config();
  check(ec.embed_dim == config_.encoder.embed_dim && ec.depth == config_.encoder.depth &&
            ec.num_heads == config_.encoder.num_heads && ec.image_size == config_.encoder.image_size,
        ErrorKind::kConfig, "encoder instance does not match the model configuration");
  adapter = register_module("adapter", GlobalAdapter(config_.adapter, config_.encoder, config_.feature_dim));
  local = register_module("local", LocalStream(config_.local, config_.encoder.image_size, config_.encoder.embed_dim,
                                               config_.feature_dim));
  fusion = register_module("fusion", FusionClassifier(config_.fusion, config_.feature_dim));
}

ModelOutput DFAModelImpl::forward(const torch::Tensor& images, const torch::Tensor& landmarks,
                                  const Ablation& ablation) {
  ablation.validate();
  auto taps = encoder_->forward_frozen(images);
  ModelOutput out;
  std::optional<torch::Tensor> g, l;
  if (ablation.global_on) {
    auto adapted = adapter->forward(images, taps);
    auto sls = encoder_->run_shadow(taps, adapted.bias, config_.adapter.num_query_tokens);
    auto features = adapter->produce_global_features(sls, adapted.final_tokens);
    g = features.g_fmp;
    out.global_logits = features.aux_logits;
  }
  if (ablation.local_on) {
    auto features = local->forward(images, landmarks, taps.final_cls);
    l = features.l_fmp;
    out.local_logits = features.aux_logits;
  }
  if (ablation.ifc_on) {
    auto pred = fusion->fuse_and_classify(g, l);
    out.fused_logits = pred.logits;
    out.pooled = pred.pooled;
    out.score = pred.score;
  } else {
    std::vector<torch::Tensor> scores;
    if (out.global_logits) scores.push_back(fake_score(*out.global_logits));
    if (out.local_logits) scores.push_back(fake_score(*out.local_logits));
    out.score = torch::stack(scores).mean(0);
  }
  return out;
}

}  // namespace dfa
