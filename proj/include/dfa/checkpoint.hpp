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

// Flat name -> tensor checkpoint container.
//
// On disk this is the safetensors layout: an 8-byte little-endian header
// length, a JSON header mapping every name to {dtype, shape, data_offsets}
// plus an optional "__metadata__" string map, then the raw little-endian
// tensor bytes in header order. Names are sorted, so identical contents give
// identical files.

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace dfa {

struct TensorStore {
  std::map<std::string, torch::Tensor> tensors;
  std::map<std::string, std::string> metadata;

  bool contains(const std::string& name) const { return tensors.count(name) > 0; }
  const torch::Tensor& at(const std::string& name) const;
  void put(const std::string& name, const torch::Tensor& t);

  /// Copies every entry of `other` under `prefix + name`.
  void merge(const TensorStore& other, const std::string& prefix = "");
  /// Entries whose name starts with `prefix`, with the prefix stripped.
  TensorStore with_prefix(const std::string& prefix) const;
};

std::string serialize_store(const TensorStore& store);
TensorStore deserialize_store(const std::string& bytes);

void save_store(const std::filesystem::path& path, const TensorStore& store);
TensorStore load_store(const std::filesystem::path& path);

/// Parameters and buffers of `module`, detached and cloned.
TensorStore module_state(const torch::nn::Module& module);

/// Assigns every parameter/buffer of `module` from `store`. Missing names are
/// collected into one kLoad error; shape mismatches name the parameter.
/// Values are converted to the destination dtype.
void load_module_state(torch::nn::Module& module, const TensorStore& store);

/// Maps a published CLIP visual-tower name (e.g.
/// "visual.transformer.resblocks.3.attn.in_proj_weight") to the encoder's
/// internal name ("blocks.3.attn.qkv.weight"). Non-visual names yield nullopt.
std::optional<std::string> internal_encoder_name(const std::string& published);

/// Inverse of internal_encoder_name.
std::optional<std::string> published_encoder_name(const std::string& internal);

/// Renames published CLIP keys to internal ones; internal names pass through,
/// everything else (text tower, logit scale, ...) is dropped.
TensorStore canonicalize_encoder_store(const TensorStore& store);

}  // namespace dfa
