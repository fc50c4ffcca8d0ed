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

// Run configuration: one TOML file mirroring every module config, loaded over
// built-in defaults, with command-line key=value overrides on top.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dfa/model.hpp"
#include "dfa/training.hpp"

namespace dfa {

struct DataConfig {
  std::string manifest;
  std::string media_root;
  std::string store_root;
  std::string source_dataset = "custom";
  double train_fraction = 0.8;
  std::int64_t split_seed = 706;
  int frames_per_video = 32;
  int frame_stride = 0;
  int crop_size = 256;
};

struct EvalConfig {
  double threshold = 0.5;
  std::string aggregation = "mean";
  int batch_size = 32;
  int n_per_class = 500;
  std::int64_t feature_seed = 706;
};

struct RunConfig {
  std::string preset = "full";  // "full" or "miniature"
  DataConfig data;
  ModelConfig model;
  std::string encoder_checkpoint;  // empty: seeded random encoder
  std::int64_t encoder_seed = 706;
  std::string regions_file;        // empty: built-in regions
  TrainConfig train;
  EvalConfig eval;

  /// Resolved configuration as TOML text; the config hash is taken over it.
  std::string to_toml() const;
  std::string hash() const;
};

/// Defaults for a preset ("full" or "miniature").
RunConfig default_config(const std::string& preset);

/// Parses TOML text over the defaults of its `preset` key, then applies
/// overrides ("section.key=value" or a key name unique across sections).
/// Malformed overrides, unknown keys and ambiguous names raise kUsage; type
/// mismatches raise kConfig.
RunConfig parse_config(const std::string& toml_text, const std::vector<std::string>& overrides = {});
RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Every accepted "section.key" name.
std::vector<std::string> config_keys();

}  // namespace dfa
