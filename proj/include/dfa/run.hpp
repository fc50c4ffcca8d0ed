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

// Glue shared by the command-line tool and the tests: building the encoder
// and model from a run configuration, and the feature export.

#pragma once

#include <cstdint>
#include <vector>

#include "dfa/config.hpp"
#include "dfa/metrics.hpp"

namespace dfa {

/// Loads encoder.checkpoint when set, otherwise draws seeded random weights.
VisionEncoder make_encoder(const RunConfig& config);

/// Seeds the global generator with train.seed before building the trainable
/// modules, so equal configs give equal initial weights.
DFAModel make_model(const RunConfig& config, VisionEncoder encoder);

/// Draws n_per_class samples of each label (seeded, without replacement) and
/// returns their fused pooled features, reals first, each class in sample
/// order. Raises kData when a class has fewer than n_per_class samples.
std::vector<FeatureRow> export_features(DFAModelImpl& model, const SampleSet& samples, int n_per_class,
                                        std::uint64_t seed, int batch_size = 32);

}  // namespace dfa
