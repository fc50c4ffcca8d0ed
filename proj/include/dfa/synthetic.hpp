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

// Procedural faces for tests and desk-scale runs. Fake samples carry a
// high-frequency checkerboard inside the eye and lip hulls; real samples are
// smooth. The two classes are separable by construction.

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "dfa/data_pipeline.hpp"

namespace dfa {

/// 81 points in the unit square: 68-point layout plus 13 forehead points.
const Landmarks& face_template();

struct SyntheticFace {
  cv::Mat image;  // CV_8UC3 BGR, size x size
  Landmarks landmarks{};
};

SyntheticFace render_synthetic_face(std::mt19937_64& rng, int size, Label label);

/// n samples (labels alternate real, fake), one frame per pseudo-video.
SampleSet make_synthetic_samples(int n, int size, std::uint64_t seed, const Normalization& norm = {});

struct SyntheticDatasetOptions {
  int videos_per_class = 4;
  int frames_per_video = 4;
  int frame_size = 96;
  int face_size = 64;
  std::uint64_t seed = 706;
};

/// Writes <root>/{real,fake}/<video>/frame_NNN.png with a detections.jsonl
/// sidecar per video (the primary face plus a smaller distractor).
void write_synthetic_raw_dataset(const std::filesystem::path& root, const SyntheticDatasetOptions& options);

}  // namespace dfa
