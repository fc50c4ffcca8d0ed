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

// Landmark-prior branch: per-region convex-hull masks, a convolutional
// backbone, and mask-modulated region tokens.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dfa/data_pipeline.hpp"

namespace dfa {

struct RegionSpec {
  std::string name;
  std::vector<int> landmark_indices;
};

/// Seven regions over the 81-point layout: the 68-point semantic groups
/// (eyebrows 17-26, nose 27-35, eyes 36-47, lips 48-67) plus points 68-80
/// as the forehead.
std::vector<RegionSpec> default_regions();

/// JSON object: region name -> list of landmark indices.
std::vector<RegionSpec> parse_regions(const std::string& json_text);
std::vector<RegionSpec> load_regions(const std::filesystem::path& path);
std::string regions_to_json(const std::vector<RegionSpec>& regions);
void validate_regions(const std::vector<RegionSpec>& regions);

// ---------------------------------------------------------------------------
// Mask geometry

/// Counter-clockwise hull (monotone chain) without collinear points.
std::vector<Point> convex_hull(std::vector<Point> points);

struct HardMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> cells;  // row-major, 1 = inside
  bool degenerate = false;

  std::uint8_t at(int row, int col) const {
    return cells[static_cast<std::size_t>(row) * static_cast<std::size_t>(width) + static_cast<std::size_t>(col)];
  }
  std::int64_t area() const;
};

/// Marks every cell whose center lies in the convex hull of `points` (grid
/// coordinates, cell (r, c) spans [c, c+1) x [r, r+1)). Collinear or
/// single-point input, or a hull that covers no cell center, falls back to
/// the one cell containing the points' centroid.
HardMask rasterize_hull(const std::vector<Point>& points, int grid_h, int grid_w);

/// Separable Gaussian blur (zero padding, radius ceil(3 sigma)) followed by
/// renormalization to a maximum of 1.
std::vector<float> smooth_mask(const HardMask& mask, double sigma);

/// Hard masks for one sample's landmarks (image pixel coordinates).
std::vector<HardMask> region_hard_masks(const Landmarks& landmarks, const std::vector<RegionSpec>& regions,
                                        int grid_h, int grid_w, int image_size);

/// landmarks [N, 81, 2] in pixels -> masks [N, R, grid_h, grid_w] in [0, 1].
torch::Tensor generate_masks(const torch::Tensor& landmarks, const std::vector<RegionSpec>& regions, int grid_h,
                             int grid_w, int image_size, double sigma = 1.0);

// ---------------------------------------------------------------------------
// Backbones

/// Three stride-2 3x3 convolutions without padding: 64 px in, 7x7 out.
struct MiniConvBackboneImpl : torch::nn::Module {
  explicit MiniConvBackboneImpl(int64_t width = 32);
  torch::Tensor forward(const torch::Tensor& x);
  int64_t out_channels() const { return out_channels_; }

  torch::nn::Sequential features{nullptr};

 private:
  int64_t out_channels_;
};
TORCH_MODULE(MiniConvBackbone);

/// ResNeXt-50 (32x4d) with global pooling and the classifier removed;
/// parameter names follow the common torchvision layout.
struct ResNeXt50BackboneImpl : torch::nn::Module {
  ResNeXt50BackboneImpl();
  torch::Tensor forward(const torch::Tensor& x);
  static constexpr int64_t kOutChannels = 2048;

  torch::nn::Conv2d conv1{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr};
  torch::nn::Sequential layer1{nullptr}, layer2{nullptr}, layer3{nullptr}, layer4{nullptr};
};
TORCH_MODULE(ResNeXt50Backbone);

// ---------------------------------------------------------------------------
// Stream

struct LocalConfig {
  std::string backbone = "resnext50";  // or "mini"
  int mask_grid = 56;
  double smoothing_sigma = 1.0;
  std::vector<RegionSpec> regions = default_regions();

  static LocalConfig miniature();
};

struct LocalFeatures {
  torch::Tensor l_fmp;       // [N, R + 1, D_f]
  torch::Tensor aux_logits;  // [N, 2]
};

struct LocalStreamImpl : torch::nn::Module {
  LocalStreamImpl(LocalConfig config, int image_size, int encoder_dim, int feature_dim);

  const LocalConfig& config() const { return config_; }
  int64_t num_regions() const { return static_cast<int64_t>(config_.regions.size()); }

  torch::Tensor backbone_features(const torch::Tensor& images);

  torch::Tensor generate_masks(const torch::Tensor& landmarks) const;

  /// Region tokens mean(F * mask_r) projected to D_f, one token for the
  /// projected clip_feature, and the auxiliary head on their mean.
  LocalFeatures extract_local_features(const torch::Tensor& images, const torch::Tensor& masks,
                                       const torch::Tensor& clip_feature);

  LocalFeatures forward(const torch::Tensor& images, const torch::Tensor& landmarks,
                        const torch::Tensor& clip_feature);

  torch::nn::Linear region_proj{nullptr};
  torch::nn::Linear clip_proj{nullptr};
  torch::nn::Linear aux_head{nullptr};

 private:
  LocalConfig config_;
  int image_size_;
  torch::nn::AnyModule backbone_;
};
TORCH_MODULE(LocalStream);

}  // namespace dfa
