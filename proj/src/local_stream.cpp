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

#include "dfa/local_stream.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dfa/error.hpp"
#include "dfa/log.hpp"

namespace F = torch::nn::functional;

namespace dfa {

namespace {

std::vector<int> index_range(int first, int last) {
  std::vector<int> out;
  for (int i = first; i <= last; ++i) out.push_back(i);
  return out;
}

}  // namespace

std::vector<RegionSpec> default_regions() {
  // Sides are the subject's: 17-21 is the right eyebrow in the 68-point scheme.
  return {
      {"left_eyebrow", index_range(22, 26)},
      {"right_eyebrow", index_range(17, 21)},
      {"left_eye", index_range(42, 47)},
      {"right_eye", index_range(36, 41)},
      {"nose", index_range(27, 35)},
      {"lips", index_range(48, 67)},
      {"forehead", index_range(68, 80)},
  };
}

void validate_regions(const std::vector<RegionSpec>& regions) {
  check(!regions.empty(), ErrorKind::kConfig, "region mapping is empty");
  std::set<std::string> names;
  for (const auto& r : regions) {
    check(!r.name.empty() && names.insert(r.name).second, ErrorKind::kConfig,
          "region names must be unique and non-empty ('" + r.name + "')");
    check(!r.landmark_indices.empty(), ErrorKind::kConfig, "region '" + r.name + "' has no landmarks");
    for (int i : r.landmark_indices) {
      check(i >= 0 && i < kNumLandmarks, ErrorKind::kConfig,
            "region '" + r.name + "' index " + std::to_string(i) + " outside [0, 80]");
    }
  }
}

std::vector<RegionSpec> parse_regions(const std::string& json_text) {
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, std::string("malformed region mapping: ") + e.what());
  }
  check(doc.is_object(), ErrorKind::kConfig, "region mapping must be a JSON object");
  std::vector<RegionSpec> regions;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    check(it.value().is_array(), ErrorKind::kConfig, "region '" + it.key() + "' must map to an index list");
    RegionSpec r{it.key(), {}};
    for (const auto& v : it.value()) {
      check(v.is_number_integer(), ErrorKind::kConfig, "region '" + it.key() + "' has a non-integer index");
      r.landmark_indices.push_back(v.get<int>());
    }
    regions.push_back(std::move(r));
  }
  validate_regions(regions);
  return regions;
}

std::vector<RegionSpec> load_regions(const std::filesystem::path& path) {
  std::ifstream in(path);
  check(in.good(), ErrorKind::kIo, "cannot read region mapping " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_regions(ss.str());
}

std::string regions_to_json(const std::vector<RegionSpec>& regions) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  for (const auto& r : regions) doc[r.name] = r.landmark_indices;
  return doc.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Geometry

namespace {

double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

}  // namespace

std::vector<Point> convex_hull(std::vector<Point> points) {
  std::sort(points.begin(), points.end(),
            [](const Point& a, const Point& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  points.erase(std::unique(points.begin(), points.end(),
                           [](const Point& a, const Point& b) { return a.x == b.x && a.y == b.y; }),
               points.end());
  if (points.size() < 3) return points;
  std::vector<Point> hull(2 * points.size());
  std::size_t k = 0;
  for (const auto& p : points) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = points.size() - 1, lower = k + 1; i-- > 0;) {
    const auto& p = points[i];
    while (k >= lower && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  hull.resize(k - 1);
  return hull;
}

std::int64_t HardMask::area() const {
  return std::count(cells.begin(), cells.end(), std::uint8_t{1});
}

HardMask rasterize_hull(const std::vector<Point>& points, int grid_h, int grid_w) {
  check(grid_h > 0 && grid_w > 0, ErrorKind::kInvalidArgument, "mask grid must be positive");
  check(!points.empty(), ErrorKind::kInvalidArgument, "region has no points");
  HardMask mask;
  mask.height = grid_h;
  mask.width = grid_w;
  mask.cells.assign(static_cast<std::size_t>(grid_h) * static_cast<std::size_t>(grid_w), 0);

  const auto hull = convex_hull(points);
  auto mark_centroid = [&] {
    double cx = 0, cy = 0;
    for (const auto& p : points) {
      cx += p.x;
      cy += p.y;
    }
    cx /= static_cast<double>(points.size());
    cy /= static_cast<double>(points.size());
    const int col = std::clamp(static_cast<int>(std::floor(cx)), 0, grid_w - 1);
    const int row = std::clamp(static_cast<int>(std::floor(cy)), 0, grid_h - 1);
    mask.cells[static_cast<std::size_t>(row) * static_cast<std::size_t>(grid_w) + static_cast<std::size_t>(col)] = 1;
  };
  if (hull.size() < 3) {
    mask.degenerate = true;
    mark_centroid();
    return mask;
  }

  double min_x = hull[0].x, max_x = hull[0].x, min_y = hull[0].y, max_y = hull[0].y;
  for (const auto& p : hull) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  const double eps = 1e-9 * std::max({1.0, max_x - min_x, max_y - min_y});
  const int c0 = std::max(0, static_cast<int>(std::floor(min_x - 0.5)));
  const int c1 = std::min(grid_w - 1, static_cast<int>(std::ceil(max_x - 0.5)));
  const int r0 = std::max(0, static_cast<int>(std::floor(min_y - 0.5)));
  const int r1 = std::min(grid_h - 1, static_cast<int>(std::ceil(max_y - 0.5)));
  bool any = false;
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      const Point center{c + 0.5, r + 0.5};
      bool inside = true;
      for (std::size_t i = 0; i < hull.size() && inside; ++i) {
        inside = cross(hull[i], hull[(i + 1) % hull.size()], center) >= -eps;
      }
      if (inside) {
        mask.cells[static_cast<std::size_t>(r) * static_cast<std::size_t>(grid_w) + static_cast<std::size_t>(c)] = 1;
        any = true;
      }
    }
  }
  if (!any) mark_centroid();
  return mask;
}

std::vector<float> smooth_mask(const HardMask& mask, double sigma) {
  const int h = mask.height, w = mask.width;
  std::vector<double> src(mask.cells.begin(), mask.cells.end());
  if (sigma > 0) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double total = 0;
    for (int i = -radius; i <= radius; ++i) {
      kernel[static_cast<std::size_t>(i + radius)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
      total += kernel[static_cast<std::size_t>(i + radius)];
    }
    for (auto& k : kernel) k /= total;
    auto at = [w](int r, int c) { return static_cast<std::size_t>(r) * static_cast<std::size_t>(w) + static_cast<std::size_t>(c); };
    std::vector<double> tmp(src.size(), 0.0);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        double acc = 0;
        for (int k = -radius; k <= radius; ++k) {
          const int cc = c + k;
          if (cc >= 0 && cc < w) acc += kernel[static_cast<std::size_t>(k + radius)] * src[at(r, cc)];
        }
        tmp[at(r, c)] = acc;
      }
    }
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        double acc = 0;
        for (int k = -radius; k <= radius; ++k) {
          const int rr = r + k;
          if (rr >= 0 && rr < h) acc += kernel[static_cast<std::size_t>(k + radius)] * tmp[at(rr, c)];
        }
        src[at(r, c)] = acc;
      }
    }
  }
  const double peak = *std::max_element(src.begin(), src.end());
  std::vector<float> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    out[i] = peak > 0 ? static_cast<float>(std::clamp(src[i] / peak, 0.0, 1.0)) : 0.0f;
  }
  return out;
}

std::vector<HardMask> region_hard_masks(const Landmarks& landmarks, const std::vector<RegionSpec>& regions,
                                        int grid_h, int grid_w, int image_size) {
  check(image_size > 0, ErrorKind::kInvalidArgument, "image_size must be positive");
  const double sx = static_cast<double>(grid_w) / image_size;
  const double sy = static_cast<double>(grid_h) / image_size;
  std::vector<HardMask> out;
  out.reserve(regions.size());
  for (const auto& region : regions) {
    std::vector<Point> pts;
    pts.reserve(region.landmark_indices.size());
    for (int idx : region.landmark_indices) {
      const auto& p = landmarks[static_cast<std::size_t>(idx)];
      pts.push_back({p.x * sx, p.y * sy});
    }
    out.push_back(rasterize_hull(pts, grid_h, grid_w));
  }
  return out;
}

torch::Tensor generate_masks(const torch::Tensor& landmarks, const std::vector<RegionSpec>& regions, int grid_h,
                             int grid_w, int image_size, double sigma) {
  check(landmarks.dim() == 3 && landmarks.size(1) == kNumLandmarks && landmarks.size(2) == 2, ErrorKind::kShape,
        "landmarks must be [N, 81, 2], got " + c10::str(landmarks.sizes()));
  static std::atomic<bool> warned{false};
  const auto n = landmarks.size(0);
  const auto r = static_cast<int64_t>(regions.size());
  auto lm = landmarks.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  auto acc = lm.accessor<double, 3>();
  auto out = torch::zeros({n, r, grid_h, grid_w}, torch::kFloat32);
  auto out_acc = out.accessor<float, 4>();
  for (int64_t i = 0; i < n; ++i) {
    Landmarks pts{};
    for (int k = 0; k < kNumLandmarks; ++k) pts[static_cast<std::size_t>(k)] = {acc[i][k][0], acc[i][k][1]};
    const auto hard = region_hard_masks(pts, regions, grid_h, grid_w, image_size);
    for (int64_t j = 0; j < r; ++j) {
      const auto& m = hard[static_cast<std::size_t>(j)];
      if (m.degenerate && !warned.exchange(true)) {
        log_warning("degenerate landmark region '" + regions[static_cast<std::size_t>(j)].name +
                    "', using a single-cell mask");
      }
      const auto soft = smooth_mask(m, sigma);
      for (int y = 0; y < grid_h; ++y) {
        for (int x = 0; x < grid_w; ++x) {
          out_acc[i][j][y][x] = soft[static_cast<std::size_t>(y) * static_cast<std::size_t>(grid_w) + static_cast<std::size_t>(x)];
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backbones

MiniConvBackboneImpl::MiniConvBackboneImpl(int64_t width) : out_channels_(2 * width) {
  auto conv = [](int64_t in, int64_t out) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(2).padding(0));
  };
  features = register_module("features", torch::nn::Sequential(conv(3, width), torch::nn::ReLU(),
                                                                conv(width, 2 * width), torch::nn::ReLU(),
                                                                conv(2 * width, 2 * width), torch::nn::ReLU()));
}

torch::Tensor MiniConvBackboneImpl::forward(const torch::Tensor& x) { return features->forward(x); }

namespace {

struct BottleneckImpl : torch::nn::Module {
  BottleneckImpl(int64_t in, int64_t planes, int64_t stride) {
    const int64_t groups = 32;
    const int64_t width = planes * 4 / 64 * groups;
    const int64_t out = planes * 4;
    conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, width, 1).bias(false)));
    bn1 = register_module("bn1", torch::nn::BatchNorm2d(width));
    conv2 = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, width, 3)
                                                           .stride(stride)
                                                           .padding(1)
                                                           .groups(groups)
                                                           .bias(false)));
    bn2 = register_module("bn2", torch::nn::BatchNorm2d(width));
    conv3 = register_module("conv3", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, out, 1).bias(false)));
    bn3 = register_module("bn3", torch::nn::BatchNorm2d(out));
    if (stride != 1 || in != out) {
      downsample = register_module(
          "downsample",
          torch::nn::Sequential(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).stride(stride).bias(false)),
                                torch::nn::BatchNorm2d(out)));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto y = torch::relu(bn1->forward(conv1->forward(x)));
    y = torch::relu(bn2->forward(conv2->forward(y)));
    y = bn3->forward(conv3->forward(y));
    auto identity = downsample ? downsample->forward(x) : x;
    return torch::relu(y + identity);
  }

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, bn3{nullptr};
  torch::nn::Sequential downsample{nullptr};
};
TORCH_MODULE(Bottleneck);

torch::nn::Sequential make_stage(int64_t& in, int64_t planes, int blocks, int64_t stride) {
  torch::nn::Sequential stage;
  for (int i = 0; i < blocks; ++i) {
    stage->push_back(Bottleneck(in, planes, i == 0 ? stride : 1));
    in = planes * 4;
  }
  return stage;
}

}  // namespace

ResNeXt50BackboneImpl::ResNeXt50BackboneImpl() {
  conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, 64, 7).stride(2).padding(3).bias(false)));
  bn1 = register_module("bn1", torch::nn::BatchNorm2d(64));
  int64_t in = 64;
  layer1 = register_module("layer1", make_stage(in, 64, 3, 1));
  layer2 = register_module("layer2", make_stage(in, 128, 4, 2));
  layer3 = register_module("layer3", make_stage(in, 256, 6, 2));
  layer4 = register_module("layer4", make_stage(in, 512, 3, 2));
}

torch::Tensor ResNeXt50BackboneImpl::forward(const torch::Tensor& x) {
  auto y = torch::relu(bn1->forward(conv1->forward(x)));
  y = torch::max_pool2d(y, 3, 2, 1);
  return layer4->forward(layer3->forward(layer2->forward(layer1->forward(y))));
}

// ---------------------------------------------------------------------------
// Stream

LocalConfig LocalConfig::miniature() {
  LocalConfig c;
  c.backbone = "mini";
  c.mask_grid = 16;
  return c;
}

LocalStreamImpl::LocalStreamImpl(LocalConfig config, int image_size, int encoder_dim, int feature_dim)
    : config_(std::move(config)), image_size_(image_size) {
  validate_regions(config_.regions);
  check(config_.mask_grid > 0, ErrorKind::kConfig, "mask_grid must be positive");
  int64_t channels = 0;
  if (config_.backbone == "mini") {
    MiniConvBackbone net;
    channels = net->out_channels();
    backbone_ = torch::nn::AnyModule(net);
  } else if (config_.backbone == "resnext50") {
    backbone_ = torch::nn::AnyModule(ResNeXt50Backbone());
    channels = ResNeXt50BackboneImpl::kOutChannels;
  } else {
    fail(ErrorKind::kConfig, "unknown local backbone '" + config_.backbone + "'");
  }
  register_module("backbone", backbone_.ptr());
  region_proj = register_module("region_proj", torch::nn::Linear(channels, feature_dim));
  clip_proj = register_module("clip_proj", torch::nn::Linear(encoder_dim, feature_dim));
  aux_head = register_module("aux_head", torch::nn::Linear(feature_dim, 2));
}

torch::Tensor LocalStreamImpl::backbone_features(const torch::Tensor& images) { return backbone_.forward(images); }

torch::Tensor LocalStreamImpl::generate_masks(const torch::Tensor& landmarks) const {
  return dfa::generate_masks(landmarks, config_.regions, config_.mask_grid, config_.mask_grid, image_size_,
                             config_.smoothing_sigma);
}

LocalFeatures LocalStreamImpl::extract_local_features(const torch::Tensor& images, const torch::Tensor& masks,
                                                      const torch::Tensor& clip_feature) {
  check(masks.dim() == 4 && masks.size(0) == images.size(0) && masks.size(1) == num_regions(), ErrorKind::kShape,
        "masks must be [N, R, h, w] with R = " + std::to_string(num_regions()));
  auto features = backbone_features(images);  // [N, C, hb, wb]
  const auto hb = features.size(2), wb = features.size(3);
  auto m = masks.to(features.dtype());
  if (m.size(2) != hb || m.size(3) != wb) {
    m = F::adaptive_avg_pool2d(m, F::AdaptiveAvgPool2dFuncOptions({hb, wb}));
  }
  check(m.size(2) == hb && m.size(3) == wb, ErrorKind::kShape, "mask grid does not match the backbone grid");
  // mean over space of F * mask_r; projecting before or after the mean is the
  // same linear map.
  auto pooled = torch::einsum("nchw,nrhw->nrc", {features, m}) / static_cast<double>(hb * wb);
  auto tokens = region_proj->forward(pooled);
  auto clip_token = clip_proj->forward(clip_feature.to(features.dtype())).unsqueeze(1);
  auto l = torch::cat({tokens, clip_token}, 1);
  return {l, aux_head->forward(l.mean(1))};
}

LocalFeatures LocalStreamImpl::forward(const torch::Tensor& images, const torch::Tensor& landmarks,
                                       const torch::Tensor& clip_feature) {
  return extract_local_features(images, generate_masks(landmarks), clip_feature);
}

}  // namespace dfa
