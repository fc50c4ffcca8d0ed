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

#include "dfa/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "dfa/error.hpp"
#include "dfa/local_stream.hpp"

namespace dfa {

namespace {

Landmarks build_template() {
  Landmarks t{};
  const double pi = std::numbers::pi;
  auto ellipse = [&](int first, int count, double cx, double cy, double rx, double ry) {
    for (int k = 0; k < count; ++k) {
      const double a = 2.0 * pi * k / count;
      t[static_cast<std::size_t>(first + k)] = {cx + rx * std::cos(a), cy + ry * std::sin(a)};
    }
  };
  for (int k = 0; k < 17; ++k) {  // jaw
    const double a = pi * k / 16.0;
    t[static_cast<std::size_t>(k)] = {0.5 - 0.36 * std::cos(a), 0.40 + 0.50 * std::sin(a)};
  }
  for (int k = 0; k < 5; ++k) {  // eyebrows
    const double u = k / 4.0;
    t[static_cast<std::size_t>(17 + k)] = {0.22 + 0.20 * u, 0.33 - 0.04 * std::sin(pi * u)};
    t[static_cast<std::size_t>(22 + k)] = {0.58 + 0.20 * u, 0.33 - 0.04 * std::sin(pi * u)};
  }
  for (int k = 0; k < 4; ++k) t[static_cast<std::size_t>(27 + k)] = {0.5, 0.40 + 0.06 * k};  // nose bridge
  for (int k = 0; k < 5; ++k) t[static_cast<std::size_t>(31 + k)] = {0.43 + 0.035 * k, 0.62 + 0.02 * std::sin(pi * k / 4.0)};
  ellipse(36, 6, 0.33, 0.43, 0.08, 0.035);
  ellipse(42, 6, 0.67, 0.43, 0.08, 0.035);
  ellipse(48, 12, 0.5, 0.76, 0.14, 0.055);
  ellipse(60, 8, 0.5, 0.76, 0.08, 0.02);
  for (int k = 0; k < 13; ++k) {  // forehead arc
    const double u = k / 12.0;
    t[static_cast<std::size_t>(68 + k)] = {0.18 + 0.64 * u, 0.27 - 0.16 * std::sin(pi * u)};
  }
  return t;
}

std::vector<cv::Point> hull_pixels(const Landmarks& lm, const std::vector<int>& indices) {
  std::vector<Point> pts;
  for (int i : indices) pts.push_back(lm[static_cast<std::size_t>(i)]);
  std::vector<cv::Point> out;
  for (const auto& p : convex_hull(pts)) out.emplace_back(static_cast<int>(std::lround(p.x)), static_cast<int>(std::lround(p.y)));
  return out;
}

}  // namespace

const Landmarks& face_template() {
  static const Landmarks t = build_template();
  return t;
}

SyntheticFace render_synthetic_face(std::mt19937_64& rng, int size, Label label) {
  check(size >= 16, ErrorKind::kInvalidArgument, "synthetic face size must be >= 16");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double s = size;
  const double scale = 0.85 + 0.15 * unit(rng);
  const double dx = (unit(rng) - 0.5) * 0.08 * s;
  const double dy = (unit(rng) - 0.5) * 0.08 * s;

  SyntheticFace face;
  const auto& tmpl = face_template();
  for (std::size_t k = 0; k < tmpl.size(); ++k) {
    const double jx = (unit(rng) - 0.5) * 0.01 * s;
    const double jy = (unit(rng) - 0.5) * 0.01 * s;
    face.landmarks[k] = {0.5 * s + (tmpl[k].x - 0.5) * scale * s + dx + jx,
                         0.5 * s + (tmpl[k].y - 0.5) * scale * s + dy + jy};
  }

  const cv::Scalar background(60 + 80 * unit(rng), 60 + 80 * unit(rng), 60 + 80 * unit(rng));
  face.image = cv::Mat(size, size, CV_8UC3, background);
  const cv::Scalar skin(110 + 40 * unit(rng), 140 + 40 * unit(rng), 170 + 50 * unit(rng));
  std::vector<int> outline;
  for (int k = 0; k < 17; ++k) outline.push_back(k);
  for (int k = 68; k < 81; ++k) outline.push_back(k);
  cv::fillConvexPoly(face.image, hull_pixels(face.landmarks, outline), skin, cv::LINE_AA);
  const cv::Scalar feature(40 + 30 * unit(rng), 40 + 30 * unit(rng), 60 + 40 * unit(rng));
  std::vector<std::vector<int>> parts{{36, 37, 38, 39, 40, 41}, {42, 43, 44, 45, 46, 47}};
  std::vector<int> lips;
  for (int k = 48; k < 60; ++k) lips.push_back(k);
  parts.push_back(lips);
  for (const auto& part : parts) cv::fillConvexPoly(face.image, hull_pixels(face.landmarks, part), feature, cv::LINE_AA);
  cv::GaussianBlur(face.image, face.image, cv::Size(3, 3), 0.8);

  if (label == Label::kFake) {
    cv::Mat mask(size, size, CV_8UC1, cv::Scalar(0));
    for (const auto& part : parts) cv::fillConvexPoly(mask, hull_pixels(face.landmarks, part), cv::Scalar(255));
    const int amplitude = 45;
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) {
        if (!mask.at<std::uint8_t>(r, c)) continue;
        const int sign = ((r + c) % 2 == 0) ? 1 : -1;
        auto& px = face.image.at<cv::Vec3b>(r, c);
        for (int ch = 0; ch < 3; ++ch) px[ch] = cv::saturate_cast<std::uint8_t>(px[ch] + sign * amplitude);
      }
    }
  }
  return face;
}

SampleSet make_synthetic_samples(int n, int size, std::uint64_t seed, const Normalization& norm) {
  check(n >= 1, ErrorKind::kInvalidArgument, "need at least one synthetic sample");
  std::mt19937_64 rng(seed);
  std::vector<torch::Tensor> images, landmarks;
  std::vector<std::int64_t> labels;
  SampleSet set;
  for (int i = 0; i < n; ++i) {
    const Label label = i % 2 == 0 ? Label::kReal : Label::kFake;
    auto face = render_synthetic_face(rng, size, label);
    images.push_back(normalize_image(face.image, norm));
    auto lm = torch::empty({kNumLandmarks, 2}, torch::kFloat32);
    for (int k = 0; k < kNumLandmarks; ++k) {
      lm[k][0] = face.landmarks[static_cast<std::size_t>(k)].x;
      lm[k][1] = face.landmarks[static_cast<std::size_t>(k)].y;
    }
    landmarks.push_back(lm);
    labels.push_back(static_cast<std::int64_t>(label));
    char id[32];
    std::snprintf(id, sizeof(id), "syn_%05d", i);
    set.video_ids.emplace_back(id);
    set.sample_ids.push_back(std::string(id) + "#0");
  }
  set.images = torch::stack(images);
  set.landmarks = torch::stack(landmarks);
  set.labels = torch::tensor(labels, torch::kInt64);
  return set;
}

void write_synthetic_raw_dataset(const std::filesystem::path& root, const SyntheticDatasetOptions& o) {
  check(o.videos_per_class >= 1 && o.frames_per_video >= 1, ErrorKind::kInvalidArgument,
        "synthetic dataset needs at least one video per class and one frame per video");
  check(o.face_size >= 16 && o.frame_size >= o.face_size + 8, ErrorKind::kInvalidArgument,
        "frame_size must exceed face_size by at least 8 pixels");
  std::mt19937_64 rng(o.seed);
  std::uniform_int_distribution<int> offset(0, o.frame_size - o.face_size);
  for (Label label : {Label::kReal, Label::kFake}) {
    const char* dir = label == Label::kReal ? "real" : "fake";
    for (int v = 0; v < o.videos_per_class; ++v) {
      char name[32];
      std::snprintf(name, sizeof(name), "vid_%03d", v);
      const auto video_dir = root / dir / name;
      std::filesystem::create_directories(video_dir);
      std::vector<RawDetection> dets;
      for (int f = 0; f < o.frames_per_video; ++f) {
        auto face = render_synthetic_face(rng, o.face_size, label);
        cv::Mat frame(o.frame_size, o.frame_size, CV_8UC3, cv::Scalar(90, 90, 90));
        const int x0 = offset(rng), y0 = offset(rng);
        face.image.copyTo(frame(cv::Rect(x0, y0, o.face_size, o.face_size)));
        RawDetection det;
        det.frame_index = f;
        det.face_box = {static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(o.face_size),
                        static_cast<double>(o.face_size)};
        for (std::size_t k = 0; k < det.landmarks_px.size(); ++k) {
          det.landmarks_px[k] = {face.landmarks[k].x + x0, face.landmarks[k].y + y0};
        }
        dets.push_back(det);
        RawDetection distractor = det;  // a smaller, lower-priority face
        distractor.face_box = {0.0, 0.0, 8.0, 8.0};
        for (std::size_t k = 0; k < distractor.landmarks_px.size(); ++k) {
          distractor.landmarks_px[k] = {face_template()[k].x * 8.0, face_template()[k].y * 8.0};
        }
        dets.push_back(distractor);
        char file[32];
        std::snprintf(file, sizeof(file), "frame_%03d.png", f);
        check(cv::imwrite((video_dir / file).string(), frame), ErrorKind::kIo, "cannot write synthetic frame");
      }
      write_detections(video_dir / "detections.jsonl", dets);
    }
  }
}

}  // namespace dfa
