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

// Preprocessing: frame sampling, face cropping with landmark remapping,
// dataset manifests, the on-disk sample store and batch loading.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

namespace dfa {

inline constexpr int kNumLandmarks = 81;

enum class Label : int { kReal = 0, kFake = 1 };
enum class Split { kTrain, kVal, kTest };

std::string split_name(Split split);
Split parse_split(const std::string& name);
Label label_from_int(int value);

struct Point {
  double x = 0.0;
  double y = 0.0;
};

using Landmarks = std::array<Point, kNumLandmarks>;

struct Box {
  double x0 = 0.0;
  double y0 = 0.0;
  double width = 0.0;
  double height = 0.0;

  double area() const { return width * height; }
};

/// One face found by the external detector/landmark predictor.
struct RawDetection {
  int frame_index = 0;
  Box face_box;
  Landmarks landmarks_px{};
};

// ---------------------------------------------------------------------------
// Manifest

struct ManifestEntry {
  std::string media_path;
  Label label = Label::kReal;
  std::string video_id;
  Split split = Split::kTrain;
};

class DatasetManifest {
 public:
  DatasetManifest() = default;
  DatasetManifest(std::vector<ManifestEntry> entries, std::string source_dataset);

  const std::vector<ManifestEntry>& entries() const { return entries_; }
  const std::string& source_dataset() const { return source_dataset_; }
  bool empty() const { return entries_.empty(); }

  /// Throws kData on duplicate media paths or on a video_id whose entries
  /// disagree on label or split.
  void validate() const;

  std::vector<ManifestEntry> in_split(Split split) const;

  std::string to_json() const;
  static DatasetManifest from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static DatasetManifest load(const std::filesystem::path& path);

 private:
  std::vector<ManifestEntry> entries_;
  std::string source_dataset_;
};

/// How build_manifest maps a directory tree onto labels and splits.
struct LabelingRule {
  /// Top-level directory name -> label, e.g. {"real": 0, "fake": 1}.
  std::map<std::string, Label> directory_labels{{"real", Label::kReal},
                                                {"fake", Label::kFake}};
  double train_fraction = 0.8;
  std::uint64_t seed = 706;
  /// When set, every entry lands in this split (held-out evaluation sets).
  std::optional<Split> fixed_split;
};

/// Scans root_dir/<label dir>/<media> where each media is either a directory
/// of decoded frames or a video file. Entries are sorted by media path and
/// split per label by a seeded hash of the video id, so frames of one video
/// never straddle splits.
DatasetManifest build_manifest(const std::filesystem::path& root_dir,
                               const LabelingRule& rule,
                               const std::string& source_dataset = "");

/// Assigns splits to entries that already carry paths, labels and video ids.
DatasetManifest assign_splits(std::vector<ManifestEntry> entries, const LabelingRule& rule,
                              const std::string& source_dataset = "");

std::uint64_t stable_hash(const std::string& text, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Frame sampling

/// min(count, total_frames) uniformly spaced indices floor(k * total / count).
std::vector<int> sample_frame_indices(int total_frames, int count);

/// Every `stride`-th frame starting at 0.
std::vector<int> sample_frame_indices_by_stride(int total_frames, int stride);

// ---------------------------------------------------------------------------
// Detections

RawDetection parse_detection(const std::string& json_line);
std::string format_detection(const RawDetection& det);
std::vector<RawDetection> read_detections(const std::filesystem::path& path);
void write_detections(const std::filesystem::path& path, const std::vector<RawDetection>& dets);

/// Keeps the largest face box per frame index.
std::map<int, RawDetection> primary_faces(const std::vector<RawDetection>& detections);

// ---------------------------------------------------------------------------
// Cropping and normalization

struct Normalization {
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> std{0.5, 0.5, 0.5};
};

/// A face crop before standardization, as written to the sample store.
struct CroppedFace {
  cv::Mat image;  // CV_8UC3, BGR, out_size x out_size
  Landmarks landmarks{};
};

/// One model-ready sample.
struct FrameSample {
  torch::Tensor image;  // float [3, S, S], standardized RGB
  Landmarks landmarks{};
  Label label = Label::kReal;
  std::string video_id;
};

/// Maps a source coordinate through the crop+resize affine map and clamps
/// into [0, out_size].
Point map_landmark(const Point& p, const Box& box, int out_size);

/// Crops `box` out of `frame` (zero padding where the box leaves the frame),
/// resizes to out_size x out_size and remaps landmarks with the same map.
CroppedFace crop_face(const cv::Mat& frame, const RawDetection& det, int out_size);

/// BGR uint8 image -> standardized RGB float tensor [3, H, W].
torch::Tensor normalize_image(const cv::Mat& bgr, const Normalization& norm);

/// crop_face followed by normalize_image.
FrameSample crop_and_normalize(const cv::Mat& frame, const RawDetection& det, int out_size,
                               const Normalization& norm = {});

/// Bilinear resize of a stored crop to the model input size with landmarks
/// scaled by the same ratio (no center crop).
CroppedFace resize_for_model(const CroppedFace& face, int model_size);

// ---------------------------------------------------------------------------
// Frame sources (external decoder interface)

class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual int frame_count() const = 0;
  virtual cv::Mat read_frame(int index) = 0;
};

/// A directory of already-decoded frames, ordered by file name.
class DirectoryFrameSource : public FrameSource {
 public:
  explicit DirectoryFrameSource(const std::filesystem::path& dir);
  int frame_count() const override { return static_cast<int>(files_.size()); }
  cv::Mat read_frame(int index) override;

 private:
  std::vector<std::filesystem::path> files_;
};

/// A video file decoded through OpenCV's videoio backends.
class VideoFileFrameSource : public FrameSource {
 public:
  explicit VideoFileFrameSource(const std::filesystem::path& file);
  ~VideoFileFrameSource() override;
  int frame_count() const override { return frame_count_; }
  cv::Mat read_frame(int index) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int frame_count_ = 0;
};

std::unique_ptr<FrameSource> open_frame_source(const std::filesystem::path& media);

/// Sidecar location: <dir>/detections.jsonl for frame directories,
/// <file>.detections.jsonl for video files.
std::filesystem::path detection_sidecar_path(const std::filesystem::path& media);

// ---------------------------------------------------------------------------
// Sample store
//
// <store>/<video_id>/frame_NNNNNN.png   lossless 8-bit BGR crops
// <store>/<video_id>/landmarks.json     {"image_size": S, "frames": [
//                                          {"frame_index": i, "file": "...",
//                                           "landmarks": [[x, y] x 81]}, ...]}

struct StoredFrame {
  int frame_index = 0;
  CroppedFace face;
};

void write_video_samples(const std::filesystem::path& store_root, const std::string& video_id,
                         const std::vector<StoredFrame>& frames);
std::vector<StoredFrame> read_video_samples(const std::filesystem::path& store_root,
                                            const std::string& video_id);

struct PreprocessOptions {
  int frames_per_video = 32;
  /// When > 0, sample every `stride` frames instead of a fixed count.
  int frame_stride = 0;
  int crop_size = 256;
};

struct PreprocessStats {
  int videos = 0;
  int frames_written = 0;
  int frames_without_face = 0;
};

std::vector<StoredFrame> preprocess_video(FrameSource& source,
                                          const std::vector<RawDetection>& detections,
                                          const PreprocessOptions& options);

PreprocessStats preprocess_dataset(const DatasetManifest& manifest,
                                   const std::filesystem::path& media_root,
                                   const std::filesystem::path& store_root,
                                   const PreprocessOptions& options);

// ---------------------------------------------------------------------------
// Batches

/// A stacked set of model-ready samples.
struct SampleSet {
  torch::Tensor images;     // float [M, 3, S, S]
  torch::Tensor landmarks;  // float [M, 81, 2], pixel coordinates at S
  torch::Tensor labels;     // int64 [M]
  std::vector<std::string> sample_ids;
  std::vector<std::string> video_ids;

  std::int64_t size() const { return labels.defined() ? labels.size(0) : 0; }
  SampleSet select(const std::vector<std::int64_t>& indices) const;
  std::int64_t count_label(Label label) const;
};

struct ModelInputSpec {
  int image_size = 224;
  Normalization normalization;
};

SampleSet load_sample_set(const DatasetManifest& manifest, const std::filesystem::path& store_root,
                          Split split, const ModelInputSpec& spec);

SampleSet concat_sample_sets(const std::vector<SampleSet>& parts);

}  // namespace dfa
