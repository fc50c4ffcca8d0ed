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

#include "dfa/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>

#include "dfa/error.hpp"
#include "dfa/log.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dfa {

std::string split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  fail(ErrorKind::kData, "unknown split '" + name + "'");
}

Label label_from_int(int value) {
  check(value == 0 || value == 1, ErrorKind::kData,
        "label must be 0 (real) or 1 (fake), got " + std::to_string(value));
  return static_cast<Label>(value);
}

// ---------------------------------------------------------------------------
// Manifest

DatasetManifest::DatasetManifest(std::vector<ManifestEntry> entries, std::string source_dataset)
    : entries_(std::move(entries)), source_dataset_(std::move(source_dataset)) {
  validate();
}

void DatasetManifest::validate() const {
  std::set<std::string> paths;
  std::map<std::string, std::pair<Label, Split>> videos;
  for (const auto& e : entries_) {
    check(paths.insert(e.media_path).second, ErrorKind::kData,
          "duplicate media_path in manifest: " + e.media_path);
    auto [it, inserted] = videos.emplace(e.video_id, std::make_pair(e.label, e.split));
    if (!inserted) {
      check(it->second.first == e.label, ErrorKind::kData,
            "video '" + e.video_id + "' has entries with different labels");
      check(it->second.second == e.split, ErrorKind::kData,
            "video '" + e.video_id + "' has entries in different splits");
    }
  }
}

std::vector<ManifestEntry> DatasetManifest::in_split(Split split) const {
  std::vector<ManifestEntry> out;
  std::copy_if(entries_.begin(), entries_.end(), std::back_inserter(out),
               [split](const ManifestEntry& e) { return e.split == split; });
  return out;
}

std::string DatasetManifest::to_json() const {
  json entries = json::array();
  for (const auto& e : entries_) {
    entries.push_back({{"media_path", e.media_path},
                       {"label", static_cast<int>(e.label)},
                       {"video_id", e.video_id},
                       {"split", split_name(e.split)}});
  }
  json doc = {{"source_dataset", source_dataset_}, {"entries", entries}};
  return doc.dump(2) + "\n";
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::kData, std::string("malformed manifest: ") + e.what());
  }
  std::vector<ManifestEntry> entries;
  try {
    for (const auto& item : doc.at("entries")) {
      entries.push_back({item.at("media_path").get<std::string>(),
                         label_from_int(item.at("label").get<int>()),
                         item.at("video_id").get<std::string>(),
                         parse_split(item.at("split").get<std::string>())});
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kData, std::string("malformed manifest entry: ") + e.what());
  }
  return DatasetManifest(std::move(entries), doc.value("source_dataset", std::string{}));
}

void DatasetManifest::save(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  check(out.good(), ErrorKind::kIo, "cannot write manifest " + path.string());
  out << to_json();
}

DatasetManifest DatasetManifest::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), ErrorKind::kIo, "cannot read manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::uint64_t stable_hash(const std::string& text, std::uint64_t seed) {
  // FNV-1a over the seed bytes then the text; stable across platforms.
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 1099511628211ULL;
  };
  for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>((seed >> (8 * i)) & 0xff));
  for (unsigned char c : text) mix(c);
  return h;
}

DatasetManifest assign_splits(std::vector<ManifestEntry> entries, const LabelingRule& rule,
                              const std::string& source_dataset) {
  check(rule.train_fraction >= 0.0 && rule.train_fraction <= 1.0, ErrorKind::kInvalidArgument,
        "train_fraction must lie in [0, 1]");
  std::sort(entries.begin(), entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.media_path < b.media_path; });

  std::map<std::string, Split> video_split;
  if (rule.fixed_split) {
    for (const auto& e : entries) video_split[e.video_id] = *rule.fixed_split;
  } else {
    // Stratify by label so both classes honour the ratio.
    std::map<Label, std::set<std::string>> videos_by_label;
    for (const auto& e : entries) videos_by_label[e.label].insert(e.video_id);
    for (const auto& [label, ids] : videos_by_label) {
      std::vector<std::string> ordered(ids.begin(), ids.end());
      std::stable_sort(ordered.begin(), ordered.end(), [&rule](const auto& a, const auto& b) {
        return stable_hash(a, rule.seed) < stable_hash(b, rule.seed);
      });
      const auto n_train = static_cast<std::size_t>(
          std::floor(rule.train_fraction * static_cast<double>(ordered.size()) + 1e-9));
      for (std::size_t i = 0; i < ordered.size(); ++i) {
        auto [it, inserted] =
            video_split.emplace(ordered[i], i < n_train ? Split::kTrain : Split::kVal);
        check(inserted, ErrorKind::kData, "video '" + ordered[i] + "' appears under both labels");
      }
    }
  }
  for (auto& e : entries) e.split = video_split.at(e.video_id);
  return DatasetManifest(std::move(entries), source_dataset);
}

namespace {

bool is_video_file(const fs::path& p) {
  static const std::set<std::string> kExt = {".mp4", ".avi", ".mov", ".mkv", ".webm"};
  return kExt.count(p.extension().string()) > 0;
}

bool is_image_file(const fs::path& p) {
  static const std::set<std::string> kExt = {".png", ".jpg", ".jpeg", ".bmp"};
  return kExt.count(p.extension().string()) > 0;
}

}  // namespace

DatasetManifest build_manifest(const fs::path& root_dir, const LabelingRule& rule,
                               const std::string& source_dataset) {
  check(fs::is_directory(root_dir), ErrorKind::kInvalidArgument,
        "manifest root does not exist: " + root_dir.string());
  std::vector<ManifestEntry> entries;
  for (const auto& [dir_name, label] : rule.directory_labels) {
    const fs::path label_dir = root_dir / dir_name;
    if (!fs::is_directory(label_dir)) continue;
    for (const auto& item : fs::directory_iterator(label_dir)) {
      const fs::path p = item.path();
      if (!(item.is_directory() || (item.is_regular_file() && is_video_file(p)))) continue;
      ManifestEntry e;
      e.media_path = fs::relative(p, root_dir).generic_string();
      e.label = label;
      e.video_id = (fs::path(dir_name) / p.stem()).generic_string();
      entries.push_back(std::move(e));
    }
  }
  if (entries.empty()) {
    log_warning("build_manifest: no media found under " + root_dir.string());
  }
  return assign_splits(std::move(entries), rule, source_dataset);
}

// ---------------------------------------------------------------------------
// Frame sampling

std::vector<int> sample_frame_indices(int total_frames, int count) {
  check(total_frames >= 1 && count >= 1, ErrorKind::kInvalidArgument,
        "sample_frame_indices needs total_frames >= 1 and count >= 1");
  if (count >= total_frames) {
    std::vector<int> all(static_cast<std::size_t>(total_frames));
    for (int i = 0; i < total_frames; ++i) all[static_cast<std::size_t>(i)] = i;
    return all;
  }
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    // Integer floor(k * total / count); exact for all int inputs.
    out.push_back(static_cast<int>(static_cast<std::int64_t>(k) * total_frames / count));
  }
  return out;
}

std::vector<int> sample_frame_indices_by_stride(int total_frames, int stride) {
  check(total_frames >= 1 && stride >= 1, ErrorKind::kInvalidArgument,
        "sample_frame_indices_by_stride needs total_frames >= 1 and stride >= 1");
  std::vector<int> out;
  for (int i = 0; i < total_frames; i += stride) out.push_back(i);
  return out;
}

// ---------------------------------------------------------------------------
// Detections

RawDetection parse_detection(const std::string& json_line) {
  RawDetection det;
  try {
    const json j = json::parse(json_line);
    det.frame_index = j.at("frame_index").get<int>();
    const auto& box = j.at("face_box");
    check(box.is_array() && box.size() == 4, ErrorKind::kDetectionInvalid,
          "face_box must be [x0, y0, width, height]");
    det.face_box = {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(),
                    box[3].get<double>()};
    const auto& lms = j.at("landmarks_px");
    check(lms.is_array() && lms.size() == kNumLandmarks, ErrorKind::kDetectionInvalid,
          "expected exactly 81 landmarks, got " + std::to_string(lms.size()));
    for (int i = 0; i < kNumLandmarks; ++i) {
      det.landmarks_px[static_cast<std::size_t>(i)] = {lms[static_cast<std::size_t>(i)].at(0).get<double>(),
                                                       lms[static_cast<std::size_t>(i)].at(1).get<double>()};
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kDetectionInvalid, std::string("malformed detection record: ") + e.what());
  }
  check(det.face_box.width > 0 && det.face_box.height > 0, ErrorKind::kDetectionInvalid,
        "face_box width and height must be positive (frame " + std::to_string(det.frame_index) + ")");
  return det;
}

std::string format_detection(const RawDetection& det) {
  json lms = json::array();
  for (const auto& p : det.landmarks_px) lms.push_back({p.x, p.y});
  json j = {{"frame_index", det.frame_index},
            {"face_box", {det.face_box.x0, det.face_box.y0, det.face_box.width, det.face_box.height}},
            {"landmarks_px", lms}};
  return j.dump();
}

std::vector<RawDetection> read_detections(const fs::path& path) {
  std::ifstream in(path);
  check(in.good(), ErrorKind::kIo, "cannot read detections " + path.string());
  std::vector<RawDetection> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_detection(line));
  }
  return out;
}

void write_detections(const fs::path& path, const std::vector<RawDetection>& dets) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  check(out.good(), ErrorKind::kIo, "cannot write detections " + path.string());
  for (const auto& d : dets) out << format_detection(d) << "\n";
}

std::map<int, RawDetection> primary_faces(const std::vector<RawDetection>& detections) {
  std::map<int, RawDetection> best;
  for (const auto& d : detections) {
    auto it = best.find(d.frame_index);
    if (it == best.end() || d.face_box.area() > it->second.face_box.area()) {
      best[d.frame_index] = d;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Cropping

Point map_landmark(const Point& p, const Box& box, int out_size) {
  const double s = static_cast<double>(out_size);
  // Scale factor first so an identity box (width == out_size) maps exactly.
  const double x = (p.x - box.x0) * (s / box.width);
  const double y = (p.y - box.y0) * (s / box.height);
  return {std::clamp(x, 0.0, s), std::clamp(y, 0.0, s)};
}

CroppedFace crop_face(const cv::Mat& frame, const RawDetection& det, int out_size) {
  check(out_size > 0, ErrorKind::kInvalidArgument, "out_size must be positive");
  check(!frame.empty(), ErrorKind::kInvalidArgument, "empty frame");
  const Box& b = det.face_box;
  check(b.width > 0 && b.height > 0, ErrorKind::kDetectionInvalid, "face_box has non-positive size");
  const bool outside = b.x0 >= frame.cols || b.y0 >= frame.rows || b.x0 + b.width <= 0 ||
                       b.y0 + b.height <= 0;
  check(!outside, ErrorKind::kDetectionInvalid,
        "face_box lies fully outside the frame (frame " + std::to_string(det.frame_index) + ")");

  // Same affine map as map_landmark: x' = (x - x0) / w * S.
  const double sx = out_size / b.width;
  const double sy = out_size / b.height;
  cv::Mat affine = (cv::Mat_<double>(2, 3) << sx, 0.0, -b.x0 * sx, 0.0, sy, -b.y0 * sy);
  CroppedFace out;
  cv::warpAffine(frame, out.image, affine, cv::Size(out_size, out_size), cv::INTER_LINEAR,
                 cv::BORDER_CONSTANT, cv::Scalar::all(0));
  if (out.image.type() != CV_8UC3) {
    cv::Mat converted;
    if (out.image.channels() == 1) {
      cv::cvtColor(out.image, converted, cv::COLOR_GRAY2BGR);
    } else {
      converted = out.image;
    }
    converted.convertTo(out.image, CV_8UC3);
  }
  for (int i = 0; i < kNumLandmarks; ++i) {
    const auto k = static_cast<std::size_t>(i);
    out.landmarks[k] = map_landmark(det.landmarks_px[k], b, out_size);
  }
  return out;
}

torch::Tensor normalize_image(const cv::Mat& bgr, const Normalization& norm) {
  check(bgr.type() == CV_8UC3, ErrorKind::kInvalidArgument, "normalize_image expects 8-bit BGR");
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8)
               .permute({2, 0, 1})
               .to(torch::kFloat32)
               .div(255.0);
  auto mean = torch::tensor({norm.mean[0], norm.mean[1], norm.mean[2]}, torch::kFloat32).view({3, 1, 1});
  auto std = torch::tensor({norm.std[0], norm.std[1], norm.std[2]}, torch::kFloat32).view({3, 1, 1});
  return ((t - mean) / std).contiguous();
}

FrameSample crop_and_normalize(const cv::Mat& frame, const RawDetection& det, int out_size,
                               const Normalization& norm) {
  CroppedFace face = crop_face(frame, det, out_size);
  FrameSample sample;
  sample.image = normalize_image(face.image, norm);
  sample.landmarks = face.landmarks;
  return sample;
}

CroppedFace resize_for_model(const CroppedFace& face, int model_size) {
  check(model_size > 0, ErrorKind::kInvalidArgument, "model_size must be positive");
  CroppedFace out;
  const double ratio = static_cast<double>(model_size) / face.image.cols;
  if (face.image.cols == model_size && face.image.rows == model_size) {
    out.image = face.image.clone();
  } else {
    cv::resize(face.image, out.image, cv::Size(model_size, model_size), 0, 0, cv::INTER_LINEAR);
  }
  const double s = static_cast<double>(model_size);
  for (std::size_t i = 0; i < face.landmarks.size(); ++i) {
    out.landmarks[i] = {std::clamp(face.landmarks[i].x * ratio, 0.0, s),
                        std::clamp(face.landmarks[i].y * ratio, 0.0, s)};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Frame sources

DirectoryFrameSource::DirectoryFrameSource(const fs::path& dir) {
  check(fs::is_directory(dir), ErrorKind::kIo, "frame directory not found: " + dir.string());
  for (const auto& item : fs::directory_iterator(dir)) {
    if (item.is_regular_file() && is_image_file(item.path())) files_.push_back(item.path());
  }
  std::sort(files_.begin(), files_.end());
}

cv::Mat DirectoryFrameSource::read_frame(int index) {
  check(index >= 0 && index < frame_count(), ErrorKind::kInvalidArgument,
        "frame index out of range: " + std::to_string(index));
  cv::Mat img = cv::imread(files_[static_cast<std::size_t>(index)].string(), cv::IMREAD_COLOR);
  check(!img.empty(), ErrorKind::kIo, "cannot decode " + files_[static_cast<std::size_t>(index)].string());
  return img;
}

struct VideoFileFrameSource::Impl {
  cv::VideoCapture capture;
};

VideoFileFrameSource::VideoFileFrameSource(const fs::path& file) : impl_(std::make_unique<Impl>()) {
  check(impl_->capture.open(file.string()), ErrorKind::kIo, "cannot open video " + file.string());
  frame_count_ = static_cast<int>(impl_->capture.get(cv::CAP_PROP_FRAME_COUNT));
}

VideoFileFrameSource::~VideoFileFrameSource() = default;

cv::Mat VideoFileFrameSource::read_frame(int index) {
  check(index >= 0 && index < frame_count_, ErrorKind::kInvalidArgument,
        "frame index out of range: " + std::to_string(index));
  impl_->capture.set(cv::CAP_PROP_POS_FRAMES, index);
  cv::Mat frame;
  check(impl_->capture.read(frame) && !frame.empty(), ErrorKind::kIo,
        "cannot decode frame " + std::to_string(index));
  return frame;
}

std::unique_ptr<FrameSource> open_frame_source(const fs::path& media) {
  if (fs::is_directory(media)) return std::make_unique<DirectoryFrameSource>(media);
  return std::make_unique<VideoFileFrameSource>(media);
}

fs::path detection_sidecar_path(const fs::path& media) {
  if (fs::is_directory(media)) return media / "detections.jsonl";
  return fs::path(media.string() + ".detections.jsonl");
}

// ---------------------------------------------------------------------------
// Sample store

namespace {

std::string frame_file_name(int frame_index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%06d.png", frame_index);
  return buf;
}

}  // namespace

void write_video_samples(const fs::path& store_root, const std::string& video_id,
                         const std::vector<StoredFrame>& frames) {
  const fs::path dir = store_root / video_id;
  fs::create_directories(dir);
  json index = json::array();
  int image_size = 0;
  for (const auto& f : frames) {
    const std::string name = frame_file_name(f.frame_index);
    check(cv::imwrite((dir / name).string(), f.face.image), ErrorKind::kIo,
          "cannot write " + (dir / name).string());
    image_size = f.face.image.cols;
    json lms = json::array();
    for (const auto& p : f.face.landmarks) lms.push_back({p.x, p.y});
    index.push_back({{"frame_index", f.frame_index}, {"file", name}, {"landmarks", lms}});
  }
  std::ofstream out(dir / "landmarks.json", std::ios::binary);
  check(out.good(), ErrorKind::kIo, "cannot write landmarks for " + video_id);
  out << json({{"image_size", image_size}, {"frames", index}}).dump() << "\n";
}

std::vector<StoredFrame> read_video_samples(const fs::path& store_root, const std::string& video_id) {
  const fs::path dir = store_root / video_id;
  std::ifstream in(dir / "landmarks.json");
  check(in.good(), ErrorKind::kData, "no preprocessed samples for video '" + video_id + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::kData, "malformed landmarks.json for '" + video_id + "': " + e.what());
  }
  std::vector<StoredFrame> out;
  for (const auto& item : doc.at("frames")) {
    StoredFrame f;
    f.frame_index = item.at("frame_index").get<int>();
    const fs::path file = dir / item.at("file").get<std::string>();
    f.face.image = cv::imread(file.string(), cv::IMREAD_COLOR);
    check(!f.face.image.empty(), ErrorKind::kIo, "cannot decode " + file.string());
    const auto& lms = item.at("landmarks");
    check(lms.size() == kNumLandmarks, ErrorKind::kData, "expected 81 landmarks in " + file.string());
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
      f.face.landmarks[i] = {lms[i].at(0).get<double>(), lms[i].at(1).get<double>()};
    }
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<StoredFrame> preprocess_video(FrameSource& source, const std::vector<RawDetection>& detections,
                                          const PreprocessOptions& options) {
  const int total = source.frame_count();
  if (total <= 0) return {};
  const std::vector<int> indices = options.frame_stride > 0
                                       ? sample_frame_indices_by_stride(total, options.frame_stride)
                                       : sample_frame_indices(total, options.frames_per_video);
  const auto faces = primary_faces(detections);
  std::vector<StoredFrame> out;
  for (int index : indices) {
    auto it = faces.find(index);
    if (it == faces.end()) continue;
    cv::Mat frame = source.read_frame(index);
    out.push_back({index, crop_face(frame, it->second, options.crop_size)});
  }
  return out;
}

PreprocessStats preprocess_dataset(const DatasetManifest& manifest, const fs::path& media_root,
                                   const fs::path& store_root, const PreprocessOptions& options) {
  PreprocessStats stats;
  for (const auto& entry : manifest.entries()) {
    const fs::path media = media_root / entry.media_path;
    auto source = open_frame_source(media);
    const auto detections = read_detections(detection_sidecar_path(media));
    auto frames = preprocess_video(*source, detections, options);
    const int expected = options.frame_stride > 0
                             ? static_cast<int>(sample_frame_indices_by_stride(
                                                    std::max(1, source->frame_count()), options.frame_stride)
                                                    .size())
                             : std::min(options.frames_per_video, source->frame_count());
    stats.frames_without_face += expected - static_cast<int>(frames.size());
    if (frames.empty()) {
      log_warning("preprocess: no usable face in " + entry.media_path);
    }
    write_video_samples(store_root, entry.video_id, frames);
    stats.frames_written += static_cast<int>(frames.size());
    ++stats.videos;
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Batches

SampleSet SampleSet::select(const std::vector<std::int64_t>& indices) const {
  auto idx = torch::tensor(indices, torch::kInt64);
  SampleSet out;
  out.images = images.index_select(0, idx);
  out.landmarks = landmarks.index_select(0, idx);
  out.labels = labels.index_select(0, idx);
  for (auto i : indices) {
    out.sample_ids.push_back(sample_ids[static_cast<std::size_t>(i)]);
    out.video_ids.push_back(video_ids[static_cast<std::size_t>(i)]);
  }
  return out;
}

std::int64_t SampleSet::count_label(Label label) const {
  if (size() == 0) return 0;
  return labels.eq(static_cast<std::int64_t>(label)).sum().item<std::int64_t>();
}

SampleSet load_sample_set(const DatasetManifest& manifest, const fs::path& store_root, Split split,
                          const ModelInputSpec& spec) {
  std::vector<torch::Tensor> images;
  std::vector<torch::Tensor> landmarks;
  std::vector<std::int64_t> labels;
  SampleSet out;
  for (const auto& entry : manifest.in_split(split)) {
    for (const auto& frame : read_video_samples(store_root, entry.video_id)) {
      CroppedFace resized = resize_for_model(frame.face, spec.image_size);
      images.push_back(normalize_image(resized.image, spec.normalization));
      auto lm = torch::empty({kNumLandmarks, 2}, torch::kFloat32);
      auto acc = lm.accessor<float, 2>();
      for (int i = 0; i < kNumLandmarks; ++i) {
        acc[i][0] = static_cast<float>(resized.landmarks[static_cast<std::size_t>(i)].x);
        acc[i][1] = static_cast<float>(resized.landmarks[static_cast<std::size_t>(i)].y);
      }
      landmarks.push_back(lm);
      labels.push_back(static_cast<std::int64_t>(entry.label));
      out.video_ids.push_back(entry.video_id);
      out.sample_ids.push_back(entry.video_id + "#" + std::to_string(frame.frame_index));
    }
  }
  if (images.empty()) {
    out.images = torch::empty({0, 3, spec.image_size, spec.image_size});
    out.landmarks = torch::empty({0, kNumLandmarks, 2});
    out.labels = torch::empty({0}, torch::kInt64);
    return out;
  }
  out.images = torch::stack(images);
  out.landmarks = torch::stack(landmarks);
  out.labels = torch::tensor(labels, torch::kInt64);
  return out;
}

SampleSet concat_sample_sets(const std::vector<SampleSet>& parts) {
  SampleSet out;
  std::vector<torch::Tensor> images, landmarks, labels;
  for (const auto& p : parts) {
    if (p.size() == 0) continue;
    images.push_back(p.images);
    landmarks.push_back(p.landmarks);
    labels.push_back(p.labels);
    out.sample_ids.insert(out.sample_ids.end(), p.sample_ids.begin(), p.sample_ids.end());
    out.video_ids.insert(out.video_ids.end(), p.video_ids.begin(), p.video_ids.end());
  }
  check(!images.empty(), ErrorKind::kData, "cannot concatenate empty sample sets");
  out.images = torch::cat(images);
  out.landmarks = torch::cat(landmarks);
  out.labels = torch::cat(labels);
  return out;
}

}  // namespace dfa
