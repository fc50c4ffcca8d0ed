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

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <opencv2/core.hpp>

#include "dfa/checkpoint.hpp"
#include "dfa/config.hpp"
#include "dfa/data_pipeline.hpp"
#include "dfa/error.hpp"
#include "dfa/synthetic.hpp"

namespace fs = std::filesystem;
using dfa::ErrorKind;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const dfa::Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kInvalidArgument;
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("dfa_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<dfa::ManifestEntry> toy_entries(int videos_per_class, int frames) {
  std::vector<dfa::ManifestEntry> out;
  for (int label = 0; label < 2; ++label) {
    for (int v = 0; v < videos_per_class; ++v) {
      for (int f = 0; f < frames; ++f) {
        const auto vid = std::string(label ? "fake_" : "real_") + std::to_string(v);
        out.push_back({vid + "/clip" + std::to_string(f), dfa::label_from_int(label), vid, dfa::Split::kTrain});
      }
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("data_pipeline") {
  TEST_CASE("splits keep videos whole and honour the ratio per class") {
    dfa::LabelingRule rule;
    rule.train_fraction = 0.75;
    const auto m = dfa::assign_splits(toy_entries(8, 3), rule, "toy");
    m.validate();
    std::map<std::string, dfa::Split> seen;
    int train_real = 0, train_fake = 0;
    for (const auto& e : m.entries()) {
      auto [it, fresh] = seen.emplace(e.video_id, e.split);
      CHECK(it->second == e.split);
      if (fresh && e.split == dfa::Split::kTrain) (e.label == dfa::Label::kReal ? train_real : train_fake)++;
    }
    CHECK(train_real == 6);
    CHECK(train_fake == 6);
    const auto again = dfa::assign_splits(toy_entries(8, 3), rule, "toy");
    CHECK(again.to_json() == m.to_json());
    rule.seed = 1;
    CHECK(dfa::assign_splits(toy_entries(8, 3), rule, "toy").to_json() != m.to_json());
  }

  TEST_CASE("manifest round trip and validation") {
    const auto m = dfa::assign_splits(toy_entries(2, 2), {}, "toy");
    const auto back = dfa::DatasetManifest::from_json(m.to_json());
    CHECK(back.to_json() == m.to_json());
    CHECK(back.source_dataset() == "toy");

    auto dup = toy_entries(1, 1);
    dup.push_back(dup.front());
    CHECK(kind_of([&] { dfa::DatasetManifest(dup, "x").validate(); }) == ErrorKind::kData);
    auto mixed = toy_entries(1, 2);
    mixed[1].label = dfa::Label::kFake;
    CHECK(kind_of([&] { dfa::DatasetManifest(mixed, "x").validate(); }) == ErrorKind::kData);
    CHECK(kind_of([] { dfa::label_from_int(2); }) == ErrorKind::kData);
  }

  TEST_CASE("frame sampling") {
    CHECK(dfa::sample_frame_indices(10, 4) == std::vector<int>{0, 2, 5, 7});
    CHECK(dfa::sample_frame_indices(3, 8) == std::vector<int>{0, 1, 2});
    CHECK(dfa::sample_frame_indices(300, 32).size() == 32);
    CHECK(dfa::sample_frame_indices_by_stride(10, 4) == std::vector<int>{0, 4, 8});
    CHECK(kind_of([] { dfa::sample_frame_indices(0, 4); }) == ErrorKind::kInvalidArgument);
  }

  TEST_CASE("detections round trip and primary face") {
    dfa::RawDetection a;
    a.frame_index = 3;
    a.face_box = {1.5, 2.0, 40.0, 50.0};
    for (int i = 0; i < dfa::kNumLandmarks; ++i) a.landmarks_px[i] = {i * 0.5, i * 0.25};
    const auto b = dfa::parse_detection(dfa::format_detection(a));
    CHECK(b.frame_index == 3);
    CHECK(b.face_box.width == 40.0);
    CHECK(b.landmarks_px[80].x == 40.0);
    auto small = a;
    small.face_box = {0, 0, 8, 8};
    const auto prim = dfa::primary_faces({small, a});
    CHECK(prim.at(3).face_box.width == 40.0);
    CHECK(kind_of([] { dfa::parse_detection(R"({"frame_index":0,"face_box":[0,0,1],"landmarks_px":[]})"); }) ==
          ErrorKind::kDetectionInvalid);
  }

  TEST_CASE("crop remaps landmarks with the image") {
    CHECK(dfa::map_landmark({10, 20}, {0, 0, 64, 64}, 64).x == 10.0);
    const auto p = dfa::map_landmark({30, 40}, {10, 20, 40, 40}, 80);
    CHECK(p.x == 40.0);
    CHECK(p.y == 40.0);
    CHECK(dfa::map_landmark({-5, 500}, {0, 0, 10, 10}, 20).x == 0.0);

    // A bright dot at a landmark lands on the remapped landmark.
    cv::Mat frame(100, 100, CV_8UC3, cv::Scalar(0, 0, 0));
    frame.at<cv::Vec3b>(50, 40) = cv::Vec3b(255, 255, 255);
    dfa::RawDetection det;
    det.face_box = {20, 30, 50, 50};
    det.landmarks_px[0] = {40.5, 50.5};
    const auto crop = dfa::crop_face(frame, det, 100);
    CHECK(crop.image.rows == 100);
    cv::Point at;
    cv::Mat gray;
    cv::extractChannel(crop.image, gray, 0);
    cv::minMaxLoc(gray, nullptr, nullptr, nullptr, &at);
    CHECK(std::abs(at.x + 0.5 - crop.landmarks[0].x) <= 1.0);
    CHECK(std::abs(at.y + 0.5 - crop.landmarks[0].y) <= 1.0);
    det.face_box = {200, 200, 10, 10};
    CHECK(kind_of([&] { dfa::crop_face(frame, det, 32); }) == ErrorKind::kDetectionInvalid);
  }

  TEST_CASE("synthetic raw dataset survives preprocessing") {
    const auto root = scratch_dir("raw");
    dfa::SyntheticDatasetOptions opt;
    opt.videos_per_class = 2;
    opt.frames_per_video = 3;
    dfa::write_synthetic_raw_dataset(root / "media", opt);
    dfa::LabelingRule rule;
    rule.train_fraction = 0.5;
    const auto manifest = dfa::build_manifest(root / "media", rule, "synthetic");
    CHECK(manifest.entries().size() == 4);
    dfa::PreprocessOptions po;
    po.frames_per_video = 2;
    po.crop_size = 48;
    const auto stats = dfa::preprocess_dataset(manifest, root / "media", root / "store", po);
    CHECK(stats.frames_written == 8);
    CHECK(stats.frames_without_face == 0);
    dfa::ModelInputSpec spec;
    spec.image_size = 32;
    const auto train = dfa::load_sample_set(manifest, root / "store", dfa::Split::kTrain, spec);
    CHECK(train.size() == 4);
    CHECK(train.images.sizes() == torch::IntArrayRef({4, 3, 32, 32}));
    CHECK(train.count_label(dfa::Label::kFake) == 2);
    CHECK((train.landmarks >= 0).all().item<bool>());
    CHECK((train.landmarks <= 32).all().item<bool>());
    fs::remove_all(root);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("serialize round trip") {
    dfa::TensorStore s;
    s.put("a.weight", torch::randn({3, 4}));
    s.put("b.count", torch::tensor({1, 2, 3}, torch::kInt64));
    s.put("c.half", torch::randn({2}).to(torch::kFloat64));
    s.metadata["note"] = "x";
    const auto back = dfa::deserialize_store(dfa::serialize_store(s));
    CHECK(back.metadata.at("note") == "x");
    for (const auto& [name, t] : s.tensors) CHECK(torch::equal(t, back.at(name)));
    CHECK(kind_of([] { dfa::deserialize_store("short"); }) == ErrorKind::kLoad);
    CHECK(kind_of([&] { (void)s.at("missing"); }) == ErrorKind::kLoad);
  }

  TEST_CASE("module state names and mismatches") {
    torch::nn::Linear lin(3, 2);
    auto st = dfa::module_state(*lin);
    CHECK(st.contains("weight"));
    torch::nn::Linear other(3, 2);
    dfa::load_module_state(*other, st);
    CHECK(torch::equal(other->weight, lin->weight));
    st.put("weight", torch::zeros({2, 2}));
    CHECK(kind_of([&] { dfa::load_module_state(*other, st); }) == ErrorKind::kLoad);
    st.tensors.erase("weight");
    CHECK(kind_of([&] { dfa::load_module_state(*other, st); }) == ErrorKind::kLoad);
  }
}

TEST_SUITE("config") {
  TEST_CASE("presets and round trip") {
    const auto mini = dfa::default_config("miniature");
    CHECK(mini.model.encoder.embed_dim == 64);
    const auto back = dfa::parse_config(mini.to_toml());
    CHECK(back.to_toml() == mini.to_toml());
    CHECK(back.hash() == mini.hash());
    const auto full = dfa::default_config("full");
    CHECK(full.model.encoder.depth == 24);
    CHECK(full.train.lr == doctest::Approx(2e-6));
    CHECK(full.train.epochs == 6);
    CHECK(full.train.batch_size == 32);
    CHECK(full.hash() != mini.hash());
    CHECK(kind_of([] { dfa::default_config("huge"); }) == ErrorKind::kConfig);
  }

  TEST_CASE("overrides") {
    const std::string base = "preset = \"miniature\"\n";
    CHECK(dfa::parse_config(base, {"train.lr=0.5"}).train.lr == 0.5);
    CHECK(dfa::parse_config(base, {"lr=1"}).train.lr == 1.0);  // integers widen
    CHECK(dfa::parse_config(base, {"aggregation=max"}).eval.aggregation == "max");
    CHECK(dfa::parse_config(base, {"train.global_on=false"}).train.ablation.global_on == false);
    CHECK(kind_of([&] { dfa::parse_config(base, {"depth=3"}); }) == ErrorKind::kUsage);
    CHECK(kind_of([&] { dfa::parse_config(base, {"train.nope=3"}); }) == ErrorKind::kUsage);
    CHECK(kind_of([&] { dfa::parse_config(base, {"nope.lr=3"}); }) == ErrorKind::kUsage);
    CHECK(kind_of([&] { dfa::parse_config(base, {"lr"}); }) == ErrorKind::kUsage);
    CHECK(kind_of([&] { dfa::parse_config(base, {"train.epochs=\"many\""}); }) == ErrorKind::kConfig);
    CHECK(kind_of([&] { dfa::parse_config(base, {"eval.aggregation=median"}); }) == ErrorKind::kConfig);
  }

  TEST_CASE("file errors") {
    CHECK(kind_of([] { dfa::parse_config("preset = \"miniature\"\n[train]\nfoo = 1\n"); }) == ErrorKind::kConfig);
    CHECK(kind_of([] { dfa::parse_config("[train\n"); }) == ErrorKind::kConfig);
    CHECK(dfa::config_keys().size() > 40);
  }
}

TEST_SUITE("synthetic") {
  TEST_CASE("samples are deterministic and labelled alternately") {
    const auto a = dfa::make_synthetic_samples(6, 64, 9);
    const auto b = dfa::make_synthetic_samples(6, 64, 9);
    CHECK(torch::equal(a.images, b.images));
    CHECK(a.labels[0].item<std::int64_t>() == 0);
    CHECK(a.labels[1].item<std::int64_t>() == 1);
    CHECK(a.images.sizes() == torch::IntArrayRef({6, 3, 64, 64}));
    CHECK((a.landmarks >= 0).all().item<bool>());
    CHECK((a.landmarks <= 64).all().item<bool>());
  }
}
