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

#include "dfa/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "dfa/data_pipeline.hpp"
#include "dfa/error.hpp"

namespace dfa {

namespace {

template <typename C>
toml::array int_array(const C& values) {
  toml::array a;
  for (int v : values) a.push_back(v);
  return a;
}

toml::table to_table(const RunConfig& c) {
  const auto& m = c.model;
  toml::table t;
  t.insert("preset", c.preset);
  t.insert("data", toml::table{{"manifest", c.data.manifest},
                               {"media_root", c.data.media_root},
                               {"store_root", c.data.store_root},
                               {"source_dataset", c.data.source_dataset},
                               {"train_fraction", c.data.train_fraction},
                               {"split_seed", c.data.split_seed},
                               {"frames_per_video", c.data.frames_per_video},
                               {"frame_stride", c.data.frame_stride},
                               {"crop_size", c.data.crop_size}});
  t.insert("encoder", toml::table{{"checkpoint", c.encoder_checkpoint},
                                  {"init_seed", c.encoder_seed},
                                  {"depth", m.encoder.depth},
                                  {"embed_dim", m.encoder.embed_dim},
                                  {"num_heads", m.encoder.num_heads},
                                  {"patch_size", m.encoder.patch_size},
                                  {"image_size", m.encoder.image_size},
                                  {"mlp_ratio", m.encoder.mlp_ratio},
                                  {"tap_layers", int_array(m.encoder.tap_layers)},
                                  {"inject_layers", int_array(m.encoder.inject_layers)}});
  t.insert("adapter", toml::table{{"depth", m.adapter.depth},
                                  {"embed_dim", m.adapter.embed_dim},
                                  {"num_heads", m.adapter.num_heads},
                                  {"patch_size", m.adapter.patch_size},
                                  {"mlp_ratio", m.adapter.mlp_ratio},
                                  {"num_query_tokens", m.adapter.num_query_tokens},
                                  {"mlp_out_dim", m.adapter.mlp_out_dim},
                                  {"num_bias_heads", m.adapter.num_bias_heads},
                                  {"fuse_in_layers", int_array(m.adapter.fuse_in_layers)},
                                  {"source_tap_layers", int_array(m.adapter.source_tap_layers)},
                                  {"bias_after_layer", m.adapter.bias_after_layer},
                                  {"use_image", m.adapter.use_image}});
  t.insert("local", toml::table{{"backbone", m.local.backbone},
                                {"mask_grid", m.local.mask_grid},
                                {"smoothing_sigma", m.local.smoothing_sigma},
                                {"regions_file", c.regions_file}});
  t.insert("fusion", toml::table{{"depth", m.fusion.depth}, {"num_heads", m.fusion.num_heads},
                                 {"mlp_ratio", m.fusion.mlp_ratio}});
  t.insert("model", toml::table{{"feature_dim", m.feature_dim}});
  t.insert("train", toml::table{{"lr", c.train.lr},
                                {"batch_size", c.train.batch_size},
                                {"epochs", c.train.epochs},
                                {"seed", static_cast<std::int64_t>(c.train.seed)},
                                {"max_steps", c.train.max_steps},
                                {"global_on", c.train.ablation.global_on},
                                {"local_on", c.train.ablation.local_on},
                                {"ifc_on", c.train.ablation.ifc_on}});
  t.insert("eval", toml::table{{"threshold", c.eval.threshold},
                               {"aggregation", c.eval.aggregation},
                               {"batch_size", c.eval.batch_size},
                               {"n_per_class", c.eval.n_per_class},
                               {"feature_seed", c.eval.feature_seed}});
  return t;
}

const toml::node& node_at(const toml::table& t, const std::string& section, const std::string& key) {
  const auto* sec = t.get_as<toml::table>(section);
  check(sec != nullptr && sec->contains(key), ErrorKind::kConfig, "missing config key " + section + "." + key);
  return *sec->get(key);
}

template <typename T>
T get(const toml::table& t, const std::string& section, const std::string& key) {
  const auto& n = node_at(t, section, key);
  if constexpr (std::is_same_v<T, double>) {
    if (auto v = n.value<double>()) return *v;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (auto v = n.as_boolean()) return v->get();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (auto v = n.as_string()) return v->get();
  } else {
    if (auto v = n.as_integer()) return static_cast<T>(v->get());
  }
  fail(ErrorKind::kConfig, "config key " + section + "." + key + " has the wrong type");
}

std::vector<int> get_ints(const toml::table& t, const std::string& section, const std::string& key) {
  const auto* arr = node_at(t, section, key).as_array();
  check(arr != nullptr, ErrorKind::kConfig, "config key " + section + "." + key + " must be an integer array");
  std::vector<int> out;
  for (const auto& e : *arr) {
    auto v = e.as_integer();
    check(v != nullptr, ErrorKind::kConfig, "config key " + section + "." + key + " must be an integer array");
    out.push_back(static_cast<int>(v->get()));
  }
  return out;
}

RunConfig from_table(const toml::table& t) {
  RunConfig c = default_config(t["preset"].value_or(std::string("full")));
  c.data.manifest = get<std::string>(t, "data", "manifest");
  c.data.media_root = get<std::string>(t, "data", "media_root");
  c.data.store_root = get<std::string>(t, "data", "store_root");
  c.data.source_dataset = get<std::string>(t, "data", "source_dataset");
  c.data.train_fraction = get<double>(t, "data", "train_fraction");
  c.data.split_seed = get<std::int64_t>(t, "data", "split_seed");
  c.data.frames_per_video = get<int>(t, "data", "frames_per_video");
  c.data.frame_stride = get<int>(t, "data", "frame_stride");
  c.data.crop_size = get<int>(t, "data", "crop_size");

  auto& e = c.model.encoder;
  c.encoder_checkpoint = get<std::string>(t, "encoder", "checkpoint");
  c.encoder_seed = get<std::int64_t>(t, "encoder", "init_seed");
  e.depth = get<int>(t, "encoder", "depth");
  e.embed_dim = get<int>(t, "encoder", "embed_dim");
  e.num_heads = get<int>(t, "encoder", "num_heads");
  e.patch_size = get<int>(t, "encoder", "patch_size");
  e.image_size = get<int>(t, "encoder", "image_size");
  e.mlp_ratio = get<double>(t, "encoder", "mlp_ratio");
  auto taps = get_ints(t, "encoder", "tap_layers");
  e.tap_layers = std::set<int>(taps.begin(), taps.end());
  auto inject = get_ints(t, "encoder", "inject_layers");
  e.inject_layers = std::set<int>(inject.begin(), inject.end());

  auto& a = c.model.adapter;
  a.depth = get<int>(t, "adapter", "depth");
  a.embed_dim = get<int>(t, "adapter", "embed_dim");
  a.num_heads = get<int>(t, "adapter", "num_heads");
  a.patch_size = get<int>(t, "adapter", "patch_size");
  a.image_size = e.image_size;
  a.mlp_ratio = get<double>(t, "adapter", "mlp_ratio");
  a.num_query_tokens = get<int>(t, "adapter", "num_query_tokens");
  a.mlp_out_dim = get<int>(t, "adapter", "mlp_out_dim");
  a.num_bias_heads = get<int>(t, "adapter", "num_bias_heads");
  a.fuse_in_layers = get_ints(t, "adapter", "fuse_in_layers");
  a.source_tap_layers = get_ints(t, "adapter", "source_tap_layers");
  a.bias_after_layer = get<int>(t, "adapter", "bias_after_layer");
  a.use_image = get<bool>(t, "adapter", "use_image");

  auto& l = c.model.local;
  l.backbone = get<std::string>(t, "local", "backbone");
  l.mask_grid = get<int>(t, "local", "mask_grid");
  l.smoothing_sigma = get<double>(t, "local", "smoothing_sigma");
  c.regions_file = get<std::string>(t, "local", "regions_file");
  l.regions = c.regions_file.empty() ? default_regions() : load_regions(c.regions_file);

  c.model.fusion.depth = get<int>(t, "fusion", "depth");
  c.model.fusion.num_heads = get<int>(t, "fusion", "num_heads");
  c.model.fusion.mlp_ratio = get<double>(t, "fusion", "mlp_ratio");
  c.model.feature_dim = get<int>(t, "model", "feature_dim");

  c.train.lr = get<double>(t, "train", "lr");
  c.train.batch_size = get<int>(t, "train", "batch_size");
  c.train.epochs = get<int>(t, "train", "epochs");
  const auto seed = get<std::int64_t>(t, "train", "seed");
  check(seed >= 0, ErrorKind::kConfig, "train.seed must be non-negative");
  c.train.seed = static_cast<std::uint64_t>(seed);
  c.train.max_steps = get<int>(t, "train", "max_steps");
  c.train.ablation = {get<bool>(t, "train", "global_on"), get<bool>(t, "train", "local_on"),
                      get<bool>(t, "train", "ifc_on")};

  c.eval.threshold = get<double>(t, "eval", "threshold");
  c.eval.aggregation = get<std::string>(t, "eval", "aggregation");
  c.eval.batch_size = get<int>(t, "eval", "batch_size");
  c.eval.n_per_class = get<int>(t, "eval", "n_per_class");
  c.eval.feature_seed = get<std::int64_t>(t, "eval", "feature_seed");

  check(c.data.train_fraction >= 0.0 && c.data.train_fraction <= 1.0, ErrorKind::kConfig,
        "data.train_fraction must be in [0, 1]");
  check(c.data.crop_size >= 1 && c.data.frames_per_video >= 1 && c.data.frame_stride >= 0, ErrorKind::kConfig,
        "data sampling settings must be positive");
  check(c.eval.threshold >= 0.0 && c.eval.threshold <= 1.0, ErrorKind::kConfig, "eval.threshold must be in [0, 1]");
  check(c.eval.batch_size >= 1 && c.eval.n_per_class >= 1, ErrorKind::kConfig,
        "eval.batch_size and eval.n_per_class must be positive");
  check(c.eval.aggregation == "mean" || c.eval.aggregation == "max", ErrorKind::kConfig,
        "eval.aggregation must be mean or max");
  c.model.validate();
  c.train.validate();
  return c;
}

/// Replaces `target` with `value` when the types agree (integers widen to
/// floats).
void assign_checked(toml::table& section, const std::string& key, const toml::node& value, const std::string& where) {
  const auto* current = section.get(key);
  check(current != nullptr, ErrorKind::kConfig, "unknown config key " + where);
  if (current->is_floating_point() && value.is_integer()) {
    section.insert_or_assign(key, static_cast<double>(value.as_integer()->get()));
    return;
  }
  check(current->type() == value.type(), ErrorKind::kConfig, "config key " + where + " has the wrong type");
  section.insert_or_assign(key, value);
}

void merge_file(toml::table& base, const toml::table& file) {
  for (const auto& [k, v] : file) {
    const std::string key(k.str());
    if (key == "preset") continue;
    auto* section = base.get_as<toml::table>(key);
    check(section != nullptr && v.is_table(), ErrorKind::kConfig, "unknown config section [" + key + "]");
    for (const auto& [sk, sv] : *v.as_table()) {
      assign_checked(*section, std::string(sk.str()), sv, key + "." + std::string(sk.str()));
    }
  }
}

void apply_override(toml::table& base, const std::string& spec) {
  const auto eq = spec.find('=');
  check(eq != std::string::npos && eq > 0, ErrorKind::kUsage, "override '" + spec + "' is not key=value");
  std::string name = spec.substr(0, eq);
  const std::string text = spec.substr(eq + 1);
  std::string section, key;
  const auto dot = name.find('.');
  if (dot != std::string::npos) {
    section = name.substr(0, dot);
    key = name.substr(dot + 1);
  } else {
    std::vector<std::string> hits;
    for (const auto& [sk, sv] : base) {
      if (sv.is_table() && sv.as_table()->contains(name)) hits.emplace_back(sk.str());
    }
    check(!hits.empty(), ErrorKind::kUsage, "unknown config key '" + name + "'");
    std::string all;
    for (const auto& h : hits) all += (all.empty() ? "" : ", ") + h + "." + name;
    check(hits.size() == 1, ErrorKind::kUsage, "ambiguous config key '" + name + "' (" + all + ")");
    section = hits.front();
    key = name;
  }
  auto* sec = base.get_as<toml::table>(section);
  check(sec != nullptr, ErrorKind::kUsage, "unknown config section '" + section + "'");
  check(sec->contains(key), ErrorKind::kUsage, "unknown config key '" + section + "." + key + "'");
  toml::table parsed;
  try {
    parsed = toml::parse("v = " + text);
  } catch (const toml::parse_error&) {
    parsed.insert("v", text);  // bare words are strings
  }
  assign_checked(*sec, key, *parsed.get("v"), section + "." + key);
}

}  // namespace

RunConfig default_config(const std::string& preset) {
  RunConfig c;
  if (preset == "miniature") {
    c.preset = preset;
    c.model = ModelConfig::miniature();
    c.data.crop_size = 64;
    c.data.frames_per_video = 4;
    c.train.lr = 1e-3;
    c.train.epochs = 200;
    c.train.max_steps = 200;
    c.eval.n_per_class = 2;
  } else {
    check(preset == "full", ErrorKind::kConfig, "unknown preset '" + preset + "' (full or miniature)");
    c.model = ModelConfig::full();
  }
  return c;
}

std::string RunConfig::to_toml() const {
  std::ostringstream out;
  out << to_table(*this) << "\n";
  return out.str();
}

std::string RunConfig::hash() const {
  const auto h = stable_hash(to_toml(), 0);
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunConfig parse_config(const std::string& toml_text, const std::vector<std::string>& overrides) {
  toml::table file;
  try {
    file = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    fail(ErrorKind::kConfig, std::string("malformed config: ") + std::string(e.description()));
  }
  std::string preset = file["preset"].value_or(std::string("full"));
  for (const auto& o : overrides) {
    if (o.rfind("preset=", 0) == 0) preset = o.substr(7);
  }
  auto base = to_table(default_config(preset));
  merge_file(base, file);
  for (const auto& o : overrides) {
    if (o.rfind("preset=", 0) == 0) continue;
    apply_override(base, o);
  }
  return from_table(base);
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  check(in.good(), ErrorKind::kIo, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys{"preset"};
  for (const auto& [sk, sv] : to_table(default_config("full"))) {
    if (!sv.is_table()) continue;
    for (const auto& [k, v] : *sv.as_table()) keys.push_back(std::string(sk.str()) + "." + std::string(k.str()));
  }
  return keys;
}

}  // namespace dfa
