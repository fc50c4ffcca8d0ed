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

#include "dfa/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dfa/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dfa {

const torch::Tensor& TensorStore::at(const std::string& name) const {
  auto it = tensors.find(name);
  check(it != tensors.end(), ErrorKind::kLoad, "checkpoint has no tensor '" + name + "'");
  return it->second;
}

void TensorStore::put(const std::string& name, const torch::Tensor& t) {
  tensors[name] = t.detach().contiguous().clone();
}

void TensorStore::merge(const TensorStore& other, const std::string& prefix) {
  for (const auto& [name, t] : other.tensors) tensors[prefix + name] = t;
  for (const auto& [k, v] : other.metadata) metadata[k] = v;
}

TensorStore TensorStore::with_prefix(const std::string& prefix) const {
  TensorStore out;
  for (const auto& [name, t] : tensors) {
    if (name.rfind(prefix, 0) == 0) out.tensors[name.substr(prefix.size())] = t;
  }
  out.metadata = metadata;
  return out;
}

namespace {

std::string dtype_tag(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "F32";
    case torch::kFloat64: return "F64";
    case torch::kFloat16: return "F16";
    case torch::kBFloat16: return "BF16";
    case torch::kInt64: return "I64";
    case torch::kInt32: return "I32";
    case torch::kUInt8: return "U8";
    case torch::kBool: return "BOOL";
    default: break;
  }
  fail(ErrorKind::kLoad, std::string("unsupported tensor dtype ") + c10::toString(t));
}

torch::ScalarType dtype_from_tag(const std::string& tag) {
  if (tag == "F32") return torch::kFloat32;
  if (tag == "F64") return torch::kFloat64;
  if (tag == "F16") return torch::kFloat16;
  if (tag == "BF16") return torch::kBFloat16;
  if (tag == "I64") return torch::kInt64;
  if (tag == "I32") return torch::kInt32;
  if (tag == "U8") return torch::kUInt8;
  if (tag == "BOOL") return torch::kBool;
  fail(ErrorKind::kLoad, "unsupported dtype tag '" + tag + "'");
}

}  // namespace

std::string serialize_store(const TensorStore& store) {
  json header = json::object();
  if (!store.metadata.empty()) header["__metadata__"] = store.metadata;
  std::size_t offset = 0;
  std::vector<torch::Tensor> ordered;
  for (const auto& [name, t] : store.tensors) {
    auto c = t.detach().to(torch::kCPU).contiguous();
    const std::size_t bytes = static_cast<std::size_t>(c.numel()) * c.element_size();
    header[name] = {{"dtype", dtype_tag(c.scalar_type())},
                    {"shape", c.sizes().vec()},
                    {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
    ordered.push_back(c);
  }
  std::string head = header.dump();
  // Pad the header to an 8-byte boundary, as the format recommends.
  while ((head.size() + 8) % 8 != 0) head.push_back(' ');

  std::string out;
  out.reserve(8 + head.size() + offset);
  const std::uint64_t n = head.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((n >> (8 * i)) & 0xff));
  out += head;
  for (const auto& c : ordered) {
    out.append(static_cast<const char*>(c.data_ptr()), static_cast<std::size_t>(c.numel()) * c.element_size());
  }
  return out;
}

TensorStore deserialize_store(const std::string& bytes) {
  check(bytes.size() >= 8, ErrorKind::kLoad, "checkpoint truncated: missing header length");
  std::uint64_t n = 0;
  for (int i = 0; i < 8; ++i) n |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[static_cast<std::size_t>(i)])) << (8 * i);
  check(8 + n <= bytes.size(), ErrorKind::kLoad, "checkpoint truncated: header overruns file");
  json header;
  try {
    header = json::parse(bytes.substr(8, n));
  } catch (const json::exception& e) {
    fail(ErrorKind::kLoad, std::string("malformed checkpoint header: ") + e.what());
  }
  const std::size_t data_start = 8 + n;
  TensorStore store;
  for (auto it = header.begin(); it != header.end(); ++it) {
    if (it.key() == "__metadata__") {
      store.metadata = it.value().get<std::map<std::string, std::string>>();
      continue;
    }
    const auto& info = it.value();
    const auto dtype = dtype_from_tag(info.at("dtype").get<std::string>());
    const auto shape = info.at("shape").get<std::vector<std::int64_t>>();
    const auto offsets = info.at("data_offsets").get<std::vector<std::size_t>>();
    check(offsets.size() == 2 && offsets[0] <= offsets[1] && data_start + offsets[1] <= bytes.size(),
          ErrorKind::kLoad, "bad data offsets for '" + it.key() + "'");
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
    const std::size_t expected = static_cast<std::size_t>(t.numel()) * t.element_size();
    check(offsets[1] - offsets[0] == expected, ErrorKind::kLoad,
          "byte size does not match shape for '" + it.key() + "'");
    if (expected > 0) std::memcpy(t.data_ptr(), bytes.data() + data_start + offsets[0], expected);
    store.tensors[it.key()] = t;
  }
  return store;
}

void save_store(const fs::path& path, const TensorStore& store) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  check(out.good(), ErrorKind::kIo, "cannot write checkpoint " + path.string());
  const std::string bytes = serialize_store(store);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TensorStore load_store(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), ErrorKind::kIo, "cannot read checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_store(ss.str());
}

TensorStore module_state(const torch::nn::Module& module) {
  TensorStore out;
  for (const auto& p : module.named_parameters(/*recurse=*/true)) out.put(p.key(), p.value());
  for (const auto& b : module.named_buffers(/*recurse=*/true)) out.put(b.key(), b.value());
  return out;
}

void load_module_state(torch::nn::Module& module, const TensorStore& store) {
  torch::NoGradGuard no_grad;
  std::vector<std::string> missing;
  auto assign = [&](const std::string& name, torch::Tensor& dst) {
    auto it = store.tensors.find(name);
    if (it == store.tensors.end()) {
      missing.push_back(name);
      return;
    }
    check(it->second.sizes() == dst.sizes(), ErrorKind::kLoad,
          "shape mismatch for '" + name + "': checkpoint " + c10::str(it->second.sizes()) +
              ", expected " + c10::str(dst.sizes()));
    dst.copy_(it->second.to(dst.scalar_type()));
  };
  for (auto& p : module.named_parameters(true)) assign(p.key(), p.value());
  for (auto& b : module.named_buffers(true)) assign(b.key(), b.value());
  if (!missing.empty()) {
    std::string msg = "checkpoint is missing required tensors:";
    for (const auto& m : missing) msg += " " + m;
    fail(ErrorKind::kLoad, msg);
  }
}

namespace {

struct NameRule {
  std::regex published;
  std::string internal_fmt;  // $1 = block index
  std::regex internal;
  std::string published_fmt;
};

const std::vector<NameRule>& encoder_name_rules() {
  // Published CLIP visual tower naming -> internal encoder naming.
  static const std::vector<std::pair<std::string, std::string>> kPairs = {
      {"conv1.weight", "patch_embed.weight"},
      {"class_embedding", "cls_token"},
      {"positional_embedding", "pos_embed"},
      {"ln_pre.weight", "norm_pre.weight"},
      {"ln_pre.bias", "norm_pre.bias"},
      {"ln_post.weight", "norm_post.weight"},
      {"ln_post.bias", "norm_post.bias"},
      {"transformer.resblocks.(\\d+).ln_1.weight", "blocks.$1.norm1.weight"},
      {"transformer.resblocks.(\\d+).ln_1.bias", "blocks.$1.norm1.bias"},
      {"transformer.resblocks.(\\d+).attn.in_proj_weight", "blocks.$1.attn.qkv.weight"},
      {"transformer.resblocks.(\\d+).attn.in_proj_bias", "blocks.$1.attn.qkv.bias"},
      {"transformer.resblocks.(\\d+).attn.out_proj.weight", "blocks.$1.attn.proj.weight"},
      {"transformer.resblocks.(\\d+).attn.out_proj.bias", "blocks.$1.attn.proj.bias"},
      {"transformer.resblocks.(\\d+).ln_2.weight", "blocks.$1.norm2.weight"},
      {"transformer.resblocks.(\\d+).ln_2.bias", "blocks.$1.norm2.bias"},
      {"transformer.resblocks.(\\d+).mlp.c_fc.weight", "blocks.$1.mlp.fc1.weight"},
      {"transformer.resblocks.(\\d+).mlp.c_fc.bias", "blocks.$1.mlp.fc1.bias"},
      {"transformer.resblocks.(\\d+).mlp.c_proj.weight", "blocks.$1.mlp.fc2.weight"},
      {"transformer.resblocks.(\\d+).mlp.c_proj.bias", "blocks.$1.mlp.fc2.bias"},
  };
  static const std::vector<NameRule> kRules = [] {
    std::vector<NameRule> rules;
    for (const auto& [pub, in] : kPairs) {
      auto escape = [](std::string s) {
        std::string out;
        for (std::size_t i = 0; i < s.size(); ++i) {
          if (s[i] == '.') {
            out += "\\.";
          } else {
            out += s[i];
          }
        }
        return out;
      };
      std::string internal_pattern = escape(in);
      internal_pattern = std::regex_replace(internal_pattern, std::regex("\\$1"), "(\\d+)");
      std::string published_fmt = pub;
      published_fmt = std::regex_replace(published_fmt, std::regex("\\(\\\\d\\+\\)"), "$$1");
      rules.push_back({std::regex("visual\\." + escape(pub)), in, std::regex(internal_pattern),
                       "visual." + published_fmt});
    }
    return rules;
  }();
  return kRules;
}

}  // namespace

std::optional<std::string> internal_encoder_name(const std::string& published) {
  for (const auto& rule : encoder_name_rules()) {
    std::smatch m;
    if (std::regex_match(published, m, rule.published)) {
      return m.format(rule.internal_fmt);
    }
  }
  return std::nullopt;
}

std::optional<std::string> published_encoder_name(const std::string& internal) {
  for (const auto& rule : encoder_name_rules()) {
    std::smatch m;
    if (std::regex_match(internal, m, rule.internal)) {
      return m.format(rule.published_fmt);
    }
  }
  return std::nullopt;
}

TensorStore canonicalize_encoder_store(const TensorStore& store) {
  TensorStore out;
  out.metadata = store.metadata;
  for (const auto& [name, t] : store.tensors) {
    if (auto mapped = internal_encoder_name(name)) {
      out.tensors[*mapped] = t;
    } else if (published_encoder_name(name)) {
      out.tensors[name] = t;
    }
  }
  return out;
}

}  // namespace dfa
