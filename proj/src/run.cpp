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

#include "dfa/run.hpp"

#include <algorithm>
#include <random>

#include "dfa/error.hpp"

namespace dfa {

VisionEncoder make_encoder(const RunConfig& config) {
  VisionEncoder encoder(config.model.encoder);
  if (config.encoder_checkpoint.empty()) {
    encoder->init_random(static_cast<std::uint64_t>(config.encoder_seed));
  } else {
    encoder->load_checkpoint(canonicalize_encoder_store(load_store(config.encoder_checkpoint)));
  }
  return encoder;
}

DFAModel make_model(const RunConfig& config, VisionEncoder encoder) {
  torch::manual_seed(config.train.seed);
  return DFAModel(config.model, std::move(encoder));
}

std::vector<FeatureRow> export_features(DFAModelImpl& model, const SampleSet& samples, int n_per_class,
                                        std::uint64_t seed, int batch_size) {
  check(n_per_class >= 1, ErrorKind::kInvalidArgument, "n_per_class must be >= 1");
  const auto reals = samples.count_label(Label::kReal);
  const auto fakes = samples.count_label(Label::kFake);
  check(reals >= n_per_class && fakes >= n_per_class, ErrorKind::kData,
        "need " + std::to_string(n_per_class) + " samples per class, have " + std::to_string(reals) + " real and " +
            std::to_string(fakes) + " fake");
  std::mt19937_64 rng(seed);
  std::vector<std::int64_t> chosen;
  for (Label label : {Label::kReal, Label::kFake}) {
    std::vector<std::int64_t> idx;
    for (std::int64_t i = 0; i < samples.size(); ++i) {
      if (samples.labels[i].item<std::int64_t>() == static_cast<std::int64_t>(label)) idx.push_back(i);
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(n_per_class));
    std::sort(idx.begin(), idx.end());
    chosen.insert(chosen.end(), idx.begin(), idx.end());
  }
  const auto subset = samples.select(chosen);
  const auto scored = score_samples(model, subset, Ablation{}, batch_size);
  check(scored.pooled.defined(), ErrorKind::kShape, "model produced no pooled features");
  auto pooled = scored.pooled.to(torch::kFloat64).contiguous();
  std::vector<FeatureRow> rows;
  for (std::int64_t i = 0; i < subset.size(); ++i) {
    FeatureRow row;
    row.sample_id = subset.sample_ids[static_cast<std::size_t>(i)];
    row.label = static_cast<int>(subset.labels[i].item<std::int64_t>());
    auto r = pooled[i];
    row.values.assign(r.data_ptr<double>(), r.data_ptr<double>() + r.numel());
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace dfa
