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

#include "dfa/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dfa/error.hpp"

namespace dfa {

LossWeightsImpl::LossWeightsImpl() {
  const double init = std::log(std::exp(1.0) - 1.0);
  raw_global = register_parameter("raw_global", torch::full({}, init));
  raw_local = register_parameter("raw_local", torch::full({}, init));
  raw_fusion = register_parameter("raw_fusion", torch::full({}, init));
}

torch::Tensor LossWeightsImpl::effective() const {
  return torch::softplus(torch::stack({raw_global, raw_local, raw_fusion}));
}

StreamLosses stream_losses(const ModelOutput& output, const torch::Tensor& labels) {
  StreamLosses losses;
  if (output.global_logits) losses.global = torch::cross_entropy_loss(*output.global_logits, labels);
  if (output.local_logits) losses.local = torch::cross_entropy_loss(*output.local_logits, labels);
  if (output.fused_logits) losses.fusion = torch::cross_entropy_loss(*output.fused_logits, labels);
  return losses;
}

torch::Tensor total_loss(const StreamLosses& losses, const LossWeightsImpl& weights) {
  check(losses.global || losses.local || losses.fusion, ErrorKind::kInvalidArgument, "no active loss term");
  torch::Tensor total;
  auto add = [&](const std::optional<torch::Tensor>& loss, const torch::Tensor& raw) {
    if (!loss) return;
    auto term = torch::softplus(raw).to(loss->dtype()) * *loss;
    total = total.defined() ? total + term : term;
  };
  add(losses.global, weights.raw_global);
  add(losses.local, weights.raw_local);
  add(losses.fusion, weights.raw_fusion);
  if (!torch::isfinite(total).item<bool>()) {
    auto show = [](const std::optional<torch::Tensor>& l) {
      return l ? std::to_string(l->item<double>()) : std::string("off");
    };
    fail(ErrorKind::kNumerical, "non-finite total loss (global " + show(losses.global) + ", local " +
                                    show(losses.local) + ", fusion " + show(losses.fusion) + ")");
  }
  return total;
}

void TrainConfig::validate() const {
  check(lr > 0 && std::isfinite(lr), ErrorKind::kConfig, "lr must be positive");
  check(batch_size >= 1, ErrorKind::kConfig, "batch_size must be >= 1");
  check(epochs >= 1, ErrorKind::kConfig, "epochs must be >= 1");
  check(max_steps >= 0, ErrorKind::kConfig, "max_steps must be >= 0");
  ablation.validate();
}

// ---------------------------------------------------------------------------

Trainer::Trainer(DFAModel model, TrainConfig config) : model_(std::move(model)), config_(config) {
  config_.validate();
  for (const auto& item : model_->named_parameters()) named_params_.emplace_back(item.key(), item.value());
  for (const auto& item : weights_->named_parameters()) {
    named_params_.emplace_back("loss_weights." + item.key(), item.value());
  }
  optimizer_ = std::make_unique<torch::optim::Adam>(trainable_parameters(),
                                                    torch::optim::AdamOptions(config_.lr));
}

std::vector<torch::Tensor> Trainer::trainable_parameters() {
  std::vector<torch::Tensor> out;
  for (const auto& [name, p] : named_params_) out.push_back(p);
  return out;
}

namespace {

std::optional<double> value_of(const std::optional<torch::Tensor>& t) {
  if (!t) return std::nullopt;
  return t->item<double>();
}

std::array<double, 3> weights_array(const LossWeightsImpl& w) {
  auto e = w.effective().detach().to(torch::kFloat64);
  return {e[0].item<double>(), e[1].item<double>(), e[2].item<double>()};
}

}  // namespace

StepRecord Trainer::step(const SampleSet& batch) {
  model_->train();
  optimizer_->zero_grad();
  auto output = model_->forward(batch.images, batch.landmarks, config_.ablation);
  auto losses = stream_losses(output, batch.labels);
  auto total = total_loss(losses, *weights_);
  total.backward();
  optimizer_->step();
  ++step_count_;
  StepRecord rec;
  rec.step = step_count_;
  rec.loss_global = value_of(losses.global);
  rec.loss_local = value_of(losses.local);
  rec.loss_fusion = value_of(losses.fusion);
  rec.loss_total = total.item<double>();
  rec.weights = weights_array(*weights_);
  return rec;
}

TrainResult Trainer::train(const SampleSet& train_set, const SampleSet* val_set,
                           const std::optional<std::filesystem::path>& out_dir,
                           const std::function<void(const StepRecord&)>& on_step,
                           const std::function<void(const EpochRecord&)>& on_epoch, const CheckpointMeta& meta) {
  check(train_set.size() > 0, ErrorKind::kConfig, "train split is empty");
  if (out_dir) std::filesystem::create_directories(*out_dir);
  std::mt19937_64 rng(config_.seed);
  TrainResult result;
  double best_score = -1.0;
  const bool use_val = val_set != nullptr && val_set->count_label(Label::kReal) > 0 &&
                       val_set->count_label(Label::kFake) > 0;
  std::vector<std::int64_t> order(static_cast<std::size_t>(train_set.size()));

  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    if (config_.max_steps > 0 && step_count_ >= config_.max_steps) break;
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    double sum_g = 0, sum_l = 0, sum_f = 0, sum_t = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config_.batch_size)) {
      if (config_.max_steps > 0 && step_count_ >= config_.max_steps) break;
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(config_.batch_size));
      auto batch = train_set.select(std::vector<std::int64_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                              order.begin() + static_cast<std::ptrdiff_t>(end)));
      auto s = step(batch);
      s.epoch = epoch;
      if (on_step) on_step(s);
      ++rec.steps;
      sum_g += s.loss_global.value_or(0.0);
      sum_l += s.loss_local.value_or(0.0);
      sum_f += s.loss_fusion.value_or(0.0);
      sum_t += s.loss_total;
      if (s.loss_global) rec.loss_global = 0.0;
      if (s.loss_local) rec.loss_local = 0.0;
      if (s.loss_fusion) rec.loss_fusion = 0.0;
    }
    const double steps = std::max(1, rec.steps);
    if (rec.loss_global) rec.loss_global = sum_g / steps;
    if (rec.loss_local) rec.loss_local = sum_l / steps;
    if (rec.loss_fusion) rec.loss_fusion = sum_f / steps;
    rec.loss_total = sum_t / steps;
    rec.weights = weights_array(*weights_);
    rec.train_accuracy =
        confusion_metrics(score_samples(*model_, train_set, config_.ablation, config_.batch_size).table).accuracy;
    double selection = rec.train_accuracy;
    if (use_val) {
      const auto scored = score_samples(*model_, *val_set, config_.ablation, config_.batch_size);
      rec.val_auc = auc(scored.table);
      rec.val_eer = eer(scored.table).eer;
      selection = *rec.val_auc;
    }
    if (on_epoch) on_epoch(rec);
    result.epochs.push_back(rec);
    result.total_steps = step_count_;
    result.final_train_accuracy = rec.train_accuracy;
    CheckpointMeta m = meta;
    m.epoch = epoch;
    if (selection > best_score) {
      best_score = selection;
      result.best_epoch = epoch;
      if (out_dir) save_store(*out_dir / "best.safetensors", bundle(m));
    }
    if (out_dir) save_store(*out_dir / "last.safetensors", bundle(m));
  }
  return result;
}

TensorStore Trainer::bundle(const CheckpointMeta& meta) const {
  TensorStore store = module_state(*model_);
  store.merge(module_state(*weights_), "loss_weights.");
  const auto& state = optimizer_->state();
  for (const auto& [name, p] : named_params_) {
    auto it = state.find(p.unsafeGetTensorImpl());
    if (it == state.end()) continue;
    const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
    store.put("optim." + name + ".exp_avg", s.exp_avg());
    store.put("optim." + name + ".exp_avg_sq", s.exp_avg_sq());
    store.put("optim." + name + ".step", torch::tensor(s.step(), torch::kInt64));
  }
  store.metadata["format"] = "dfa-bundle-1";
  store.metadata["epoch"] = std::to_string(meta.epoch);
  store.metadata["config_hash"] = meta.config_hash;
  store.metadata["encoder_checkpoint"] = meta.encoder_checkpoint;
  return store;
}

void load_model_bundle(DFAModelImpl& model, const TensorStore& store) {
  TensorStore modules;
  for (const auto& [name, t] : store.tensors) {
    if (name.rfind("adapter.", 0) == 0 || name.rfind("local.", 0) == 0 || name.rfind("fusion.", 0) == 0) {
      modules.tensors[name] = t;
    }
  }
  load_module_state(model, modules);
}

CheckpointMeta Trainer::restore(const TensorStore& store) {
  load_model_bundle(*model_, store);
  load_module_state(*weights_, store.with_prefix("loss_weights."));
  auto& state = optimizer_->state();
  for (const auto& [name, p] : named_params_) {
    const auto key = "optim." + name;
    if (!store.contains(key + ".exp_avg")) continue;
    auto s = std::make_unique<torch::optim::AdamParamState>();
    s->exp_avg(store.at(key + ".exp_avg").to(p.dtype()).clone());
    s->exp_avg_sq(store.at(key + ".exp_avg_sq").to(p.dtype()).clone());
    s->step(store.at(key + ".step").item<std::int64_t>());
    state[p.unsafeGetTensorImpl()] = std::move(s);
  }
  CheckpointMeta meta;
  auto get = [&](const std::string& k) {
    auto it = store.metadata.find(k);
    return it == store.metadata.end() ? std::string() : it->second;
  };
  meta.epoch = get("epoch").empty() ? 0 : std::stoi(get("epoch"));
  meta.config_hash = get("config_hash");
  meta.encoder_checkpoint = get("encoder_checkpoint");
  return meta;
}

// ---------------------------------------------------------------------------

ScoredSamples score_samples(DFAModelImpl& model, const SampleSet& samples, const Ablation& ablation,
                            int batch_size) {
  check(batch_size >= 1, ErrorKind::kInvalidArgument, "batch_size must be >= 1");
  const bool was_training = model.is_training();
  model.eval();
  torch::NoGradGuard no_grad;
  ScoredSamples out;
  std::vector<torch::Tensor> pooled;
  const auto n = samples.size();
  for (std::int64_t start = 0; start < n; start += batch_size) {
    const auto len = std::min<std::int64_t>(batch_size, n - start);
    auto result = model.forward(samples.images.narrow(0, start, len), samples.landmarks.narrow(0, start, len),
                                ablation);
    auto scores = result.score.to(torch::kFloat64).contiguous();
    for (std::int64_t i = 0; i < len; ++i) {
      const auto idx = static_cast<std::size_t>(start + i);
      out.table.rows.push_back({samples.sample_ids[idx], samples.video_ids[idx],
                                static_cast<int>(samples.labels[start + i].item<std::int64_t>()),
                                std::clamp(scores[i].item<double>(), 0.0, 1.0)});
    }
    if (result.pooled) pooled.push_back(*result.pooled);
  }
  if (!pooled.empty()) out.pooled = torch::cat(pooled, 0);
  model.train(was_training);
  return out;
}

std::vector<Ablation> ablation_patterns() {
  return {{false, true, true}, {true, false, true}, {true, true, false}, {true, true, true}};
}

std::vector<AblationRow> ablate(const TrainConfig& base, const std::function<DFAModel()>& make_model,
                                const SampleSet& train_set, const SampleSet& eval_set) {
  std::vector<AblationRow> rows;
  for (const auto& pattern : ablation_patterns()) {
    TrainConfig cfg = base;
    cfg.ablation = pattern;
    Trainer trainer(make_model(), cfg);
    trainer.train(train_set, nullptr);
    const auto scored = score_samples(*trainer.model(), eval_set, pattern, cfg.batch_size);
    rows.push_back({pattern.global_on, pattern.local_on, pattern.ifc_on, auc(scored.table), eer(scored.table).eer});
  }
  return rows;
}

}  // namespace dfa
