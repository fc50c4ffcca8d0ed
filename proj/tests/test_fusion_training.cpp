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

#include <cmath>
#include <filesystem>
#include <set>

#include "dfa/checkpoint.hpp"
#include "dfa/error.hpp"
#include "dfa/fusion.hpp"
#include "dfa/model.hpp"
#include "dfa/synthetic.hpp"
#include "dfa/training.hpp"
#include "oracles.hpp"

namespace {

dfa::DFAModel mini_model(std::uint64_t seed = 11) {
  const auto cfg = dfa::ModelConfig::miniature();
  dfa::VisionEncoder enc(cfg.encoder);
  enc->init_random(seed);
  torch::manual_seed(static_cast<std::int64_t>(seed));
  return dfa::DFAModel(cfg, enc);
}

dfa::ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const dfa::Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return dfa::ErrorKind::kInvalidArgument;
}

}  // namespace

TEST_SUITE("fusion") {
  TEST_CASE("output shapes") {
    torch::manual_seed(1);
    dfa::FusionClassifier f(dfa::FusionConfig{}, 32);
    auto p = f->fuse_and_classify(torch::randn({2, 20, 32}), torch::randn({2, 8, 32}));
    CHECK(p.logits.sizes() == torch::IntArrayRef({2, 2}));
    CHECK(p.score.sizes() == torch::IntArrayRef({2}));
    CHECK(p.pooled.sizes() == torch::IntArrayRef({2, 32}));
  }

  TEST_CASE("identical rows give identical logits and scores are probabilities") {
    torch::manual_seed(2);
    dfa::FusionClassifier f(dfa::FusionConfig{}, 16);
    auto g = torch::randn({1, 5, 16}).repeat({3, 1, 1});
    auto l = torch::randn({1, 3, 16}).repeat({3, 1, 1});
    auto p = f->fuse_and_classify(g, l);
    CHECK(torch::allclose(p.logits[0], p.logits[2]));
    CHECK(torch::allclose(p.score, torch::softmax(p.logits, -1).select(1, 1)));
    CHECK((p.score >= 0).all().item<bool>());
    CHECK((p.score <= 1).all().item<bool>());
  }

  TEST_CASE("token order within a stream") {
    torch::manual_seed(3);
    auto g = torch::randn({2, 6, 16});
    auto l = torch::randn({2, 4, 16});
    auto perm = torch::randperm(6);
    auto g_perm = g.index_select(1, perm);
    // Without blocks the head sees a mean over tokens.
    dfa::FusionClassifier flat(dfa::FusionConfig{0, 4, 4.0}, 16);
    CHECK(torch::allclose(flat->fuse_and_classify(g, l).logits, flat->fuse_and_classify(g_perm, l).logits,
                          1e-5, 1e-6));
    // Attention blocks without positions are permutation-equivariant, so pooling
    // stays order-free; the two streams, however, are distinguishable.
    dfa::FusionClassifier deep(dfa::FusionConfig{2, 4, 4.0}, 16);
    CHECK(torch::allclose(deep->fuse_and_classify(g, l).logits, deep->fuse_and_classify(g_perm, l).logits,
                          1e-5, 1e-6));
    auto swapped = deep->fuse_and_classify(l.narrow(1, 0, 4), g.narrow(1, 0, 4)).logits;
    auto straight = deep->fuse_and_classify(g.narrow(1, 0, 4), l.narrow(1, 0, 4)).logits;
    CHECK_FALSE(torch::allclose(swapped, straight));
  }

  TEST_CASE("the local stream changes the decision") {
    torch::manual_seed(4);
    dfa::FusionClassifier f(dfa::FusionConfig{}, 16);
    auto g = torch::randn({2, 6, 16});
    auto a = f->fuse_and_classify(g, torch::randn({2, 4, 16})).logits;
    auto b = f->fuse_and_classify(g, torch::randn({2, 4, 16})).logits;
    CHECK_FALSE(torch::allclose(a, b));
  }

  TEST_CASE("errors") {
    dfa::FusionClassifier f(dfa::FusionConfig{}, 16);
    CHECK(kind_of([&] { f->fuse_and_classify(torch::randn({1, 2, 16}), torch::randn({1, 2, 8})); }) ==
          dfa::ErrorKind::kShape);
    CHECK(kind_of([&] { f->fuse_and_classify(std::nullopt, std::nullopt); }) ==
          dfa::ErrorKind::kInvalidArgument);
    CHECK(kind_of([&] { dfa::FusionConfig{1, 3, 4.0}.validate(16); }) == dfa::ErrorKind::kConfig);
  }
}

TEST_SUITE("training") {
  TEST_CASE("loss weights start at one and stay positive") {
    dfa::LossWeights w;
    CHECK(torch::allclose(w->effective(), torch::ones({3})));
    w->raw_global.data().fill_(-30.0);
    CHECK(w->effective()[0].item<float>() > 0.0f);
  }

  TEST_CASE("total loss arithmetic and masking") {
    dfa::LossWeights w;
    dfa::StreamLosses l{torch::tensor(0.2), torch::tensor(0.3), torch::tensor(0.5)};
    CHECK(dfa::total_loss(l, *w).item<double>() == doctest::Approx(1.0).epsilon(1e-6));
    dfa::StreamLosses no_local{torch::tensor(0.2), std::nullopt, torch::tensor(0.5)};
    CHECK(dfa::total_loss(no_local, *w).item<double>() == doctest::Approx(0.7).epsilon(1e-6));
    dfa::StreamLosses bad{torch::tensor(std::nan("")), std::nullopt, std::nullopt};
    CHECK(kind_of([&] { dfa::total_loss(bad, *w); }) == dfa::ErrorKind::kNumerical);
  }

  TEST_CASE("gradient of a raw weight is loss times sigmoid") {
    dfa::LossWeights w;
    w->raw_local.data().fill_(0.3);
    dfa::StreamLosses l{torch::tensor(0.2), torch::tensor(0.7), torch::tensor(0.5)};
    dfa::total_loss(l, *w).backward();
    CHECK(w->raw_local.grad().item<double>() == doctest::Approx(0.7 / (1.0 + std::exp(-0.3))).epsilon(1e-5));
  }

  TEST_CASE("stream losses follow the ablation") {
    auto model = mini_model();
    auto batch = dfa::make_synthetic_samples(4, 64, 3);
    dfa::Ablation ab{true, false, true};
    auto out = model->forward(batch.images, batch.landmarks, ab);
    auto losses = dfa::stream_losses(out, batch.labels);
    CHECK(losses.global.has_value());
    CHECK_FALSE(losses.local.has_value());
    CHECK(losses.fusion.has_value());
    CHECK(kind_of([] { dfa::Ablation{false, false, true}.validate(); }) == dfa::ErrorKind::kConfig);
  }

  TEST_CASE("the optimizer never sees encoder parameters") {
    auto model = mini_model();
    dfa::TrainConfig tc;
    tc.lr = 1e-3;
    dfa::Trainer trainer(model, tc);
    std::set<const void*> enc;
    for (const auto& p : model->encoder()->parameters()) enc.insert(p.unsafeGetTensorImpl());
    std::size_t total = 0;
    for (const auto& group : trainer.optimizer().param_groups()) {
      for (const auto& p : group.params()) {
        CHECK(enc.count(p.unsafeGetTensorImpl()) == 0);
        ++total;
      }
    }
    CHECK(total == trainer.trainable_parameters().size());
  }

  TEST_CASE("short run lowers the loss, moves the weights, keeps the encoder") {
    auto model = mini_model();
    const auto before = model->encoder()->state();
    dfa::TrainConfig tc;
    tc.lr = 1e-3;
    tc.batch_size = 8;
    dfa::Trainer trainer(model, tc);
    auto data = dfa::make_synthetic_samples(8, 64, 5);
    const auto w0 = trainer.loss_weights()->effective().clone();
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 50; ++i) {
      const auto rec = trainer.step(data);
      if (i == 0) first = rec.loss_total;
      last = rec.loss_total;
      for (double w : rec.weights) CHECK(w > 0.0);
    }
    CHECK(last < first);
    CHECK_FALSE(torch::allclose(w0, trainer.loss_weights()->effective()));
    for (const auto& [name, t] : model->encoder()->state().tensors) CHECK(torch::equal(t, before.at(name)));
  }

  TEST_CASE("bundle round trip") {
    auto model = mini_model();
    dfa::TrainConfig tc;
    tc.lr = 1e-3;
    dfa::Trainer trainer(model, tc);
    auto data = dfa::make_synthetic_samples(4, 64, 6);
    trainer.step(data);
    trainer.step(data);
    const auto store = trainer.bundle({2, "abc123", "weights/x.safetensors"});
    for (const auto& [name, t] : store.tensors) CHECK(name.rfind("blocks.", 0) != 0);
    const auto bytes = dfa::serialize_store(store);

    auto other = mini_model(99);
    dfa::Trainer restored(other, tc);
    const auto meta = restored.restore(dfa::deserialize_store(bytes));
    CHECK(meta.epoch == 2);
    CHECK(meta.config_hash == "abc123");
    CHECK(meta.encoder_checkpoint == "weights/x.safetensors");
    for (const auto& [name, t] : dfa::module_state(*model).tensors) {
      CHECK(torch::equal(t, dfa::module_state(*other).at(name)));
    }
    // Same next step from both: the optimizer moments came across too.
    other->encoder()->load_checkpoint(model->encoder()->state());
    const auto a = trainer.step(data).loss_total;
    const auto b = restored.step(data).loss_total;
    CHECK(a == doctest::Approx(b).epsilon(1e-6));
  }

  TEST_CASE("config validation") {
    dfa::TrainConfig tc;
    tc.lr = 0.0;
    CHECK(kind_of([&] { tc.validate(); }) == dfa::ErrorKind::kConfig);
    CHECK(dfa::ablation_patterns().size() == 4);
    CHECK(dfa::ablation_patterns().front().tag() == "G0-L1-F1");
  }
}

TEST_SUITE("gradients") {
  TEST_CASE("every adapter parameter gets a gradient") {
    auto model = mini_model(13);
    auto batch = dfa::make_synthetic_samples(4, 64, 13);
    dfa::LossWeights w;
    auto out = model->forward(batch.images, batch.landmarks);
    dfa::total_loss(dfa::stream_losses(out, batch.labels), *w).backward();
    for (const auto& p : model->adapter->named_parameters()) {
      INFO(p.key());
      REQUIRE(p.value().grad().defined());
      CHECK(p.value().grad().abs().max().item<float>() > 0.0f);
    }
  }

  TEST_CASE("stream losses against finite differences in double") {
    const auto saved = torch::get_default_dtype();
    torch::set_default_dtype(caffe2::TypeMeta::Make<double>());
    auto model = mini_model(17);
    model->to(torch::kFloat64);
    model->encoder()->to(torch::kFloat64);
    auto batch = dfa::make_synthetic_samples(4, 64, 17);
    const auto images = batch.images.to(torch::kFloat64);
    const auto landmarks = batch.landmarks.to(torch::kFloat64);

    double step = 1e-3;
    auto check_param = [&](torch::Tensor param, bool global, const std::string& what) {
      INFO(what << " step " << step);
      auto loss = [&] {
        auto s = dfa::stream_losses(model->forward(images, landmarks), batch.labels);
        return global ? *s.global : *s.local;
      };
      model->zero_grad();
      loss().backward();
      const auto grad = param.grad().view({-1}).clone();
      const auto n = param.numel();
      for (std::int64_t i = 0; i < n; i += std::max<std::int64_t>(1, n / 12)) {
        const double numeric = oracle::central_difference(param, i, step, [&] { return loss().item<double>(); });
        INFO("element " << i << " analytic " << grad[i].item<double>() << " numeric " << numeric);
        CHECK(oracle::relative_error(grad[i].item<double>(), numeric) < 1e-3);
      }
    };
    check_param(model->adapter->sls_proj->weight, true, "sls_proj");
    check_param(model->adapter->token_proj->weight, true, "token_proj");
    // Last convolution of the miniature backbone. Its output goes through a
    // ReLU, and a 1e-3 step pushes enough pre-activations across zero to
    // bias the difference quotient by several percent; 1e-5 stays on one
    // linear piece.
    step = 1e-5;
    check_param(model->local->named_parameters()["backbone.features.4.weight"], false, "conv weight");
    check_param(model->local->named_parameters()["backbone.features.4.bias"], false, "conv bias");
    torch::set_default_dtype(saved);
  }

  TEST_CASE("raw weight gradient matches finite differences") {
    const auto saved = torch::get_default_dtype();
    torch::set_default_dtype(caffe2::TypeMeta::Make<double>());
    dfa::LossWeights w;
    w->raw_global.data().fill_(-0.4);
    dfa::StreamLosses l{torch::tensor(0.61), torch::tensor(0.2), torch::tensor(0.35)};
    dfa::total_loss(l, *w).backward();
    const double numeric = oracle::central_difference(w->raw_global, 0, 1e-3,
                                                      [&] { return dfa::total_loss(l, *w).item<double>(); });
    CHECK(std::fabs(w->raw_global.grad().item<double>() - numeric) < 1e-4);
    CHECK(w->raw_global.grad().item<double>() == doctest::Approx(0.61 / (1.0 + std::exp(0.4))));
    torch::set_default_dtype(saved);
  }
}
