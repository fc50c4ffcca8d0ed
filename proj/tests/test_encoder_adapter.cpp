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

#include <random>

#include "dfa/checkpoint.hpp"
#include "dfa/encoder.hpp"
#include "dfa/error.hpp"
#include "dfa/global_adapter.hpp"
#include "oracles.hpp"

using dfa::EncoderConfig;
using dfa::VisionEncoder;

namespace {

VisionEncoder mini_encoder(std::uint64_t seed = 1, EncoderConfig cfg = EncoderConfig::miniature()) {
  VisionEncoder enc(cfg);
  enc->init_random(seed);
  return enc;
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

TEST_SUITE("encoder") {
  TEST_CASE("random init is frozen and seeded") {
    auto a = mini_encoder(3);
    auto b = mini_encoder(3);
    for (const auto& p : a->parameters()) CHECK_FALSE(p.requires_grad());
    auto x = torch::randn({2, 3, 64, 64});
    CHECK(torch::equal(a->forward_frozen(x).final_cls, b->forward_frozen(x).final_cls));
  }

  TEST_CASE("uninitialized and misshapen input") {
    VisionEncoder enc(EncoderConfig::miniature());
    CHECK(kind_of([&] { enc->forward_frozen(torch::zeros({1, 3, 64, 64})); }) == dfa::ErrorKind::kUninitialized);
    auto ready = mini_encoder();
    CHECK(kind_of([&] { ready->forward_frozen(torch::zeros({1, 3, 32, 32})); }) == dfa::ErrorKind::kShape);
  }

  TEST_CASE("tap shapes") {
    auto enc = mini_encoder();
    const auto taps = enc->forward_frozen(torch::randn({2, 3, 64, 64}));
    CHECK(taps.taps.size() == 3);
    CHECK(taps.taps.at(2).sizes() == torch::IntArrayRef({2, 16, 64}));
    CHECK(taps.final_cls.sizes() == torch::IntArrayRef({2, 64}));
    CHECK(taps.final_visual.sizes() == torch::IntArrayRef({2, 16, 64}));
    CHECK_FALSE(taps.final_sls.has_value());
  }

  TEST_CASE("published names load into the internal layout") {
    auto src = mini_encoder(5);
    dfa::TensorStore published;
    for (const auto& [name, t] : src->state().tensors) {
      const auto pub = dfa::published_encoder_name(name);
      REQUIRE(pub.has_value());
      CHECK(dfa::internal_encoder_name(*pub) == name);
      published.put(*pub, t);
    }
    published.put("text_projection", torch::zeros({2, 2}));  // ignored
    VisionEncoder dst(EncoderConfig::miniature());
    dst->load_checkpoint(published);
    auto x = torch::randn({1, 3, 64, 64});
    CHECK(torch::equal(src->forward_frozen(x).final_cls, dst->forward_frozen(x).final_cls));
    CHECK(dfa::internal_encoder_name("visual.transformer.resblocks.3.attn.in_proj_weight") ==
          "blocks.3.attn.qkv.weight");

    auto missing = published;
    missing.tensors.erase("visual.ln_post.weight");
    VisionEncoder e2(EncoderConfig::miniature());
    CHECK(kind_of([&] { e2->load_checkpoint(missing); }) == dfa::ErrorKind::kLoad);
    auto wrong = published;
    wrong.put("visual.positional_embedding", torch::zeros({3, 64}));
    CHECK(kind_of([&] { e2->load_checkpoint(wrong); }) == dfa::ErrorKind::kLoad);
  }

  TEST_CASE("injection leaves original tokens untouched") {
    auto enc = mini_encoder(2);
    auto x = torch::randn({2, 3, 64, 64});
    auto bias = torch::randn({2, 4, 3, 4, 4}) * 5;
    const auto vanilla = enc->forward_frozen(x);
    const auto injected = enc->forward_injected(x, bias, 3);
    CHECK(torch::equal(vanilla.final_cls, injected.final_cls));
    CHECK(torch::equal(vanilla.final_visual, injected.final_visual));
    REQUIRE(injected.final_sls.has_value());
    CHECK(injected.final_sls->sizes() == torch::IntArrayRef({2, 3, 64}));
  }

  TEST_CASE("shadow path matches the joint-sequence reference") {
    auto enc = mini_encoder(4);
    for (int trial = 0; trial < 5; ++trial) {
      auto x = torch::randn({2, 3, 64, 64});
      auto bias = torch::randn({2, 4, 2, 4, 4}) * 3;
      const auto ref = oracle::joint_reference(*enc, x, bias, 2);
      const auto mine = enc->forward_injected(x, bias, 2);
      CHECK(torch::allclose(ref.cls, mine.final_cls, 1e-5, 1e-5));
      CHECK(torch::allclose(ref.visual, mine.final_visual, 1e-5, 1e-5));
      CHECK(torch::allclose(ref.sls, *mine.final_sls, 1e-4, 1e-4));
    }
  }

  TEST_CASE("zero bias reduces to vanilla attention over the full set") {
    auto enc = mini_encoder(6);
    torch::NoGradGuard g;
    const auto taps = enc->forward_frozen(torch::randn({2, 3, 64, 64}));
    const int layer = 3;
    const auto& xin = taps.layer_inputs.at(layer);
    auto cls = xin.narrow(1, 0, 1);
    auto full = torch::cat({xin.narrow(1, 1, 16), cls, cls}, 1);
    auto update = enc->shadow_attention_update(cls, full, torch::zeros({2, 4, 1, 18}), layer);
    auto& blk = *enc->blocks[layer - 1]->as<dfa::BlockImpl>();
    auto vanilla = blk.attn->forward(blk.norm1->forward(full)).narrow(1, 17, 1);
    CHECK((update - vanilla).abs().max().item<float>() < 1e-6);
  }

  TEST_CASE("saturated bias selects one value vector") {
    auto cfg = EncoderConfig::miniature();
    cfg.num_heads = 1;
    auto enc = mini_encoder(7, cfg);
    torch::NoGradGuard g;
    const auto taps = enc->forward_frozen(torch::randn({1, 3, 64, 64}));
    const auto& xin = taps.layer_inputs.at(4);
    auto cls = xin.narrow(1, 0, 1);
    auto full = torch::cat({xin.narrow(1, 1, 16), cls, cls}, 1);
    for (int k : {0, 5, 15}) {
      auto grid = torch::full({1, 1, 1, 4, 4}, -40.0);
      grid[0][0][0][k / 4][k % 4] = 40.0;
      auto update = enc->shadow_attention_update(cls, full, enc->flatten_bias(grid), 4);
      auto& blk = *enc->blocks[3]->as<dfa::BlockImpl>();
      auto v = blk.attn->project(blk.norm1->forward(full), 2);  // [1, 1, L, 64]
      auto expected = blk.attn->proj->forward(v[0][0][k]);
      CHECK((update[0][0] - expected).abs().max().item<float>() < 1e-4);
      auto rows = enc->shadow_attention_weights(cls, full, enc->flatten_bias(grid), 4);
      CHECK((rows.sum(-1) - 1).abs().max().item<float>() < 1e-6);
    }
  }

  TEST_CASE("bias errors") {
    auto enc = mini_encoder();
    const auto taps = enc->forward_frozen(torch::randn({1, 3, 64, 64}));
    CHECK(kind_of([&] { enc->run_shadow(taps, torch::zeros({1, 3, 2, 4, 4}), 2); }) == dfa::ErrorKind::kConfig);
    CHECK(kind_of([&] { enc->run_shadow(taps, torch::zeros({1, 4, 2, 3, 4}), 2); }) == dfa::ErrorKind::kShape);
  }

  TEST_CASE("gradient reaches the bias") {
    auto enc = mini_encoder();
    const auto taps = enc->forward_frozen(torch::randn({1, 3, 64, 64}));
    auto bias = torch::zeros({1, 4, 2, 4, 4}, torch::requires_grad());
    // A plain sum of LayerNorm outputs is flat in its input; use a random readout.
    auto out = enc->run_shadow(taps, bias, 2);
    (out * torch::randn_like(out)).sum().backward();
    CHECK(bias.grad().abs().sum().item<float>() > 0);
  }
}

TEST_SUITE("global_adapter") {
  TEST_CASE("contraction matches the loop oracle") {
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<int> dim(1, 5);
    for (int trial = 0; trial < 20; ++trial) {
      const int n = dim(rng), lq = dim(rng), h = dim(rng), d = dim(rng), gh = dim(rng), gw = dim(rng);
      auto q = torch::randn({n, lq, h, d}, torch::kFloat64);
      auto v = torch::randn({n, h, d, gh, gw}, torch::kFloat64);
      auto mine = dfa::GlobalAdapterImpl::contract_bias(q, v);
      auto ref = oracle::bias_loops(q, v);
      CHECK(((mine - ref).abs() / ref.abs().clamp_min(1e-10)).max().item<double>() < 1e-5);
      // float32 stays within single-precision rounding of the sum.
      auto single = dfa::GlobalAdapterImpl::contract_bias(q.to(torch::kFloat32), v.to(torch::kFloat32));
      CHECK(torch::allclose(single.to(torch::kFloat64), ref, 1e-4, 1e-5));
    }
  }

  TEST_CASE("compute_bias goes through both projections") {
    torch::manual_seed(2);
    dfa::GlobalAdapter adapter(dfa::AdapterConfig::miniature(), EncoderConfig::miniature(), 16);
    auto q_attn = torch::randn({2, 4, 32});
    auto v_attn = torch::randn({2, 32, 4, 4});
    auto bias = adapter->compute_bias(q_attn, v_attn);
    CHECK(bias.sizes() == torch::IntArrayRef({2, 4, 4, 4, 4}));
    auto ref = oracle::bias_loops(adapter->project_queries(q_attn), adapter->project_visual(v_attn));
    CHECK(torch::allclose(bias.to(torch::kFloat64), ref, 1e-5, 1e-6));
  }

  TEST_CASE("forward shapes and grid resampling") {
    auto enc = mini_encoder();
    torch::manual_seed(3);
    auto cfg = dfa::AdapterConfig::miniature();
    cfg.patch_size = 8;  // 8x8 adapter grid against the 4x4 encoder grid
    dfa::GlobalAdapter adapter(cfg, enc->config(), 16);
    auto x = torch::randn({2, 3, 64, 64});
    const auto taps = enc->forward_frozen(x);
    const auto out = adapter->forward(x, taps);
    CHECK(out.bias.sizes() == torch::IntArrayRef({2, 4, 4, 4, 4}));
    CHECK(out.final_tokens.sizes() == torch::IntArrayRef({2, 64, 32}));
    auto sls = enc->run_shadow(taps, out.bias, 4);
    const auto g = adapter->produce_global_features(sls, out.final_tokens);
    CHECK(g.g_fmp.sizes() == torch::IntArrayRef({2, 68, 16}));
    CHECK(g.aux_logits.sizes() == torch::IntArrayRef({2, 2}));
  }

  TEST_CASE("head count must match the encoder") {
    auto cfg = dfa::AdapterConfig::miniature();
    cfg.num_bias_heads = 3;
    CHECK(kind_of([&] { dfa::GlobalAdapter(cfg, EncoderConfig::miniature(), 16); }) == dfa::ErrorKind::kConfig);
  }

  TEST_CASE("taps reach the adapter tokens") {
    auto enc = mini_encoder();
    torch::manual_seed(4);
    dfa::GlobalAdapter adapter(dfa::AdapterConfig::miniature(), enc->config(), 16);
    auto x = torch::randn({1, 3, 64, 64});
    auto taps = enc->forward_frozen(x);
    const auto a = adapter->forward(x, taps).final_tokens;
    taps.taps[2] = taps.taps[2] + 1.0;
    const auto b = adapter->forward(x, taps).final_tokens;
    CHECK_FALSE(torch::allclose(a, b));
  }
}

TEST_SUITE("global_adapter") {
  TEST_CASE("degenerate sum and bilinearity") {
    auto v = torch::randn({2, 3, 1, 4, 5}, torch::kFloat64);
    auto b = dfa::GlobalAdapterImpl::contract_bias(torch::ones({2, 6, 3, 1}, torch::kFloat64), v);
    for (int q = 0; q < 6; ++q) CHECK(torch::equal(b.select(2, q), v.select(2, 0)));

    auto q = torch::randn({2, 4, 3, 5}, torch::kFloat64);
    auto w = torch::randn({2, 3, 5, 4, 4}, torch::kFloat64);
    const auto base = dfa::GlobalAdapterImpl::contract_bias(q, w);
    CHECK(torch::allclose(dfa::GlobalAdapterImpl::contract_bias(q * 2.5, w), base * 2.5, 1e-12, 1e-12));
  }

  TEST_CASE("bias of one sample ignores the others") {
    torch::manual_seed(5);
    dfa::GlobalAdapter adapter(dfa::AdapterConfig::miniature(), EncoderConfig::miniature(), 16);
    auto q = torch::randn({3, 4, 32});
    auto v = torch::randn({3, 32, 4, 4});
    const auto before = adapter->compute_bias(q, v);
    q[1] += torch::randn({4, 32});
    v[2] += torch::randn({32, 4, 4});
    const auto after = adapter->compute_bias(q, v);
    CHECK(torch::equal(before[0], after[0]));
    CHECK_FALSE(torch::allclose(before[1], after[1]));
  }

  TEST_CASE("tap projection is affine") {
    torch::manual_seed(6);
    dfa::GlobalAdapter adapter(dfa::AdapterConfig::miniature(), EncoderConfig::miniature(), 16);
    auto tap = torch::randn({2, 16, 64});
    torch::NoGradGuard g;
    const auto zero = adapter->project_tap(torch::zeros_like(tap), 0);
    const auto once = adapter->project_tap(tap, 0);
    const auto twice = adapter->project_tap(tap * 2, 0);
    CHECK(torch::allclose(twice - once, once - zero, 1e-5, 1e-5));
  }

  TEST_CASE("global features follow batch order") {
    torch::manual_seed(7);
    dfa::GlobalAdapter adapter(dfa::AdapterConfig::miniature(), EncoderConfig::miniature(), 64);
    auto sls = torch::randn({2, 4, 64});
    auto tokens = torch::randn({2, 16, 32});
    const auto a = adapter->produce_global_features(sls, tokens);
    CHECK(a.g_fmp.sizes() == torch::IntArrayRef({2, 20, 64}));
    auto flip = torch::tensor({1, 0});
    const auto b = adapter->produce_global_features(sls.index_select(0, flip), tokens.index_select(0, flip));
    CHECK(torch::allclose(a.g_fmp.index_select(0, flip), b.g_fmp));
    CHECK(torch::allclose(a.aux_logits.index_select(0, flip), b.aux_logits));
  }

  TEST_CASE("use_image off still produces a bias") {
    auto enc = mini_encoder();
    torch::manual_seed(8);
    auto cfg = dfa::AdapterConfig::miniature();
    cfg.use_image = false;
    dfa::GlobalAdapter adapter(cfg, enc->config(), 16);
    auto x = torch::randn({1, 3, 64, 64});
    const auto taps = enc->forward_frozen(x);
    const auto a = adapter->forward(x, taps);
    const auto b = adapter->forward(torch::zeros_like(x), taps);
    // Without the image path only the taps matter.
    CHECK(torch::equal(a.bias, b.bias));
  }
}
