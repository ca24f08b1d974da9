#include "isp/features.hpp"
#include "test_util.hpp"

#include "doctest_shim.hpp"

using namespace isp;

TEST_CASE("vgg path: 224 input yields 14x14 maps; frozen and deterministic") {
  auto bank = feat::make_stub_bank(7);
  auto x = oracle::rand_batch(2, 3, 224, 224, 1);
  auto f = bank->vgg_content_features(x);
  CHECK(f.size(0) == 2);
  CHECK(f.size(2) == 14);
  CHECK(f.size(3) == 14);
  CHECK(torch::equal(f, bank->vgg_content_features(x)));

  auto pair_diff = bank->vgg_content_features(x) - bank->vgg_content_features(x.clone());
  CHECK(pair_diff.abs().max().item<float>() == 0.0f);
}

TEST_CASE("vgg features are not rotation invariant") {
  auto bank = feat::make_stub_bank(7);
  auto x = oracle::rand_batch(1, 3, 64, 64, 2);
  auto rot = torch::rot90(x, 2, {2, 3});
  auto d = (bank->vgg_content_features(x) - bank->vgg_content_features(rot)).abs().max();
  CHECK(d.item<float>() > 1e-6f);
}

TEST_CASE("vgg path upsamples small inputs and rejects degenerate ones") {
  auto bank = feat::make_stub_bank(7);
  auto f = bank->vgg_content_features(oracle::rand_batch(1, 3, 16, 16, 3));
  CHECK(f.size(2) == 2);  // upsampled to 32 internally
  CHECK_THROWS(bank->vgg_content_features(torch::rand({1, 3, 4, 4})));
}

TEST_CASE("vit tokens: 196 patch tokens, no CLS row") {
  auto bank = feat::make_stub_bank(7);
  auto t = bank->vit_tokens(oracle::rand_batch(2, 3, 224, 224, 4));
  CHECK(t.sizes() == torch::IntArrayRef({2, 196, bank->vit_embed_dim()}));
  // arbitrary resolution resizes internally
  auto t2 = bank->vit_tokens(oracle::rand_batch(1, 3, 60, 80, 5));
  CHECK(t2.sizes() == torch::IntArrayRef({1, 196, bank->vit_embed_dim()}));
  auto x = oracle::rand_batch(1, 3, 224, 224, 6);
  CHECK(torch::equal(bank->vit_tokens(x), bank->vit_tokens(x)));
}

TEST_CASE("lpips layer features expose the documented channel counts") {
  auto bank = feat::make_stub_bank(7);
  auto gray = feat::to_grayscale3(oracle::rand_batch(1, 3, 64, 64, 8));
  CHECK(bank->lpips_layer_features(gray, feat::LpipsLayer::Lin0).size(1) == 64);
  CHECK(bank->lpips_layer_features(gray, feat::LpipsLayer::Lin3).size(1) == 256);
  CHECK(feat::lpips_layer_channels(feat::LpipsLayer::Lin1) == 192);
  CHECK_THROWS_AS(feat::lpips_layer_from_string("foo"), std::invalid_argument);

  auto a = bank->lpips_layer_features(gray, feat::LpipsLayer::Lin0);
  auto b = bank->lpips_layer_features(gray.clone(), feat::LpipsLayer::Lin0);
  CHECK(torch::equal(a, b));
}

TEST_CASE("perceptual scores vanish at identity and are reproducible") {
  auto bank = feat::make_stub_bank(7);
  auto x = oracle::rand_image(3, 64, 64, 9);
  auto s = bank->perceptual_scores(x, x);
  CHECK(s.lpips.item<double>() < 1e-6);
  CHECK(s.lpips_plus.item<double>() < 1e-6);
  CHECK(std::abs(s.dists.item<double>()) < 1e-6);

  auto y = oracle::rand_image(3, 64, 64, 10);
  auto s1 = bank->perceptual_scores(x, y);
  auto s2 = bank->perceptual_scores(x, y);
  CHECK(s1.lpips.item<double>() == s2.lpips.item<double>());
  CHECK(s1.dists.item<double>() == s2.dists.item<double>());
}

TEST_CASE("perceptual scores: inversion hurts more than tiny noise") {
  auto bank = feat::make_stub_bank(7);
  auto x = oracle::rand_image(3, 64, 64, 11) * 0.8 + 0.1;
  auto inverted = 1.0 - x;
  auto noisy = (x + 0.001 * oracle::rand_image(3, 64, 64, 12)).clamp(0, 1);
  CHECK(bank->perceptual_scores(x, inverted).lpips.item<double>() >
        bank->perceptual_scores(x, noisy).lpips.item<double>());
}

TEST_CASE("perceptual scores reject shape mismatches") {
  auto bank = feat::make_stub_bank(7);
  CHECK_THROWS(bank->perceptual_scores(torch::rand({3, 32, 32}),
                                       torch::rand({3, 64, 64})));
}

TEST_CASE("scores are non-negative for random pairs") {
  auto bank = feat::make_stub_bank(3);
  for (std::uint64_t s : {21, 22, 23}) {
    auto a = oracle::rand_image(3, 48, 48, s);
    auto b = oracle::rand_image(3, 48, 48, s + 100);
    auto sc = bank->perceptual_scores(a, b);
    CHECK(sc.lpips.item<double>() >= 0.0);
    CHECK(sc.lpips_plus.item<double>() >= 0.0);
    CHECK(sc.dists.item<double>() >= 0.0);
  }
}

TEST_CASE("extractor parameters stay frozen through differentiable use") {
  auto bank = feat::make_stub_bank(7);
  const auto before = oracle::param_checksum(bank->frozen_parameters());
  for (const auto& p : bank->frozen_parameters()) CHECK(!p.requires_grad());

  auto x = oracle::rand_image(3, 32, 32, 13).requires_grad_(true);
  auto f = bank->vgg_content_features(x.unsqueeze(0));
  f.square().mean().backward();
  CHECK(x.grad().defined());
  CHECK(x.grad().abs().sum().item<float>() > 0.0f);
  CHECK(oracle::param_checksum(bank->frozen_parameters()) == before);
}

TEST_CASE("stub banks with equal seeds agree; different seeds differ") {
  auto a = feat::make_stub_bank(7);
  auto b = feat::make_stub_bank(7);
  auto c = feat::make_stub_bank(8);
  auto x = oracle::rand_batch(1, 3, 64, 64, 14);
  CHECK(torch::equal(a->vgg_content_features(x), b->vgg_content_features(x)));
  CHECK(!torch::equal(a->vgg_content_features(x), c->vgg_content_features(x)));
}

TEST_CASE("to_grayscale3 uses BT.601 and replicates channels") {
  auto gray = torch::full({3, 4, 4}, 0.42f);
  CHECK((feat::to_grayscale3(gray) - gray).abs().max().item<float>() < 1e-6f);

  auto red = torch::zeros({3, 2, 2});
  red[0] = 1.0;
  auto out = feat::to_grayscale3(red);
  CHECK(out[0][0][0].item<float>() == doctest::Approx(0.299f));
  CHECK(torch::equal(out[0], out[1]));
  CHECK(torch::equal(out[1], out[2]));
}

TEST_CASE("pretrained bank demands an explicit cache") {
  CHECK_THROWS_AS(feat::make_pretrained_bank("/nonexistent/cache"), std::runtime_error);
  CHECK_THROWS_AS(feat::make_bank("bogus", "", 1), std::invalid_argument);
}
