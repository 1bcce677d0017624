#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "udml/encoder.hpp"
#include "udml/errors.hpp"

namespace ad = udml::ad;
using ad::Tensor;
using udml::EmbedMode;
using udml::ModalityEncoder;

namespace {

ModalityEncoder make_encoder(std::uint64_t seed) {
  ModalityEncoder enc({.feat_dim = 5, .hidden = 8, .embed_dim = 4, .trunk_depth = 2});
  ad::Rng rng(seed);
  enc.init(rng);
  return enc;
}

void set_var_head_output(ModalityEncoder& enc, double value) {
  for (auto& w : enc.var_head().weight().mutable_data()) w = 0.0;
  for (auto& b : enc.var_head().bias().mutable_data()) b = value;
}

}  // namespace

TEST(Encoder, ShapesAndParameterNames) {
  const auto enc = make_encoder(1);
  EXPECT_EQ(enc.feat_dim(), 5u);
  EXPECT_EQ(enc.embed_dim(), 4u);
  const auto e = udml::encode(enc, udml::test::random_tensor({3, 5}, 2));
  EXPECT_EQ(e.mu.shape(), (ad::Shape{3, 4}));
  EXPECT_EQ(e.sigma2.shape(), (ad::Shape{3, 4}));
  EXPECT_EQ(enc.parameters().front().name, "trunk.0.weight");
  EXPECT_THROW(udml::encode(enc, Tensor::zeros({3, 6})), udml::DimensionError);
  EXPECT_THROW(ModalityEncoder({.trunk_depth = 0}), udml::DimensionError);
}

TEST(Encoder, VarianceFloorDominatesDeepNegativeHead) {
  auto enc = make_encoder(3);
  set_var_head_output(enc, -50.0);
  const auto e = udml::encode(enc, udml::test::random_tensor({2, 5}, 4));
  for (double v : e.sigma2.data()) EXPECT_NEAR(v, 1e-6, 1e-15);
}

TEST(Encoder, ZeroHeadGivesLn2PlusFloor) {
  auto enc = make_encoder(5);
  set_var_head_output(enc, 0.0);
  const auto e = udml::encode(enc, udml::test::random_tensor({2, 5}, 6));
  for (double v : e.sigma2.data()) EXPECT_NEAR(v, std::numbers::ln2 + 1e-6, 1e-15);
}

TEST(Encoder, BatchEqualsStackedSingles) {
  const auto enc = make_encoder(7);
  const auto x = udml::test::random_tensor({2, 5}, 8);
  const auto both = udml::encode(enc, x);
  for (std::size_t r = 0; r < 2; ++r) {
    const auto one = udml::encode(enc, ad::slice(x, 0, r, r + 1));
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_EQ(both.mu.at(r, j), one.mu.at(0, j));
      EXPECT_EQ(both.sigma2.at(r, j), one.sigma2.at(0, j));
    }
  }
}

TEST(Encoder, VarianceNeverBelowFloor) {
  const auto enc = make_encoder(9);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto e = udml::encode(enc, udml::test::random_tensor({16, 5}, 100 + s, -1e3, 1e3));
    for (double v : e.sigma2.data()) {
      EXPECT_GE(v, udml::kVarianceFloor);
      EXPECT_TRUE(std::isfinite(v));
    }
  }
}

TEST(Encoder, VarianceHeadGradientsMatchFiniteDifferences) {
  const auto enc = make_encoder(10);
  const auto x = udml::test::random_tensor({3, 5}, 11);
  const auto f = [&](const std::vector<Tensor>&) {
    const auto e = udml::encode(enc, x);
    return ad::add(ad::sum(ad::log(e.sigma2)), ad::sum(ad::square(e.mu)));
  };
  EXPECT_LT(udml::test::gradcheck(f, {enc.var_head().weight(), enc.var_head().bias(), enc.mu_head().weight()}), 1e-4);
}

TEST(EmbedSample, EvalReturnsMean) {
  const auto enc = make_encoder(12);
  const auto e = udml::encode(enc, udml::test::random_tensor({4, 5}, 13));
  ad::Rng rng(1);
  const auto z = udml::embed_sample(e, EmbedMode::Eval, rng);
  for (std::size_t i = 0; i < z.numel(); ++i) EXPECT_EQ(z[i], e.mu[i]);
}

TEST(EmbedSample, FloorVarianceStaysNearMean) {
  auto enc = make_encoder(14);
  set_var_head_output(enc, -50.0);
  const auto e = udml::encode(enc, udml::test::random_tensor({64, 5}, 15));
  ad::Rng rng(2);
  ad::Rng eps_rng(2);
  const auto z = udml::embed_sample(e, EmbedMode::Train, rng);
  const auto eps = ad::gaussian_sample(Tensor::zeros(e.mu.shape()), Tensor::full(e.mu.shape(), 1.0), eps_rng);
  for (std::size_t i = 0; i < z.numel(); ++i) {
    EXPECT_LE(std::abs(z[i] - e.mu[i]), std::sqrt(1e-6 + 1e-15) * std::abs(eps[i]) + 1e-15);
  }
}

TEST(EmbedSample, TrainModeIsReproducible) {
  const auto enc = make_encoder(16);
  const auto e = udml::encode(enc, udml::test::random_tensor({8, 5}, 17));
  ad::Rng a(3);
  ad::Rng b(3);
  const auto za = udml::embed_sample(e, EmbedMode::Train, a);
  const auto zb = udml::embed_sample(e, EmbedMode::Train, b);
  bool differs_from_mean = false;
  for (std::size_t i = 0; i < za.numel(); ++i) {
    EXPECT_EQ(za[i], zb[i]);
    differs_from_mean |= za[i] != e.mu[i];
  }
  EXPECT_TRUE(differs_from_mean);
}
