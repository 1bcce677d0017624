#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "udml/errors.hpp"
#include "udml/fusion.hpp"
#include "udml/trainer.hpp"

namespace ad = udml::ad;
using ad::Tensor;
using udml::FusionHead;
using udml::Strategy;

namespace {

Tensor row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor::matrix(1, n, std::move(values));
}

FusionHead make_head(std::size_t m, std::uint64_t seed) {
  FusionHead head(m, 3, 4, Strategy::Udml);
  ad::Rng rng(seed);
  head.init(rng);
  for (auto& b : head.classifier().bias().mutable_data()) b = 0.25;
  return head;
}

}  // namespace

TEST(UnbiasedWeights, Examples) {
  const auto even = udml::unbiased_weights(row({1, 1}), std::vector<double>{1, 1});
  EXPECT_DOUBLE_EQ(even[0], 0.5);
  EXPECT_DOUBLE_EQ(even[1], 0.5);
  const auto biased = udml::unbiased_weights(row({1, 1}), std::vector<double>{1.6, 0.4});
  EXPECT_NEAR(biased[0], 0.2, 1e-12);
  EXPECT_NEAR(biased[1], 0.8, 1e-12);
  const auto noisy = udml::unbiased_weights(row({4, 1}), std::vector<double>{1, 1});
  EXPECT_NEAR(noisy[0], 0.2, 1e-12);
  EXPECT_NEAR(noisy[1], 0.8, 1e-12);
  EXPECT_THROW(udml::unbiased_weights(row({1, 1}), std::vector<double>{1, 1, 1}), udml::DimensionError);
}

TEST(UnbiasedWeights, RowsAreDistributions) {
  const auto rho = udml::test::random_tensor({50, 3}, 1, 1e-3, 100.0);
  const auto w = udml::unbiased_weights(rho, std::vector<double>{0.05, 1.2, 1.75});
  for (std::size_t r = 0; r < 50; ++r) {
    double s = 0.0;
    for (std::size_t m = 0; m < 3; ++m) {
      EXPECT_GE(w.at(r, m), 0.0);
      s += w.at(r, m);
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(UnbiasedWeights, JointRescalingInvariance) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.01, 50.0);
  const std::vector<double> alpha{1.3, 0.7};
  for (int trial = 0; trial < 200; ++trial) {
    const double c = u(rng);
    const double r1 = u(rng), r2 = u(rng);
    const auto a = udml::unbiased_weights(row({r1, r2}), alpha);
    const auto b = udml::unbiased_weights(row({c * r1, c * r2}), alpha);
    EXPECT_NEAR(a[0], b[0], 1e-9);
    EXPECT_NEAR(a[1], b[1], 1e-9);
  }
}

TEST(UnbiasedWeights, RatioLaw) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.01, 50.0);
  std::uniform_real_distribution<double> ua(0.05, 1.95);
  for (int trial = 0; trial < 200; ++trial) {
    const double r1 = u(rng), r2 = u(rng), a1 = ua(rng);
    const std::vector<double> alpha{a1, 2.0 - a1};
    const auto w = udml::unbiased_weights(row({r1, r2}), alpha);
    EXPECT_NEAR(w[0] / w[1], (r2 * alpha[1]) / (r1 * alpha[0]), 1e-9 * (r2 * alpha[1]) / (r1 * alpha[0]));
  }
}

TEST(UnbiasedWeights, MonotoneInOwnUncertainty) {
  const std::vector<double> alpha{1.1, 0.6, 1.3};
  double last = 1.0;
  for (double r = 0.001; r < 200.0; r *= 1.5) {
    const double w = udml::unbiased_weights(row({r, 2.0, 0.5}), alpha)[0];
    EXPECT_LT(w, last);
    last = w;
  }
}

TEST(PeWeights, Examples) {
  const auto s = udml::test::random_tensor({4, 3}, 4, 0.1, 2.0);
  const Tensor same[] = {s, s};
  const auto u = udml::pe_baseline_weights(same);
  for (double v : u.data()) EXPECT_DOUBLE_EQ(v, 0.5);
  const Tensor means[] = {Tensor::matrix(1, 2, {1.0, 3.0}), Tensor::matrix(1, 2, {1.0, 1.0})};
  const auto w = udml::pe_baseline_weights(means);
  EXPECT_NEAR(w[0], 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(w[1], 2.0 / 3.0, 1e-12);
  const auto pe = udml::pe_uncertainty(means);
  EXPECT_DOUBLE_EQ(pe[0], 2.0);
  EXPECT_DOUBLE_EQ(pe[1], 1.0);
}

TEST(PeWeights, RowsSumToOne) {
  const Tensor s2[] = {udml::test::random_tensor({30, 5}, 5, 1e-6, 9.0), udml::test::random_tensor({30, 5}, 6, 1e-6, 9.0),
                       udml::test::random_tensor({30, 5}, 7, 1e-6, 9.0)};
  const auto w = udml::pe_baseline_weights(s2);
  for (std::size_t r = 0; r < 30; ++r) EXPECT_NEAR(w.at(r, 0) + w.at(r, 1) + w.at(r, 2), 1.0, 1e-9);
}

TEST(Fuse, UniformWeightsEqualStaticConcatenation) {
  const auto head = make_head(2, 8);
  const Tensor z[] = {udml::test::random_tensor({5, 3}, 9), udml::test::random_tensor({5, 3}, 10)};
  const auto fused = udml::fuse(head, z, udml::static_weights(5, 2));
  const auto reference = head.classifier().forward(ad::concat(z, 1));
  for (std::size_t i = 0; i < fused.numel(); ++i) EXPECT_EQ(fused[i], reference[i]);
}

TEST(Fuse, ZeroWeightSilencesModality) {
  const auto head = make_head(2, 11);
  const auto w = Tensor::matrix(2, 2, {1, 0, 1, 0});
  const Tensor z[] = {udml::test::random_tensor({2, 3}, 12), udml::test::random_tensor({2, 3}, 13)};
  const Tensor other[] = {z[0], udml::test::random_tensor({2, 3}, 14, -50.0, 50.0)};
  const auto a = udml::fuse(head, z, w);
  const auto b = udml::fuse(head, other, w);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Fuse, ScaleFactorsAreMTimesWeights) {
  const auto head = make_head(2, 15);
  const Tensor z[] = {udml::test::random_tensor({3, 3}, 16), udml::test::random_tensor({3, 3}, 17)};
  const auto w = Tensor::matrix(3, 2, {0.8, 0.2, 0.8, 0.2, 0.8, 0.2});
  const auto fused = udml::fuse(head, z, w);
  const Tensor scaled[] = {ad::mul_scalar(z[0], 1.6), ad::mul_scalar(z[1], 0.4)};
  const auto reference = head.classifier().forward(ad::concat(scaled, 1));
  for (std::size_t i = 0; i < fused.numel(); ++i) EXPECT_NEAR(fused[i], reference[i], 1e-12);
}

TEST(Fuse, ShapeErrors) {
  const auto head = make_head(2, 18);
  const Tensor one[] = {Tensor::zeros({2, 3})};
  EXPECT_THROW(udml::fuse(head, one, udml::static_weights(2, 2)), udml::DimensionError);
  const Tensor z[] = {Tensor::zeros({2, 3}), Tensor::zeros({2, 4})};
  EXPECT_THROW(udml::fuse(head, z, udml::static_weights(2, 2)), udml::DimensionError);
  const Tensor ok[] = {Tensor::zeros({2, 3}), Tensor::zeros({2, 3})};
  EXPECT_THROW(udml::fuse(head, ok, udml::static_weights(3, 2)), udml::DimensionError);
  EXPECT_THROW(udml::parse_strategy("attention"), udml::ConfigError);
}

TEST(DropModality, DroppedInputHasNoInfluence) {
  const auto head = make_head(2, 19);
  const auto w = udml::static_weights(4, 2);
  const Tensor z[] = {udml::test::random_tensor({4, 3}, 20), udml::test::random_tensor({4, 3}, 21)};
  const Tensor other[] = {udml::test::random_tensor({4, 3}, 22, -40.0, 40.0), z[1]};
  const auto a = udml::drop_modality_logits(head, z, w, 0);
  const auto b = udml::drop_modality_logits(head, other, w, 0);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(DropModality, SingleModalityDropGivesBias) {
  const auto head = make_head(1, 23);
  const Tensor z[] = {udml::test::random_tensor({2, 3}, 24)};
  const auto logits = udml::drop_modality_logits(head, z, udml::static_weights(2, 1), 0);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(logits.at(r, k), head.classifier().bias()[k]);
  }
}
