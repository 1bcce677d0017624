#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "udml/dependency.hpp"
#include "udml/errors.hpp"

namespace ad = udml::ad;
using ad::Tensor;

namespace {

double sum_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST(DependencyScores, WorkedExample) {
  const auto full = Tensor::matrix(1, 2, {2, 0});
  const Tensor dropped[] = {Tensor::matrix(1, 2, {1, 1}), Tensor::matrix(1, 2, {2, 0})};
  EXPECT_EQ(udml::dependency_scores(full, dropped), (std::vector<double>{2.0, 0.0}));
}

TEST(DependencyScores, IdenticalLogitsGiveZero) {
  const auto full = udml::test::random_tensor({8, 3}, 1);
  const Tensor dropped[] = {full, full, full};
  for (double d : udml::dependency_scores(full, dropped)) EXPECT_EQ(d, 0.0);
}

TEST(DependencyScores, MatchesRowLoop) {
  const auto full = udml::test::random_tensor({8, 4}, 2);
  const Tensor dropped[] = {udml::test::random_tensor({8, 4}, 3), udml::test::random_tensor({8, 4}, 4)};
  const auto d = udml::dependency_scores(full, dropped);
  for (std::size_t m = 0; m < 2; ++m) {
    double total = 0.0;
    for (std::size_t r = 0; r < 8; ++r) {
      double row = 0.0;
      for (std::size_t k = 0; k < 4; ++k) row += std::abs(full.at(r, k) - dropped[m].at(r, k));
      total += row;
    }
    EXPECT_EQ(d[m], total / 8.0);
  }
  const Tensor bad[] = {Tensor::zeros({8, 3})};
  EXPECT_THROW(udml::dependency_scores(full, bad), udml::DimensionError);
}

TEST(NormalizeAlpha, Examples) {
  EXPECT_EQ(udml::normalize_alpha(std::vector<double>{1, 1}, 2), (std::vector<double>{1, 1}));
  const auto a = udml::normalize_alpha(std::vector<double>{3, 1}, 2);
  EXPECT_DOUBLE_EQ(a[0], 1.5);
  EXPECT_DOUBLE_EQ(a[1], 0.5);
  EXPECT_EQ(udml::normalize_alpha(std::vector<double>{0, 0, 0}, 3), (std::vector<double>{1, 1, 1}));
  EXPECT_THROW(udml::normalize_alpha(std::vector<double>{1, -1}, 2), udml::DomainError);
  EXPECT_THROW(udml::normalize_alpha(std::vector<double>{1, 1}, 3), udml::DimensionError);
}

TEST(NormalizeAlpha, FloorRedistributesMass) {
  const auto a = udml::normalize_alpha(std::vector<double>{1000, 1}, 2);
  EXPECT_DOUBLE_EQ(a[1], udml::kAlphaFloor);
  EXPECT_NEAR(a[0], 2.0 - udml::kAlphaFloor, 1e-12);
  const auto b = udml::normalize_alpha(std::vector<double>{6, 3, 0}, 3);
  EXPECT_DOUBLE_EQ(b[2], udml::kAlphaFloor);
  EXPECT_NEAR(b[0] / b[1], 2.0, 1e-12);
  EXPECT_NEAR(sum_of(b), 3.0, 1e-12);
}

TEST(NormalizeAlpha, SumAndFloorHoldForRandomScores) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> mcount(2, 5);
  std::exponential_distribution<double> score(1.0);
  std::bernoulli_distribution tiny(0.3);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t m = mcount(rng);
    std::vector<double> d(m);
    for (auto& v : d) v = tiny(rng) ? 1e-4 * score(rng) : score(rng);
    const auto a = udml::normalize_alpha(d, m);
    EXPECT_NEAR(sum_of(a), static_cast<double>(m), 1e-12);
    for (double v : a) EXPECT_GE(v, udml::kAlphaFloor);
  }
}

TEST(NormalizeAlpha, ScaleCovariance) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.01, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::vector<double> d{u(rng), u(rng), u(rng)};
    const double c = u(rng) * 10.0;
    const std::vector<double> scaled{c * d[0], c * d[1], c * d[2]};
    const auto a = udml::normalize_alpha(d, 3);
    const auto b = udml::normalize_alpha(scaled, 3);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(DependencyState, DecayZeroTracksLatestScores) {
  udml::DependencyState state(2, 0.0);
  EXPECT_EQ(state.alpha(), (std::vector<double>{1, 1}));
  state.update(std::vector<double>{3, 1});
  EXPECT_DOUBLE_EQ(state.alpha()[0], 1.5);
  EXPECT_DOUBLE_EQ(state.alpha()[1], 0.5);
  EXPECT_EQ(state.updates(), 1u);
}

TEST(DependencyState, ConstantStreamFollowsGeometricSeries) {
  const std::vector<double> d{0.7, 0.2};
  udml::DependencyState state(2, 0.99);
  for (int n = 1; n <= 2000; ++n) {
    state.update(d);
    const double mass = 1.0 - std::pow(0.99, n);
    EXPECT_NEAR(state.raw_ema()[0], mass * d[0], 1e-12);
    EXPECT_NEAR(state.raw_ema()[1], mass * d[1], 1e-12);
  }
  const auto target = udml::normalize_alpha(d, 2);
  EXPECT_NEAR(state.alpha()[0], target[0], 1e-6);
  EXPECT_NEAR(state.alpha()[1], target[1], 1e-6);
}

TEST(DependencyState, ZeroStreamStaysUniform) {
  udml::DependencyState state(2, 0.99);
  for (int i = 0; i < 50; ++i) state.update(std::vector<double>{0, 0});
  EXPECT_EQ(state.alpha(), (std::vector<double>{1, 1}));
}

TEST(DependencyState, InvariantsAfterEveryUpdate) {
  udml::DependencyState state(3, 0.9);
  std::mt19937_64 rng(7);
  std::exponential_distribution<double> score(1.0);
  for (int i = 0; i < 300; ++i) {
    state.update(std::vector<double>{score(rng), 0.01 * score(rng), score(rng)});
    EXPECT_NEAR(sum_of(state.alpha()), 3.0, 1e-12);
    for (double a : state.alpha()) EXPECT_GE(a, udml::kAlphaFloor);
  }
  EXPECT_THROW(udml::DependencyState(2, 1.0), udml::ConfigError);
  EXPECT_THROW(state.update(std::vector<double>{1, 1}), udml::DimensionError);
}
