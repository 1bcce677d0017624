#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "udml/errors.hpp"
#include "udml/harness.hpp"
#include "udml/synthdata.hpp"

namespace ad = udml::ad;
using ad::Tensor;
using udml::CorruptionKind;
using udml::SyntheticSpec;

namespace {

SyntheticSpec small_spec(double separation, double stddev) {
  SyntheticSpec spec;
  spec.modalities = {{.feat_dim = 8, .separation = separation, .intra_class_std = stddev},
                     {.feat_dim = 6, .separation = separation, .intra_class_std = stddev}};
  spec.n_train = 1500;
  spec.n_val = 500;
  spec.n_test = 2000;
  return spec;
}

bool identical(const udml::ModalityBatch& a, const udml::ModalityBatch& b) {
  if (a.labels != b.labels || a.modalities() != b.modalities()) return false;
  for (std::size_t m = 0; m < a.modalities(); ++m) {
    if (a.features[m].shape() != b.features[m].shape()) return false;
    for (std::size_t i = 0; i < a.features[m].numel(); ++i) {
      if (a.features[m][i] != b.features[m][i]) return false;
    }
  }
  return true;
}

std::vector<udml::FeatureStats> stats_of(const udml::ModalityBatch& b) {
  std::vector<udml::FeatureStats> out;
  for (const auto& f : b.features) out.push_back(udml::feature_stats(f));
  return out;
}

}  // namespace

TEST(Generate, ShapesAndLabels) {
  const auto data = udml::generate(small_spec(8.0, 2.0));
  EXPECT_EQ(data.num_classes, 6u);
  EXPECT_EQ(data.train.size(), 1500u);
  EXPECT_EQ(data.val.size(), 500u);
  EXPECT_EQ(data.test.size(), 2000u);
  EXPECT_EQ(data.train.features[0].shape(), (ad::Shape{1500, 8}));
  EXPECT_EQ(data.train.features[1].shape(), (ad::Shape{1500, 6}));
  std::set<std::size_t> seen(data.train.labels.begin(), data.train.labels.end());
  EXPECT_EQ(seen.size(), 6u);
  EXPECT_EQ(*seen.rbegin(), 5u);
}

TEST(Generate, WellSeparatedClassesAreLinearlySeparable) {
  const auto data = udml::generate(small_spec(10.0, 0.1));
  for (std::size_t m = 0; m < 2; ++m) {
    EXPECT_GE(udml::linear_probe_accuracy(data.train, data.val, m, data.num_classes, 1), 0.99) << m;
  }
}

TEST(Generate, NegligibleSeparationIsChance) {
  const auto data = udml::generate(small_spec(1e-9, 1.0));
  for (std::size_t m = 0; m < 2; ++m) {
    EXPECT_NEAR(udml::linear_probe_accuracy(data.train, data.test, m, data.num_classes, 2), 1.0 / 6.0, 0.03) << m;
  }
}

TEST(Generate, SameSeedSameData) {
  const auto spec = small_spec(8.0, 2.0);
  const auto a = udml::generate(spec);
  const auto b = udml::generate(spec);
  EXPECT_TRUE(identical(a.train, b.train));
  EXPECT_TRUE(identical(a.val, b.val));
  EXPECT_TRUE(identical(a.test, b.test));
  auto other = spec;
  other.seed += 1;
  EXPECT_FALSE(identical(a.train, udml::generate(other).train));
}

TEST(Generate, SplitsAreDisjoint) {
  const auto data = udml::generate(small_spec(8.0, 2.0));
  std::set<std::vector<double>> rows;
  std::size_t total = 0;
  for (const auto* split : {&data.train, &data.val, &data.test}) {
    const auto& f = split->features[0];
    for (std::size_t i = 0; i < split->size(); ++i) {
      rows.emplace(f.data().begin() + i * 8, f.data().begin() + (i + 1) * 8);
      ++total;
    }
  }
  EXPECT_EQ(rows.size(), total);
}

TEST(Generate, EasyModalityBeatsWarpedHardOne) {
  const auto data = udml::generate(udml::asymmetric_spec());
  const double a = udml::linear_probe_accuracy(data.train, data.val, 0, data.num_classes, 3);
  const double b = udml::linear_probe_accuracy(data.train, data.val, 1, data.num_classes, 3);
  EXPECT_GE(a - b, 0.10) << "A " << a << " B " << b;
}

TEST(Generate, SpecValidation) {
  auto spec = small_spec(8.0, 2.0);
  spec.num_classes = 1;
  EXPECT_THROW(spec.validate(), udml::ConfigError);
  spec = small_spec(0.0, 2.0);
  EXPECT_THROW(spec.validate(), udml::ConfigError);
  spec = small_spec(8.0, 2.0);
  spec.modalities[1].feat_dim = 1;
  EXPECT_THROW(spec.validate(), udml::ConfigError);
  spec = small_spec(8.0, 2.0);
  spec.n_val = 0;
  EXPECT_THROW(udml::generate(spec), udml::ConfigError);
}

TEST(Gaussian, ZeroEpsilonIsIdentity) {
  const auto x = udml::generate(small_spec(8.0, 2.0)).val.features[0];
  ad::Rng rng(1);
  const auto y = udml::inject_gaussian(x, 0.0, rng);
  EXPECT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
  EXPECT_THROW(udml::inject_gaussian(x, -1.0, rng), udml::DomainError);
}

TEST(Gaussian, NoiseStdMatchesEpsilon) {
  const auto x = Tensor::zeros({1000, 100});
  ad::Rng rng(2);
  const auto y = udml::inject_gaussian(x, 5.0, rng);
  double mean = 0.0;
  for (double v : y.data()) mean += v;
  mean /= 1e5;
  double var = 0.0;
  for (double v : y.data()) var += (v - mean) * (v - mean);
  EXPECT_NEAR(std::sqrt(var / 1e5), 5.0, 0.05);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_TRUE(std::isfinite(y[i]));
}

TEST(Salt, RateAndCap) {
  EXPECT_EQ(udml::salt_probability(0.0), 0.0);
  EXPECT_EQ(udml::salt_probability(5.0), 0.25);
  EXPECT_EQ(udml::salt_probability(10.0), 0.5);
  EXPECT_EQ(udml::salt_probability(20.0), 0.5);
  const auto x = Tensor::full({1000, 100}, 1.0);
  const udml::FeatureStats stats{std::vector<double>(100, 0.0), std::vector<double>(100, 2.0)};
  for (double eps : {10.0, 20.0}) {
    ad::Rng rng(3);
    const auto y = udml::inject_salt(x, eps, stats, rng);
    std::size_t replaced = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) {
      if (y[i] != 1.0) {
        ++replaced;
        EXPECT_EQ(std::abs(y[i]), 10.0);
      }
    }
    EXPECT_NEAR(replaced / 1e5, 0.5, 0.01) << eps;
  }
  ad::Rng rng(4);
  const auto same = udml::inject_salt(x, 0.0, stats, rng);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(same[i], x[i]);
  EXPECT_THROW(udml::inject_salt(x, -1.0, stats, rng), udml::DomainError);
}

TEST(Salt, PureGivenRngState) {
  const auto x = udml::generate(small_spec(8.0, 2.0)).val.features[1];
  const auto stats = udml::feature_stats(x);
  ad::Rng a(5);
  ad::Rng b(5);
  const auto ya = udml::inject_salt(x, 5.0, stats, a);
  const auto yb = udml::inject_salt(x, 5.0, stats, b);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(ya[i], yb[i]);
}

TEST(CorruptSplit, ZeroFractionLeavesDataUnchanged) {
  const auto data = udml::generate(small_spec(8.0, 2.0));
  ad::Rng rng(6);
  const auto out = udml::corrupt_split(data.test, 0.0, CorruptionKind::Gaussian, 10.0, {}, rng);
  EXPECT_TRUE(identical(out, data.test));
  for (const auto& tag : out.tags) EXPECT_FALSE(tag.has_value());
}

TEST(CorruptSplit, FullFractionHitsOneModalityPerSample) {
  const auto data = udml::generate(small_spec(8.0, 2.0));
  ad::Rng rng(7);
  const auto stats = stats_of(data.train);
  const auto out = udml::corrupt_split(data.test, 1.0, CorruptionKind::Salt, 10.0, stats, rng);
  ASSERT_EQ(out.tags.size(), 2000u);
  std::size_t counts[2] = {0, 0};
  for (std::size_t i = 0; i < out.size(); ++i) {
    ASSERT_TRUE(out.tags[i].has_value());
    const auto m = out.tags[i]->modality;
    ++counts[m];
    const std::size_t other = 1 - m;
    const std::size_t d = data.test.features[other].size(1);
    for (std::size_t j = 0; j < d; ++j) EXPECT_EQ(out.features[other][i * d + j], data.test.features[other][i * d + j]);
  }
  EXPECT_NEAR(counts[0] / 2000.0, 0.5, 0.03);
  EXPECT_NEAR(counts[1] / 2000.0, 0.5, 0.03);
}

TEST(CorruptSplit, FractionWeightsAndDeterminism) {
  const auto data = udml::generate(small_spec(8.0, 2.0));
  const std::vector<double> weights{0.2, 0.8};
  ad::Rng a(8);
  ad::Rng b(8);
  const auto x = udml::corrupt_split(data.test, 0.5, CorruptionKind::Gaussian, 5.0, {}, a, weights);
  const auto y = udml::corrupt_split(data.test, 0.5, CorruptionKind::Gaussian, 5.0, {}, b, weights);
  EXPECT_TRUE(identical(x, y));
  std::size_t tagged = 0, second = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    ASSERT_EQ(x.tags[i].has_value(), y.tags[i].has_value());
    if (!x.tags[i]) continue;
    EXPECT_EQ(x.tags[i]->modality, y.tags[i]->modality);
    ++tagged;
    second += x.tags[i]->modality == 1;
  }
  EXPECT_EQ(tagged, 1000u);
  EXPECT_NEAR(second / 1000.0, 0.8, 0.04);
  EXPECT_THROW(udml::corrupt_split(data.test, 1.5, CorruptionKind::Gaussian, 5.0, {}, a), udml::DomainError);
  EXPECT_THROW(udml::corrupt_split(data.test, 0.5, CorruptionKind::Salt, 5.0, {}, a), udml::ContractError);
  EXPECT_THROW(udml::corrupt_modality(data.test, 2, CorruptionKind::Gaussian, 5.0, {}, a), udml::IndexError);
}

TEST(DatasetFile, RoundTripIsExact) {
  const auto data = udml::generate(small_spec(8.0, 2.0));
  const auto dir = std::filesystem::temp_directory_path() / "udml_test_synthdata";
  std::filesystem::create_directories(dir);
  udml::write_dataset(dir / "val.csv", data.val, data.num_classes);
  const auto loaded = udml::read_dataset(dir / "val.csv");
  EXPECT_EQ(loaded.num_classes, data.num_classes);
  EXPECT_TRUE(identical(loaded.batch, data.val));
  EXPECT_THROW(udml::read_dataset(dir / "absent.csv"), udml::IoError);
  {
    std::ofstream os(dir / "bad.csv");
    os << "# udml-dataset v1 K=3 M=1 dims=2\n7,0.5,0.5\n";
  }
  EXPECT_THROW(udml::read_dataset(dir / "bad.csv"), udml::IoError);
}
