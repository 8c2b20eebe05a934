#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "pmuvar/features.hpp"

using namespace pmuvar;

namespace {

// Pairwise sign-change count, valid when no value sits exactly on the level.
std::size_t brute_crossings(const std::vector<double>& x, double level) {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < x.size(); ++i) {
    if ((x[i] - level) * (x[i + 1] - level) < 0) ++n;
  }
  return n;
}

std::vector<double> random_window(std::mt19937_64& rng) {
  std::exponential_distribution<double> e(0.3);
  std::vector<double> s(10);
  for (auto& v : s) v = e(rng);
  s[std::uniform_int_distribution<std::size_t>(0, 9)(rng)] = 20.0 + e(rng);
  return s;
}

}  // namespace

TEST(ExtractFeatures, SingleSpikeWindow) {
  std::vector<double> s = {0, 0, 10, 5, 0, 0, 0, 0, 0, 0};
  FeatureVector f = extract_features(s, 4.0);
  EXPECT_EQ(f.max_dist, 10.0);
  EXPECT_EQ(f.argmax_index, 2.0);
  EXPECT_EQ(f.count_above_T, 2.0);
  EXPECT_EQ(f.return_index, 4.0);
  EXPECT_EQ(f.index_diff, 2.0);
  EXPECT_DOUBLE_EQ(f.avg_dist, 1.5);
  // sorted: eight zeros, 5, 10; decile k sits at 0-based rank 0.9k
  EXPECT_DOUBLE_EQ(f.deciles[8], 5.5);
  EXPECT_DOUBLE_EQ(f.deciles[7], 1.0);
  EXPECT_EQ(f.deciles[6], 0.0);
}

TEST(ExtractFeatures, ConstantWindowNeverReturns) {
  std::vector<double> s(10, 8.0);
  FeatureVector f = extract_features(s, 4.0);
  EXPECT_EQ(f.max_dist, 8.0);
  EXPECT_EQ(f.avg_dist, 8.0);
  for (double d : f.deciles) EXPECT_EQ(d, 8.0);
  EXPECT_EQ(f.argmax_index, 0.0);
  EXPECT_EQ(f.osc_25, 0.0);
  EXPECT_EQ(f.osc_50, 0.0);
  EXPECT_EQ(f.osc_75, 0.0);
  EXPECT_EQ(f.return_index, 10.0);
  EXPECT_EQ(f.count_above_T, 10.0);
}

TEST(ExtractFeatures, AlternatingWindowCrossings) {
  std::vector<double> s = {2, 9, 2, 9, 2, 9, 2, 9, 2, 2};
  FeatureVector f = extract_features(s, 4.0);
  std::vector<double> normalized = s;
  for (auto& v : normalized) v /= 9.0;
  // signs - + - + - + - + - -: eight changes
  EXPECT_EQ(brute_crossings(normalized, 0.5), 8u);
  EXPECT_EQ(f.osc_50, 8.0);
  EXPECT_EQ(f.osc_25, 8.0);
  EXPECT_EQ(f.osc_75, 8.0);
}

TEST(ExtractFeatures, CrossingsMatchBruteForceOnRandomWindows) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 500; ++i) {
    auto s = random_window(rng);
    FeatureVector f = extract_features(s, 4.0);
    std::vector<double> normalized = s;
    for (auto& v : normalized) v /= f.max_dist;
    EXPECT_EQ(f.osc_25, static_cast<double>(brute_crossings(normalized, 0.25)));
    EXPECT_EQ(f.osc_50, static_cast<double>(brute_crossings(normalized, 0.50)));
    EXPECT_EQ(f.osc_75, static_cast<double>(brute_crossings(normalized, 0.75)));
  }
}

TEST(ExtractFeatures, StructuralInvariants) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 500; ++i) {
    auto s = random_window(rng);
    FeatureVector f = extract_features(s, 4.0);
    for (std::size_t d = 1; d < 9; ++d) EXPECT_LE(f.deciles[d - 1], f.deciles[d]);
    EXPECT_LE(f.deciles[8], f.max_dist);
    EXPECT_GE(f.argmax_index, 0.0);
    EXPECT_LT(f.argmax_index, 10.0);
    EXPECT_GE(f.count_above_T, 1.0);
    EXPECT_EQ(f.index_diff, f.return_index - f.argmax_index);
    EXPECT_EQ(FeatureVector::from_array(f.to_array()), f);
  }
}

TEST(ExtractFeatures, ScaleEquivariance) {
  std::mt19937_64 rng(3);
  for (double lambda : {0.5, 3.0, 1e3}) {
    auto s = random_window(rng);
    std::vector<double> scaled = s;
    for (auto& v : scaled) v *= lambda;
    FeatureVector a = extract_features(s, 4.0);
    FeatureVector b = extract_features(scaled, 4.0 * lambda);
    EXPECT_EQ(a.argmax_index, b.argmax_index);
    EXPECT_EQ(a.osc_25, b.osc_25);
    EXPECT_EQ(a.osc_50, b.osc_50);
    EXPECT_EQ(a.osc_75, b.osc_75);
    EXPECT_EQ(a.count_above_T, b.count_above_T);
    EXPECT_EQ(a.return_index, b.return_index);
    EXPECT_EQ(a.index_diff, b.index_diff);
    EXPECT_NEAR(b.max_dist, lambda * a.max_dist, 1e-12 * b.max_dist);
    EXPECT_NEAR(b.avg_dist, lambda * a.avg_dist, 1e-12 * b.max_dist);
    for (std::size_t d = 0; d < 9; ++d) EXPECT_NEAR(b.deciles[d], lambda * a.deciles[d], 1e-12 * b.max_dist);
  }
}

TEST(ExtractFeatures, DecilesArePermutationInvariant) {
  std::mt19937_64 rng(4);
  auto s = random_window(rng);
  FeatureVector a = extract_features(s, 4.0);
  bool order_feature_changed = false;
  for (int i = 0; i < 20; ++i) {
    std::shuffle(s.begin(), s.end(), rng);
    FeatureVector b = extract_features(s, 4.0);
    EXPECT_EQ(a.deciles, b.deciles);
    EXPECT_EQ(a.max_dist, b.max_dist);
    EXPECT_EQ(a.count_above_T, b.count_above_T);
    order_feature_changed |= a.argmax_index != b.argmax_index || a.return_index != b.return_index;
  }
  EXPECT_TRUE(order_feature_changed);
}

TEST(ExtractFeatures, Errors) {
  EXPECT_THROW(extract_features(std::vector<double>{}, 4.0), LengthError);
  EXPECT_THROW(extract_features(std::vector<double>{1, 2, 4}, 4.0), ValidationError);
  EXPECT_THROW(FeatureVector::from_array(std::vector<double>(17)), ArityError);
}

TEST(FeatureNames, EighteenDistinct) {
  std::vector<std::string_view> names(kFeatureNames.begin(), kFeatureNames.end());
  std::sort(names.begin(), names.end());
  EXPECT_EQ(std::unique(names.begin(), names.end()), names.end());
  EXPECT_EQ(kFeatureNames.size(), 18u);
}
