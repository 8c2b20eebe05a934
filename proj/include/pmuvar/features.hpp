#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "pmuvar/errors.hpp"

namespace pmuvar {

inline constexpr std::size_t kNumFeatures = 18;

inline constexpr std::array<std::string_view, kNumFeatures> kFeatureNames = {
    "max_dist",  "avg_dist",  "count_above_T", "decile_1", "decile_2",     "decile_3",
    "decile_4",  "decile_5",  "decile_6",      "decile_7", "decile_8",     "decile_9",
    "argmax_index", "osc_25", "osc_50",        "osc_75",   "return_index", "index_diff"};

struct FeatureVector {
  double max_dist = 0.0;
  double avg_dist = 0.0;
  double count_above_T = 0.0;
  std::array<double, 9> deciles{};
  double argmax_index = 0.0;
  double osc_25 = 0.0;
  double osc_50 = 0.0;
  double osc_75 = 0.0;
  double return_index = 0.0;
  double index_diff = 0.0;

  std::array<double, kNumFeatures> to_array() const {
    std::array<double, kNumFeatures> a{};
    a[0] = max_dist;
    a[1] = avg_dist;
    a[2] = count_above_T;
    for (std::size_t i = 0; i < 9; ++i) a[3 + i] = deciles[i];
    a[12] = argmax_index;
    a[13] = osc_25;
    a[14] = osc_50;
    a[15] = osc_75;
    a[16] = return_index;
    a[17] = index_diff;
    return a;
  }

  static FeatureVector from_array(std::span<const double> a) {
    if (a.size() != kNumFeatures) throw ArityError("feature vector needs 18 values");
    FeatureVector f;
    f.max_dist = a[0];
    f.avg_dist = a[1];
    f.count_above_T = a[2];
    for (std::size_t i = 0; i < 9; ++i) f.deciles[i] = a[3 + i];
    f.argmax_index = a[12];
    f.osc_25 = a[13];
    f.osc_50 = a[14];
    f.osc_75 = a[15];
    f.return_index = a[16];
    f.index_diff = a[17];
    return f;
  }

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

// Quantile by linear interpolation between order statistics at h = (n-1) q.
inline double interpolated_quantile(std::span<const double> sorted, double q) {
  const double h = static_cast<double>(sorted.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// Sign changes of (x_t - level). Points exactly on the level keep the previous side.
inline std::size_t level_crossings(std::span<const double> x, double level) {
  std::size_t count = 0;
  int side = 0;
  for (double v : x) {
    int s = v > level ? 1 : (v < level ? -1 : 0);
    if (s == 0) continue;
    if (side != 0 && s != side) ++count;
    side = s;
  }
  return count;
}

inline FeatureVector extract_features(std::span<const double> scores, double threshold) {
  if (scores.empty()) throw LengthError("feature window is empty");
  const auto n = scores.size();

  FeatureVector f;
  const auto max_it = std::max_element(scores.begin(), scores.end());
  f.max_dist = *max_it;
  f.argmax_index = static_cast<double>(max_it - scores.begin());

  double sum = 0.0;
  std::size_t above = 0;
  for (double s : scores) {
    sum += s;
    if (s > threshold) ++above;
  }
  if (above == 0) throw ValidationError("no score above threshold: window is not an event");
  f.avg_dist = sum / static_cast<double>(n);
  f.count_above_T = static_cast<double>(above);

  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t d = 0; d < 9; ++d) f.deciles[d] = interpolated_quantile(sorted, static_cast<double>(d + 1) / 10.0);

  std::vector<double> normalized(scores.begin(), scores.end());
  if (f.max_dist > 0.0) {
    for (auto& v : normalized) v /= f.max_dist;
  }
  f.osc_25 = static_cast<double>(level_crossings(normalized, 0.25));
  f.osc_50 = static_cast<double>(level_crossings(normalized, 0.50));
  f.osc_75 = static_cast<double>(level_crossings(normalized, 0.75));

  // Smallest i with every score at i.. at or below T; n when the last point is still above.
  std::size_t ret = n;
  while (ret > 0 && scores[ret - 1] <= threshold) --ret;
  f.return_index = static_cast<double>(ret);
  f.index_diff = f.return_index - f.argmax_index;
  return f;
}

}  // namespace pmuvar
