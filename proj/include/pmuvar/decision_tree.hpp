#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "pmuvar/anomaly_class.hpp"
#include "pmuvar/errors.hpp"
#include "pmuvar/timestamp.hpp"

namespace pmuvar {

struct TrainConfig {
  int max_depth = 8;
  std::size_t min_leaf = 5;
  double min_impurity_decrease = 1e-6;
  std::uint64_t seed = 0;  // cross-validation shuffling

  void validate() const {
    if (max_depth < 1) throw ConfigError("max_depth must be >= 1");
    if (min_leaf < 1) throw ConfigError("min_leaf must be >= 1");
    if (min_impurity_decrease < 0.0) throw ConfigError("min_impurity_decrease must be >= 0");
  }
};

struct TreeNode {
  // Internal nodes: rows with feature < threshold go left, >= go right.
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  // Every node carries the statistics of the training rows routed to it.
  std::vector<std::size_t> histogram;
  int predicted = 0;
  double fraction = 0.0;  // share of all training rows
  int depth = 0;

  bool is_leaf() const { return feature < 0; }
  std::size_t samples() const { return std::accumulate(histogram.begin(), histogram.end(), std::size_t{0}); }
  // Share of the node's rows belonging to its predicted class.
  double purity() const {
    const auto n = samples();
    return n == 0 ? 0.0 : static_cast<double>(histogram[static_cast<std::size_t>(predicted)]) / static_cast<double>(n);
  }
};

inline double gini(std::span<const std::size_t> histogram) {
  std::size_t n = 0;
  for (auto c : histogram) n += c;
  if (n == 0) return 0.0;
  double sum_sq = 0.0;
  for (auto c : histogram) {
    const double p = static_cast<double>(c) / static_cast<double>(n);
    sum_sq += p * p;
  }
  return 1.0 - sum_sq;
}

struct PathStep {
  int feature = 0;
  double threshold = 0.0;
  double value = 0.0;
  bool went_left = false;
};

struct Prediction {
  int predicted = 0;
  std::vector<PathStep> path;
  int leaf = 0;
  std::vector<std::size_t> leaf_histogram;
  double leaf_fraction = 0.0;
};

class DecisionTree {
 public:
  DecisionTree() = default;
  DecisionTree(std::vector<TreeNode> nodes, std::size_t num_features, std::size_t num_classes)
      : nodes_(std::move(nodes)), num_features_(num_features), num_classes_(num_classes) {}

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::size_t num_features() const { return num_features_; }
  std::size_t num_classes() const { return num_classes_; }
  bool empty() const { return nodes_.empty(); }

  int depth() const {
    int d = 0;
    for (const auto& n : nodes_) d = std::max(d, n.depth);
    return d;
  }

  std::vector<int> leaves() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].is_leaf()) out.push_back(static_cast<int>(i));
    }
    return out;
  }

  Prediction predict(std::span<const double> features) const {
    if (nodes_.empty()) throw StateError("decision tree is empty");
    if (features.size() != num_features_) throw ArityError("feature vector has wrong length");
    Prediction out;
    int at = 0;
    while (!nodes_[static_cast<std::size_t>(at)].is_leaf()) {
      const auto& n = nodes_[static_cast<std::size_t>(at)];
      const double v = features[static_cast<std::size_t>(n.feature)];
      const bool left = v < n.threshold;
      out.path.push_back({n.feature, n.threshold, v, left});
      at = left ? n.left : n.right;
    }
    const auto& leaf = nodes_[static_cast<std::size_t>(at)];
    out.predicted = leaf.predicted;
    out.leaf = at;
    out.leaf_histogram = leaf.histogram;
    out.leaf_fraction = leaf.fraction;
    return out;
  }

  // One node per line: condition, predicted class, class distribution, share of training rows.
  std::string render(std::span<const std::string_view> feature_names = {},
                     std::span<const std::string_view> class_names = kClassNames) const {
    std::ostringstream os;
    if (!nodes_.empty()) render_node(os, 0, "root", feature_names, class_names);
    return os.str();
  }

 private:
  static std::string name_of(std::span<const std::string_view> names, std::size_t i, const char* fallback) {
    if (i < names.size()) return std::string(names[i]);
    return std::string(fallback) + std::to_string(i);
  }

  void render_node(std::ostringstream& os, int at, const std::string& condition,
                   std::span<const std::string_view> feature_names,
                   std::span<const std::string_view> class_names) const {
    const auto& n = nodes_[static_cast<std::size_t>(at)];
    os << std::string(static_cast<std::size_t>(n.depth) * 2, ' ') << condition << " -> "
       << name_of(class_names, static_cast<std::size_t>(n.predicted), "class_") << " [";
    for (std::size_t c = 0; c < n.histogram.size(); ++c) os << (c ? " " : "") << n.histogram[c];
    char buf[64];
    std::snprintf(buf, sizeof buf, "] purity=%.3f samples=%.1f%%", n.purity(), 100.0 * n.fraction);
    os << buf << '\n';
    if (n.is_leaf()) return;
    const std::string fname = name_of(feature_names, static_cast<std::size_t>(n.feature), "f");
    render_node(os, n.left, fname + " < " + format_double(n.threshold), feature_names, class_names);
    render_node(os, n.right, fname + " >= " + format_double(n.threshold), feature_names, class_names);
  }

  std::vector<TreeNode> nodes_;
  std::size_t num_features_ = 0;
  std::size_t num_classes_ = 0;
};

namespace detail {

struct SplitCandidate {
  int feature = -1;
  double threshold = 0.0;
  double decrease = -std::numeric_limits<double>::infinity();
};

class TreeBuilder {
 public:
  TreeBuilder(const Eigen::MatrixXd& X, std::span<const int> y, std::size_t num_classes, const TrainConfig& config)
      : X_(X), y_(y), num_classes_(num_classes), config_(config) {}

  DecisionTree build() {
    std::vector<std::size_t> rows(static_cast<std::size_t>(X_.rows()));
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    grow(rows, 0);
    return DecisionTree(std::move(nodes_), static_cast<std::size_t>(X_.cols()), num_classes_);
  }

 private:
  std::vector<std::size_t> histogram(std::span<const std::size_t> rows) const {
    std::vector<std::size_t> h(num_classes_, 0);
    for (auto r : rows) ++h[static_cast<std::size_t>(y_[r])];
    return h;
  }

  int grow(std::vector<std::size_t>& rows, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    TreeNode node;
    node.depth = depth;
    node.histogram = histogram(rows);
    // Majority class; ties go to the lowest class index.
    node.predicted = static_cast<int>(std::max_element(node.histogram.begin(), node.histogram.end()) -
                                      node.histogram.begin());
    node.fraction = static_cast<double>(rows.size()) / static_cast<double>(X_.rows());

    const double parent = gini(node.histogram);
    const bool can_split = depth < config_.max_depth && parent > 0.0 && rows.size() >= 2 * config_.min_leaf;
    if (can_split) {
      SplitCandidate best = find_split(rows, parent);
      if (best.feature >= 0 && best.decrease >= config_.min_impurity_decrease - 1e-12) {
        node.feature = best.feature;
        node.threshold = best.threshold;
        std::vector<std::size_t> left, right;
        for (auto r : rows) {
          (X_(static_cast<Eigen::Index>(r), best.feature) < best.threshold ? left : right).push_back(r);
        }
        rows.clear();
        rows.shrink_to_fit();
        nodes_[static_cast<std::size_t>(id)] = node;
        const int l = grow(left, depth + 1);
        const int r = grow(right, depth + 1);
        nodes_[static_cast<std::size_t>(id)].left = l;
        nodes_[static_cast<std::size_t>(id)].right = r;
        return id;
      }
    }
    nodes_[static_cast<std::size_t>(id)] = node;
    return id;
  }

  SplitCandidate find_split(std::span<const std::size_t> rows, double parent) const {
    SplitCandidate best;
    const std::size_t n = rows.size();
    std::vector<std::size_t> order(rows.begin(), rows.end());
    std::vector<std::size_t> left_h(num_classes_), right_h(num_classes_);
    for (Eigen::Index f = 0; f < X_.cols(); ++f) {
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return X_(static_cast<Eigen::Index>(a), f) < X_(static_cast<Eigen::Index>(b), f);
      });
      std::fill(left_h.begin(), left_h.end(), 0);
      right_h = histogram(order);
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const auto cls = static_cast<std::size_t>(y_[order[i]]);
        ++left_h[cls];
        --right_h[cls];
        const double lo = X_(static_cast<Eigen::Index>(order[i]), f);
        const double hi = X_(static_cast<Eigen::Index>(order[i + 1]), f);
        if (!(lo < hi)) continue;
        const std::size_t nl = i + 1;
        const std::size_t nr = n - nl;
        if (nl < config_.min_leaf || nr < config_.min_leaf) continue;
        const double weighted = (static_cast<double>(nl) * gini(left_h) + static_cast<double>(nr) * gini(right_h)) /
                                static_cast<double>(n);
        const double decrease = parent - weighted;
        if (decrease > best.decrease + 1e-12) {
          double threshold = lo + (hi - lo) / 2.0;
          if (!(threshold > lo)) threshold = hi;
          best = {static_cast<int>(f), threshold, decrease};
        }
      }
    }
    return best;
  }

  const Eigen::MatrixXd& X_;
  std::span<const int> y_;
  std::size_t num_classes_;
  const TrainConfig& config_;
  std::vector<TreeNode> nodes_;
};

}  // namespace detail

// Greedy CART with Gini impurity. Rows of X are samples; labels in [0, num_classes).
inline DecisionTree train_tree(const Eigen::MatrixXd& X, std::span<const int> labels, const TrainConfig& config,
                               std::size_t num_classes = kNumClasses) {
  config.validate();
  if (X.rows() == 0) throw LengthError("cannot train a tree on an empty data set");
  if (static_cast<std::size_t>(X.rows()) != labels.size()) throw ArityError("feature rows and labels differ in count");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw ValidationError("label " + std::to_string(l) + " outside the class set");
    }
  }
  return detail::TreeBuilder(X, labels, num_classes, config).build();
}

struct CrossValidationReport {
  double mean_accuracy = 0.0;
  std::vector<double> fold_accuracy;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

// Stratified, seeded k-fold split: each class is shuffled and dealt round-robin to folds.
inline std::vector<int> stratified_folds(std::span<const int> labels, std::size_t folds, std::size_t num_classes,
                                         std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<int> fold_of(labels.size(), -1);
  std::size_t offset = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    if (members.size() < folds) {
      const std::string name = c < kClassNames.size() ? std::string(kClassNames[c]) : "class " + std::to_string(c);
      throw ValidationError("class '" + name + "' has " + std::to_string(members.size()) +
                            " rows, fewer than the " + std::to_string(folds) + " folds needed to stratify");
    }
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t i = 0; i < members.size(); ++i) fold_of[members[i]] = static_cast<int>((offset + i) % folds);
    offset += members.size();
  }
  return fold_of;
}

inline CrossValidationReport cross_validate(const Eigen::MatrixXd& X, std::span<const int> labels, std::size_t folds,
                                            const TrainConfig& config, std::size_t num_classes = kNumClasses) {
  config.validate();
  if (folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
  if (static_cast<std::size_t>(X.rows()) != labels.size()) throw ArityError("feature rows and labels differ in count");
  if (labels.size() < folds) throw ValidationError("fewer rows than folds");
  const auto fold_of = stratified_folds(labels, folds, num_classes, config.seed);

  CrossValidationReport report;
  report.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> train_rows, test_rows;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      (fold_of[i] == static_cast<int>(f) ? test_rows : train_rows).push_back(static_cast<Eigen::Index>(i));
    }
    Eigen::MatrixXd Xtr(static_cast<Eigen::Index>(train_rows.size()), X.cols());
    std::vector<int> ytr;
    for (std::size_t i = 0; i < train_rows.size(); ++i) {
      Xtr.row(static_cast<Eigen::Index>(i)) = X.row(train_rows[i]);
      ytr.push_back(labels[static_cast<std::size_t>(train_rows[i])]);
    }
    const DecisionTree tree = train_tree(Xtr, ytr, config, num_classes);
    std::size_t correct = 0;
    std::vector<double> row(static_cast<std::size_t>(X.cols()));
    for (auto r : test_rows) {
      for (Eigen::Index c = 0; c < X.cols(); ++c) row[static_cast<std::size_t>(c)] = X(r, c);
      const int pred = tree.predict(row).predicted;
      const int truth = labels[static_cast<std::size_t>(r)];
      if (pred == truth) ++correct;
      ++report.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)];
    }
    report.fold_accuracy.push_back(test_rows.empty() ? 0.0
                                                     : static_cast<double>(correct) / static_cast<double>(test_rows.size()));
  }
  report.mean_accuracy = std::accumulate(report.fold_accuracy.begin(), report.fold_accuracy.end(), 0.0) /
                         static_cast<double>(folds);
  return report;
}

}  // namespace pmuvar
