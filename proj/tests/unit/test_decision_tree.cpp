#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "pmuvar/decision_tree.hpp"

using namespace pmuvar;

namespace {

struct Data {
  Eigen::MatrixXd X;
  std::vector<int> y;
};

// Class c sits around (c, c, ...) in the first two features; the rest is noise.
Data blobs(std::size_t per_class, double spread, std::uint64_t seed, Eigen::Index features = 5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Data d;
  d.X.resize(static_cast<Eigen::Index>(4 * per_class), features);
  for (std::size_t i = 0; i < 4 * per_class; ++i) {
    const int c = static_cast<int>(i % 4);
    d.y.push_back(c);
    for (Eigen::Index f = 0; f < features; ++f) {
      d.X(static_cast<Eigen::Index>(i), f) = (f < 2 ? 10.0 * c : 0.0) + spread * g(rng);
    }
  }
  return d;
}

std::vector<double> row(const Eigen::MatrixXd& X, Eigen::Index r) {
  std::vector<double> v(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index c = 0; c < X.cols(); ++c) v[static_cast<std::size_t>(c)] = X(r, c);
  return v;
}

double training_accuracy(const DecisionTree& t, const Data& d) {
  std::size_t ok = 0;
  for (Eigen::Index r = 0; r < d.X.rows(); ++r) ok += t.predict(row(d.X, r)).predicted == d.y[static_cast<std::size_t>(r)];
  return static_cast<double>(ok) / static_cast<double>(d.X.rows());
}

// Leaf whose axis-aligned box (collected from root-to-leaf constraints) contains x.
int box_oracle(const DecisionTree& t, const std::vector<double>& x) {
  const auto& nodes = t.nodes();
  const std::size_t F = t.num_features();
  std::vector<int> found;
  struct Box {
    std::vector<double> lo, hi;  // lo <= x < hi
  };
  std::vector<std::pair<int, Box>> stack = {
      {0, Box{std::vector<double>(F, -std::numeric_limits<double>::infinity()),
              std::vector<double>(F, std::numeric_limits<double>::infinity())}}};
  while (!stack.empty()) {
    auto [at, box] = stack.back();
    stack.pop_back();
    const auto& n = nodes[static_cast<std::size_t>(at)];
    if (n.is_leaf()) {
      bool inside = true;
      for (std::size_t f = 0; f < F; ++f) inside &= box.lo[f] <= x[f] && x[f] < box.hi[f];
      if (inside) found.push_back(at);
      continue;
    }
    Box l = box, r = box;
    const auto f = static_cast<std::size_t>(n.feature);
    l.hi[f] = std::min(l.hi[f], n.threshold);
    r.lo[f] = std::max(r.lo[f], n.threshold);
    stack.push_back({n.left, l});
    stack.push_back({n.right, r});
  }
  return found.size() == 1 ? found[0] : -1;
}

DecisionTree random_tree(std::mt19937_64& rng, std::size_t features, int max_depth) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> feat(0, static_cast<int>(features) - 1), cls(0, 3);
  std::vector<TreeNode> nodes;
  auto grow = [&](auto& self, int depth) -> int {
    const int id = static_cast<int>(nodes.size());
    nodes.emplace_back();
    TreeNode n;
    n.depth = depth;
    n.histogram = {1, 1, 1, 1};
    n.predicted = cls(rng);
    if (depth < max_depth && u(rng) > -0.5) {
      n.feature = feat(rng);
      n.threshold = u(rng);
      nodes[static_cast<std::size_t>(id)] = n;
      const int l = self(self, depth + 1);
      const int r = self(self, depth + 1);
      nodes[static_cast<std::size_t>(id)].left = l;
      nodes[static_cast<std::size_t>(id)].right = r;
      return id;
    }
    nodes[static_cast<std::size_t>(id)] = n;
    return id;
  };
  grow(grow, 0);
  return DecisionTree(std::move(nodes), features, 4);
}

}  // namespace

TEST(TrainTree, SeparableOneFeature) {
  Eigen::MatrixXd X(20, 1);
  std::vector<int> y;
  for (int i = 0; i < 20; ++i) {
    X(i, 0) = i < 10 ? 1.0 + 0.3 * i : 6.0 + 0.2 * i;
    y.push_back(i < 10 ? 0 : 1);
  }
  DecisionTree t = train_tree(X, y, TrainConfig{}, 2);
  ASSERT_EQ(t.depth(), 1);
  const auto& root = t.nodes()[0];
  EXPECT_EQ(root.feature, 0);
  EXPECT_GT(root.threshold, X(9, 0));
  EXPECT_LE(root.threshold, X(10, 0));
  EXPECT_EQ(root.threshold, (X(9, 0) + X(10, 0)) / 2.0);
}

TEST(TrainTree, SingleClassIsOneLeaf) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Random(30, 3);
  std::vector<int> y(30, 2);
  DecisionTree t = train_tree(X, y, TrainConfig{});
  ASSERT_EQ(t.nodes().size(), 1u);
  Prediction p = t.predict(std::vector<double>{0.1, 0.2, 0.3});
  EXPECT_EQ(p.predicted, 2);
  EXPECT_TRUE(p.path.empty());
  EXPECT_EQ(p.leaf_fraction, 1.0);
}

TEST(TrainTree, XorNeedsDepthTwo) {
  Eigen::MatrixXd X(4, 2);
  X << 0, 0, 0, 1, 1, 0, 1, 1;
  std::vector<int> y = {0, 1, 1, 0};
  // Exhaustive depth-1 enumeration: every feature, every midpoint, every leaf labelling.
  for (int f = 0; f < 2; ++f) {
    const double thr = 0.5;
    for (int lc = 0; lc < 2; ++lc) {
      for (int rc = 0; rc < 2; ++rc) {
        int ok = 0;
        for (int i = 0; i < 4; ++i) ok += (X(i, f) < thr ? lc : rc) == y[static_cast<std::size_t>(i)];
        EXPECT_LT(ok, 4);
      }
    }
  }
  TrainConfig cfg;
  cfg.min_leaf = 1;
  cfg.min_impurity_decrease = 0.0;
  DecisionTree t = train_tree(X, y, cfg, 2);
  EXPECT_EQ(t.depth(), 2);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(t.predict(row(X, i)).predicted, y[static_cast<std::size_t>(i)]);
}

TEST(TrainTree, MemorizesTrainingRows) {
  Data d = blobs(30, 8.0, 1);
  TrainConfig cfg;
  cfg.min_leaf = 1;
  cfg.max_depth = 64;
  cfg.min_impurity_decrease = 0.0;
  DecisionTree t = train_tree(d.X, d.y, cfg);
  EXPECT_EQ(training_accuracy(t, d), 1.0);
}

TEST(TrainTree, NodeStatisticsAreConsistent) {
  Data d = blobs(50, 6.0, 2);
  TrainConfig cfg;
  DecisionTree t = train_tree(d.X, d.y, cfg);
  double total = 0.0;
  std::vector<std::size_t> routed(t.nodes().size(), 0);
  for (Eigen::Index r = 0; r < d.X.rows(); ++r) ++routed[static_cast<std::size_t>(t.predict(row(d.X, r)).leaf)];
  for (std::size_t i = 0; i < t.nodes().size(); ++i) {
    const auto& n = t.nodes()[i];
    if (!n.is_leaf()) {
      const auto& l = t.nodes()[static_cast<std::size_t>(n.left)];
      const auto& r = t.nodes()[static_cast<std::size_t>(n.right)];
      const double nl = static_cast<double>(l.samples()), nr = static_cast<double>(r.samples());
      const double weighted = (nl * gini(l.histogram) + nr * gini(r.histogram)) / (nl + nr);
      EXPECT_LE(weighted, gini(n.histogram) - cfg.min_impurity_decrease + 1e-12);
      EXPECT_EQ(l.samples() + r.samples(), n.samples());
      continue;
    }
    total += n.fraction;
    EXPECT_EQ(n.samples(), routed[i]);
    EXPECT_GE(n.samples(), cfg.min_leaf);
  }
  EXPECT_NEAR(total, 1.0, 1e-9);
}

TEST(TrainTree, DeterministicAndMonotoneInvariant) {
  Data d = blobs(40, 7.0, 3);
  TrainConfig cfg;
  DecisionTree a = train_tree(d.X, d.y, cfg);
  DecisionTree b = train_tree(d.X, d.y, cfg);
  EXPECT_EQ(a.render(), b.render());

  Data warped = d;
  for (Eigen::Index r = 0; r < d.X.rows(); ++r) warped.X(r, 1) = std::exp(d.X(r, 1) / 5.0) + d.X(r, 1);
  DecisionTree c = train_tree(warped.X, warped.y, cfg);
  ASSERT_EQ(c.nodes().size(), a.nodes().size());
  for (Eigen::Index r = 0; r < d.X.rows(); ++r) EXPECT_EQ(a.predict(row(d.X, r)).leaf, c.predict(row(warped.X, r)).leaf);
}

TEST(TrainTree, TrainingAccuracyNonDecreasingInDepth) {
  Data d = blobs(60, 9.0, 4);
  double previous = 0.0;
  for (int depth = 1; depth <= 8; ++depth) {
    TrainConfig cfg;
    cfg.max_depth = depth;
    const double acc = training_accuracy(train_tree(d.X, d.y, cfg), d);
    EXPECT_GE(acc, previous);
    previous = acc;
  }
}

TEST(TrainTree, Errors) {
  std::vector<int> none;
  EXPECT_THROW(train_tree(Eigen::MatrixXd(0, 3), none, TrainConfig{}), LengthError);
  std::vector<int> bad = {0, 7};
  EXPECT_THROW(train_tree(Eigen::MatrixXd::Zero(2, 1), bad, TrainConfig{}), ValidationError);
  TrainConfig cfg;
  cfg.max_depth = 0;
  std::vector<int> ok = {0, 1};
  EXPECT_THROW(train_tree(Eigen::MatrixXd::Zero(2, 1), ok, cfg), ConfigError);
}

TEST(Predict, MatchesBoxOracleOnRandomTrees) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.2, 1.2);
  for (int i = 0; i < 100; ++i) {
    DecisionTree t = random_tree(rng, 3, 6);
    for (int j = 0; j < 20; ++j) {
      std::vector<double> x = {u(rng), u(rng), u(rng)};
      Prediction p = t.predict(x);
      EXPECT_EQ(p.leaf, box_oracle(t, x));
      EXPECT_EQ(p.predicted, t.nodes()[static_cast<std::size_t>(p.leaf)].predicted);
      for (const auto& step : p.path) EXPECT_EQ(step.went_left, step.value < step.threshold);
    }
  }
}

TEST(Predict, WrongArityAndEmptyTree) {
  Data d = blobs(10, 1.0, 6);
  DecisionTree t = train_tree(d.X, d.y, TrainConfig{});
  EXPECT_THROW(t.predict(std::vector<double>{1.0}), ArityError);
  EXPECT_THROW(DecisionTree{}.predict(std::vector<double>{}), StateError);
}

TEST(CrossValidate, SeparableIsPerfect) {
  Data d = blobs(30, 0.5, 7);
  auto rep = cross_validate(d.X, d.y, 10, TrainConfig{});
  ASSERT_EQ(rep.fold_accuracy.size(), 10u);
  for (double a : rep.fold_accuracy) EXPECT_EQ(a, 1.0);
  EXPECT_EQ(rep.mean_accuracy, 1.0);
  std::size_t total = 0;
  for (const auto& r : rep.confusion) {
    for (auto c : r) total += c;
  }
  EXPECT_EQ(total, 120u);
}

TEST(CrossValidate, ShuffledLabelsNearChance) {
  Data d = blobs(100, 1.0, 8);
  std::mt19937_64 rng(9);
  std::shuffle(d.y.begin(), d.y.end(), rng);
  TrainConfig cfg;
  cfg.seed = 3;
  auto rep = cross_validate(d.X, d.y, 10, cfg);
  EXPECT_NEAR(rep.mean_accuracy, 0.25, 0.1);
}

TEST(CrossValidate, SameSeedSameReport) {
  Data d = blobs(30, 6.0, 10);
  TrainConfig cfg;
  cfg.seed = 11;
  auto a = cross_validate(d.X, d.y, 5, cfg);
  auto b = cross_validate(d.X, d.y, 5, cfg);
  EXPECT_EQ(a.fold_accuracy, b.fold_accuracy);
  EXPECT_EQ(a.confusion, b.confusion);
}

TEST(CrossValidate, SmallClassNamedInError) {
  Data d = blobs(20, 1.0, 12);
  std::vector<int> y = d.y;
  int kept = 0;
  for (auto& l : y) {
    if (l == 3 && ++kept > 5) l = 0;
  }
  try {
    cross_validate(d.X, y, 10, TrainConfig{});
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("oscillatory"), std::string::npos);
  }
}
