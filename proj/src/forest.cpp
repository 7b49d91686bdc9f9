#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "treecarbon/learn.hpp"
#include "treecarbon/parallel.hpp"
#include "treecarbon/random.hpp"

namespace treecarbon {
namespace {

// n * Gini impurity = n - sum(c^2) / n.
double weighted_impurity(const std::vector<double>& counts, double n) {
  if (n <= 0) return 0.0;
  double sq = 0.0;
  for (double c : counts) sq += c * c;
  return n - sq / n;
}

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double impurity = std::numeric_limits<double>::infinity();
};

class TreeBuilder {
 public:
  TreeBuilder(const LabeledSamples& data, const ForestParams& params, int mtry, std::uint64_t seed)
      : data_(data), params_(params), mtry_(mtry), n_classes_(static_cast<int>(data.classes.size())),
        rng_(seed) {}

  DecisionTree build() {
    const auto n = static_cast<std::uint64_t>(data_.features.rows());
    rows_.resize(n);
    for (auto& r : rows_) r = static_cast<Index>(uniform_index(rng_, n));
    grow(0, rows_.size(), 0);
    return std::move(tree_);
  }

 private:
  std::int32_t grow(std::size_t begin, std::size_t end, int depth) {
    const auto id = static_cast<std::int32_t>(tree_.nodes.size());
    tree_.nodes.emplace_back();

    std::vector<double> counts(static_cast<std::size_t>(n_classes_), 0.0);
    for (std::size_t i = begin; i < end; ++i) counts[static_cast<std::size_t>(label(rows_[i]))] += 1.0;
    const double n = static_cast<double>(end - begin);
    const double parent = weighted_impurity(counts, n);

    Split split;
    const bool can_split = depth < params_.max_depth && parent > 0.0 &&
                           end - begin >= 2 * static_cast<std::size_t>(params_.min_leaf);
    if (can_split) split = find_split(begin, end, parent);

    if (split.feature < 0) {
      auto& node = tree_.nodes[static_cast<std::size_t>(id)];
      node.histogram.resize(counts.size());
      for (std::size_t k = 0; k < counts.size(); ++k) node.histogram[k] = static_cast<std::uint32_t>(counts[k]);
      return id;
    }

    const auto mid = std::stable_partition(rows_.begin() + static_cast<long>(begin),
                                           rows_.begin() + static_cast<long>(end), [&](Index r) {
                                             return data_.features(r, split.feature) <= split.threshold;
                                           }) -
                     rows_.begin();
    const std::int32_t left = grow(begin, static_cast<std::size_t>(mid), depth + 1);
    const std::int32_t right = grow(static_cast<std::size_t>(mid), end, depth + 1);
    auto& node = tree_.nodes[static_cast<std::size_t>(id)];
    node.feature = split.feature;
    node.threshold = split.threshold;
    node.left = left;
    node.right = right;
    return id;
  }

  Split find_split(std::size_t begin, std::size_t end, double parent) {
    const auto d = static_cast<int>(data_.features.cols());
    std::vector<int> order(static_cast<std::size_t>(d));
    std::iota(order.begin(), order.end(), 0);
    for (int i = d - 1; i > 0; --i) {
      const auto j = static_cast<int>(uniform_index(rng_, static_cast<std::uint64_t>(i) + 1));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    Split best;
    for (int k = 0; k < d; ++k) {
      // The random subset gets the first chance; remaining features are only
      // consulted when it offers no impurity-decreasing split.
      if (k == mtry_ && best.feature >= 0) break;
      evaluate(order[static_cast<std::size_t>(k)], begin, end, parent, best);
    }
    return best;
  }

  void evaluate(int feature, std::size_t begin, std::size_t end, double parent, Split& best) {
    const std::size_t n = end - begin;
    sorted_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Index r = rows_[begin + i];
      sorted_[i] = {data_.features(r, feature), r};
    }
    std::sort(sorted_.begin(), sorted_.end());
    std::vector<double> left(static_cast<std::size_t>(n_classes_), 0.0);
    std::vector<double> right(static_cast<std::size_t>(n_classes_), 0.0);
    for (const auto& s : sorted_) right[static_cast<std::size_t>(label(s.second))] += 1.0;
    const auto min_leaf = static_cast<std::size_t>(params_.min_leaf);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const auto cls = static_cast<std::size_t>(label(sorted_[i].second));
      left[cls] += 1.0;
      right[cls] -= 1.0;
      const std::size_t nl = i + 1, nr = n - nl;
      if (sorted_[i].first == sorted_[i + 1].first) continue;
      if (nl < min_leaf || nr < min_leaf) continue;
      const double impurity = weighted_impurity(left, static_cast<double>(nl)) +
                              weighted_impurity(right, static_cast<double>(nr));
      if (impurity < parent - 1e-12 && impurity < best.impurity) {
        const double lo = sorted_[i].first, hi = sorted_[i + 1].first;
        double threshold = lo + (hi - lo) / 2.0;
        if (!(threshold >= lo && threshold < hi)) threshold = lo;
        best = {feature, threshold, impurity};
      }
    }
  }

  int label(Index row) const { return data_.labels[static_cast<std::size_t>(row)]; }

  const LabeledSamples& data_;
  const ForestParams& params_;
  int mtry_;
  int n_classes_;
  Rng rng_;
  std::vector<Index> rows_;
  std::vector<std::pair<double, Index>> sorted_;
  DecisionTree tree_;
};

// Adds each tree's normalised leaf histogram into `acc` (size n_classes).
void accumulate(const RandomForestModel& model, std::span<const double> x, std::vector<double>& acc) {
  std::fill(acc.begin(), acc.end(), 0.0);
  for (const auto& tree : model.trees) {
    const auto& leaf = tree.nodes[tree.leaf_for(x)];
    double total = 0.0;
    for (auto c : leaf.histogram) total += c;
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += leaf.histogram[k] / total;
  }
  const double n = static_cast<double>(model.trees.size());
  for (auto& v : acc) v /= n;
}

int argmax_lowest(const std::vector<double>& p) {
  int best = 0;
  for (std::size_t k = 1; k < p.size(); ++k) {
    if (p[k] > p[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
  }
  return best;
}

}  // namespace

void LabeledSamples::validate() const {
  require(features.rows() > 0, ErrorKind::Parameter, "training data is empty");
  require(features.cols() > 0, ErrorKind::Parameter, "training data has no features");
  require(static_cast<Index>(labels.size()) == features.rows(), ErrorKind::Parameter,
          "label count does not match sample count");
  require(!classes.empty(), ErrorKind::Parameter, "class vocabulary is empty");
  for (int l : labels) {
    require(l >= 0 && l < static_cast<int>(classes.size()), ErrorKind::Parameter,
            fmt::format("label {} outside the class vocabulary", l));
  }
  require(features.allFinite(), ErrorKind::Parameter, "training features must be finite");
}

std::size_t DecisionTree::leaf_for(std::span<const double> x) const {
  std::size_t i = 0;
  while (!nodes[i].is_leaf()) {
    const auto& n = nodes[i];
    i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
  }
  return i;
}

int RandomForestModel::class_index(const std::string& name) const {
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] == name) return static_cast<int>(i);
  }
  return -1;
}

void RandomForestModel::validate() const {
  require(n_features > 0 && !classes.empty() && !trees.empty(), ErrorKind::Invariant,
          "model needs features, classes and at least one tree");
  for (const auto& tree : trees) {
    require(!tree.nodes.empty(), ErrorKind::Invariant, "empty decision tree");
    const auto count = static_cast<std::int32_t>(tree.nodes.size());
    for (std::int32_t i = 0; i < count; ++i) {
      const auto& n = tree.nodes[static_cast<std::size_t>(i)];
      if (n.is_leaf()) {
        require(n.histogram.size() == classes.size(), ErrorKind::Invariant,
                "leaf histogram does not match the class count");
        std::uint64_t total = 0;
        for (auto c : n.histogram) total += c;
        require(total > 0, ErrorKind::Invariant, "empty leaf histogram");
      } else {
        require(n.feature < n_features, ErrorKind::Invariant, "split feature out of range");
        require(n.left > i && n.right > i && n.left < count && n.right < count, ErrorKind::Invariant,
                "child index out of range");
        require(std::isfinite(n.threshold), ErrorKind::Invariant, "non-finite split threshold");
      }
    }
  }
}

RandomForestModel rf_train(const LabeledSamples& data, const ForestParams& params, std::uint64_t seed,
                           int workers) {
  data.validate();
  require(params.n_trees >= 1 && params.max_depth >= 0 && params.min_leaf >= 1 &&
              params.features_per_split >= 0,
          ErrorKind::Parameter, "invalid forest hyperparameters");
  const auto d = static_cast<int>(data.features.cols());
  const int mtry = params.features_per_split > 0
                       ? std::min(params.features_per_split, d)
                       : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(d))));

  RandomForestModel model;
  model.n_features = d;
  model.classes = data.classes;
  model.seed = seed;
  model.params = params;
  model.trees.resize(static_cast<std::size_t>(params.n_trees));
  parallel_for(model.trees.size(), workers, [&](std::size_t t) {
    TreeBuilder builder(data, params, mtry, derive_seed(seed, t));
    model.trees[t] = builder.build();
  });
  return model;
}

Prediction rf_predict(const RandomForestModel& model, std::span<const double> features) {
  require(static_cast<int>(features.size()) == model.n_features, ErrorKind::Parameter,
          fmt::format("feature arity {} does not match model arity {}", features.size(), model.n_features));
  std::vector<double> acc(model.classes.size());
  accumulate(model, features, acc);
  Prediction p;
  p.label = argmax_lowest(acc);
  p.probabilities = Eigen::Map<const Eigen::VectorXd>(acc.data(), static_cast<Index>(acc.size()));
  return p;
}

LabelRaster rf_predict(const RandomForestModel& model, const FeatureStack& stack, int workers) {
  const RasterGrid& g = stack.grid;
  require(g.bands() == model.n_features, ErrorKind::Parameter,
          fmt::format("feature stack has {} bands, model expects {}", g.bands(), model.n_features));
  LabelRaster out(g.width(), g.height(), 1, g.geo(), g.crs_id(), -1.0, -1);
  parallel_for(static_cast<std::size_t>(g.height()), workers, [&](std::size_t row) {
    const auto r = static_cast<Index>(row);
    std::vector<double> x(static_cast<std::size_t>(g.bands()));
    std::vector<double> acc(model.classes.size());
    for (Index c = 0; c < g.width(); ++c) {
      bool missing = false;
      for (Index b = 0; b < g.bands(); ++b) {
        const float v = g(b, r, c);
        missing = missing || std::isnan(v);
        x[static_cast<std::size_t>(b)] = v;
      }
      if (missing) continue;
      accumulate(model, x, acc);
      out.at(r, c) = argmax_lowest(acc);
    }
  });
  return out;
}

}  // namespace treecarbon
