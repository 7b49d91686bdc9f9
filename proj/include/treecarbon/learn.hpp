#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "treecarbon/raster.hpp"

namespace treecarbon {

// ---------------------------------------------------------------------------
// Per-pixel features

inline constexpr Index kPixelFeatureCount = 7;
enum PixelFeature : Index {
  kFeatRed = 0,
  kFeatGreen,
  kFeatBlue,
  kFeatNir,
  kFeatNdvi,
  kFeatTextureStd,
  kFeatTextureMean,
};

/// Seven named bands: R, G, B, NIR, NDVI, texture_std, texture_mean. The
/// texture bands are the population standard deviation and mean of NDVI over
/// a window x window neighbourhood and are NaN within window/2 of the border
/// or wherever the window touches nodata.
struct FeatureStack {
  RasterGrid grid;
  Index window = 0;
};

FeatureStack extract_features(const MultiSpectralImage& image, Index window);

// ---------------------------------------------------------------------------
// Random forest

struct ForestParams {
  int n_trees = 50;
  int max_depth = 12;
  int min_leaf = 2;
  int features_per_split = 0;  // 0 selects ceil(sqrt(n_features))
};

/// Training rows: one sample per row of `features`, class ids index `classes`.
struct LabeledSamples {
  Eigen::MatrixXd features;
  std::vector<int> labels;
  std::vector<std::string> classes;

  void validate() const;
};

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // x[feature] <= threshold goes left
  std::int32_t left = -1;
  std::int32_t right = -1;
  std::vector<std::uint32_t> histogram;  // leaves only

  bool is_leaf() const { return feature < 0; }
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  /// Index of the leaf reached by x.
  std::size_t leaf_for(std::span<const double> x) const;
};

struct RandomForestModel {
  std::vector<DecisionTree> trees;
  int n_features = 0;
  std::vector<std::string> classes;
  std::uint64_t seed = 0;
  ForestParams params;
  int feature_window = 0;  // texture window of the pixel feature stack, 0 if unused

  int n_classes() const { return static_cast<int>(classes.size()); }
  int class_index(const std::string& name) const;  // -1 when absent
  void validate() const;
};

struct Prediction {
  int label = 0;
  Eigen::VectorXd probabilities;
};

/// Bootstrap-aggregated CART trees split on Gini impurity. Tree t draws its
/// bootstrap and feature subsets from derive_seed(seed, t), so the model is
/// identical for every worker count.
RandomForestModel rf_train(const LabeledSamples& data, const ForestParams& params,
                           std::uint64_t seed, int workers = 1);

/// Class probabilities are the mean of the trees' normalised leaf
/// histograms; the label is their argmax with ties going to the lower id.
Prediction rf_predict(const RandomForestModel& model, std::span<const double> features);

/// Per-pixel labels; pixels with any NaN feature get -1.
LabelRaster rf_predict(const RandomForestModel& model, const FeatureStack& stack, int workers = 1);

// Binary model format (little-endian):
//   "TCRF" u32 version
//   u32 n_features, u32 n_classes, {u32 length, bytes} per class name
//   u64 seed, u32 n_trees, u32 max_depth, u32 min_leaf, u32 features_per_split,
//   u32 feature_window, u32 tree_count
//   per tree: u32 node_count, per node: i32 feature, f64 threshold, i32 left,
//             i32 right, and for leaves n_classes x u32 histogram counts
//   u64 FNV-1a hash of every preceding byte
inline constexpr std::uint32_t kModelFormatVersion = 1;

std::vector<std::uint8_t> save_model(const RandomForestModel& model);
RandomForestModel load_model(std::span<const std::uint8_t> bytes);
void save_model(const RandomForestModel& model, const std::filesystem::path& path);
RandomForestModel load_model(const std::filesystem::path& path);

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t hash = 0xcbf29ce484222325ull);

// ---------------------------------------------------------------------------
// Tree mask

inline const std::string kTreeClass = "tree";
inline const std::string kNotTreeClass = "not-tree";

using TreeMask = Raster<std::uint8_t>;

/// tree iff NDVI > ndvi_prefilter and the forest predicts "tree". Pixels
/// without texture features (image border, nodata) are not-tree.
TreeMask build_tree_mask(const MultiSpectralImage& image, const RandomForestModel& model,
                         double ndvi_prefilter, int workers = 1);

/// Map-coordinate training point with a class name.
struct TrainingLabel {
  double x = 0.0;
  double y = 0.0;
  std::string label;
};

/// CSV with header x,y,class.
std::vector<TrainingLabel> load_training_labels(const std::filesystem::path& path);

/// Samples the feature stack at each label's pixel. Labels outside the grid
/// are a validation error; labels on pixels with missing features are
/// skipped and counted in `skipped`.
LabeledSamples sample_features(const FeatureStack& stack, std::span<const TrainingLabel> labels,
                               const std::vector<std::string>& classes,
                               std::size_t* skipped = nullptr);

}  // namespace treecarbon
