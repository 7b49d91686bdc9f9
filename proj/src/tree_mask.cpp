#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "treecarbon/csv.hpp"
#include "treecarbon/learn.hpp"

namespace treecarbon {

TreeMask build_tree_mask(const MultiSpectralImage& image, const RandomForestModel& model,
                         double ndvi_prefilter, int workers) {
  const int tree = model.class_index(kTreeClass);
  require(tree >= 0 && model.class_index(kNotTreeClass) >= 0 && model.n_classes() == 2,
          ErrorKind::Parameter,
          fmt::format("tree mask model must have classes {{{}, {}}}", kTreeClass, kNotTreeClass));
  require(model.n_features == kPixelFeatureCount, ErrorKind::Parameter,
          fmt::format("tree mask model expects {} features, pixel stack has {}", model.n_features,
                      kPixelFeatureCount));
  require(std::isfinite(ndvi_prefilter), ErrorKind::Parameter, "NDVI prefilter must be finite");
  const FeatureStack stack = extract_features(image, model.feature_window);
  const LabelRaster labels = rf_predict(model, stack, workers);

  TreeMask mask(image.width(), image.height(), 1, image.geo(), image.grid().crs_id());
  mask.set_band_names({"tree_mask"});
  for (Index r = 0; r < mask.height(); ++r) {
    for (Index c = 0; c < mask.width(); ++c) {
      const float ndvi = stack.grid(kFeatNdvi, r, c);
      mask.at(r, c) = labels.at(r, c) == tree && ndvi > ndvi_prefilter ? 1 : 0;
    }
  }
  return mask;
}

std::vector<TrainingLabel> load_training_labels(const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  const std::size_t cx = table.column("x"), cy = table.column("y"), cl = table.column("class");
  std::vector<TrainingLabel> out;
  out.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    TrainingLabel l;
    l.x = parse_number(row[cx], i + 1, "x");
    l.y = parse_number(row[cy], i + 1, "y");
    l.label = row[cl];
    require(!l.label.empty(), ErrorKind::Validation, fmt::format("row {}: empty class", i + 1));
    out.push_back(std::move(l));
  }
  return out;
}

LabeledSamples sample_features(const FeatureStack& stack, std::span<const TrainingLabel> labels,
                               const std::vector<std::string>& classes, std::size_t* skipped) {
  const RasterGrid& g = stack.grid;
  LabeledSamples out;
  out.classes = classes;
  std::vector<double> rows;
  std::size_t missing = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& l = labels[i];
    const auto it = std::find(classes.begin(), classes.end(), l.label);
    require(it != classes.end(), ErrorKind::Validation,
            fmt::format("training label {} has unknown class '{}'", i, l.label));
    const Eigen::Vector2d px = g.geo().map_to_pixel(l.x, l.y);
    const double col = std::floor(px.x()), row = std::floor(px.y());
    require(col >= 0 && row >= 0 && col < static_cast<double>(g.width()) &&
                row < static_cast<double>(g.height()),
            ErrorKind::Validation,
            fmt::format("training label {} at ({}, {}) lies outside the image", i, l.x, l.y));
    const auto r = static_cast<Index>(row), c = static_cast<Index>(col);
    bool ok = true;
    for (Index b = 0; b < g.bands(); ++b) ok = ok && !std::isnan(g(b, r, c));
    if (!ok) {
      ++missing;
      continue;
    }
    for (Index b = 0; b < g.bands(); ++b) rows.push_back(g(b, r, c));
    out.labels.push_back(static_cast<int>(it - classes.begin()));
  }
  const auto n = static_cast<Index>(out.labels.size());
  out.features = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      rows.data(), n, g.bands());
  if (skipped) *skipped = missing;
  return out;
}

}  // namespace treecarbon
