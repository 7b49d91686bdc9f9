#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "treecarbon/learn.hpp"
#include "treecarbon/raster.hpp"

namespace treecarbon {

/// Label 0 is background; positive labels are 4-connected crown regions.
using SegmentLabels = LabelRaster;

struct Marker {
  Index row = 0;
  Index col = 0;
  float value = 0.0f;
};

/// Regional maxima of the topography inside the mask (one marker per
/// 8-connected plateau, at the plateau pixel nearest its centroid), values
/// below min_height dropped, then thinned greedily in order of descending
/// value and row-major position so that no two markers lie within
/// min_distance pixels of each other.
std::vector<Marker> find_markers(const RasterGrid& topography, const TreeMask& mask,
                                 double min_distance, double min_height);

/// Priority-flood watershed from the markers over 4-connected masked pixels,
/// highest topography first, ties by insertion order. Marker k gets label
/// k + 1; masked components no marker reaches get further labels in
/// row-major order. NaN topography floods last.
SegmentLabels watershed(const RasterGrid& topography, std::span<const Marker> markers,
                        const TreeMask& mask);

struct CrownPolygon {
  int id = 0;
  std::vector<Eigen::Vector2d> ring;  // closed, counterclockwise, map coordinates
  double area_m2 = 0.0;
  double diameter_m = 0.0;
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  Index pixel_count = 0;
  std::optional<int> species;
  std::optional<double> height_m;
};

double equivalent_diameter(double area_m2);

/// One polygon per label, ascending id, traced along pixel edges around the
/// outside of the region. Regions with area below min_area_m2 are dropped.
std::vector<CrownPolygon> polygonize(const SegmentLabels& labels, double min_area_m2 = 0.0);

/// Separable Gaussian blur, kernel radius ceil(3 sigma); NaN cells are
/// skipped and the remaining weights renormalised.
RasterGrid gaussian_smooth(const RasterGrid& grid, double sigma);

struct SegmentParams {
  double min_distance = 5.0;  // pixels
  double min_height = 0.0;
  double min_crown_area = 4.0;  // m^2
  Index tile_size = 512;
  Index overlap = 32;
  int workers = 1;
};

struct Segmentation {
  SegmentLabels labels;
  std::vector<CrownPolygon> crowns;
};

/// Tiled marker + watershed segmentation. A crown found in a tile is kept
/// only when its centroid pixel lies in that tile's core; kept crowns are
/// painted in tile order (earlier tiles win contested pixels) and the result
/// relabelled as 4-connected components in row-major order before
/// polygonization.
Segmentation segment_crowns(const RasterGrid& topography, const TreeMask& mask,
                            const SegmentParams& params);

/// Row-major 4-connected component relabelling: each connected run of a
/// label becomes its own id, numbered from 1 in order of first pixel.
SegmentLabels canonical_labels(const SegmentLabels& labels);

/// GeoJSON FeatureCollection; properties id, area_m2, diameter_m plus
/// centroid and pixel count, and species / height_m when known.
std::string crowns_to_geojson(std::span<const CrownPolygon> crowns, int crs_id);
std::vector<CrownPolygon> crowns_from_geojson(const std::string& text);
void write_crowns(std::span<const CrownPolygon> crowns, int crs_id, const std::filesystem::path& path);
std::vector<CrownPolygon> read_crowns(const std::filesystem::path& path);

}  // namespace treecarbon
