#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "treecarbon/raster.hpp"

namespace treecarbon {

constexpr std::uint8_t kClassGround = 2;

struct LidarPoint {
  Eigen::Vector3d position;
  std::uint8_t return_number = 1;
  std::uint8_t number_of_returns = 1;
  std::uint8_t classification = 1;
};

/// LiDAR returns. Coordinates are held as a 3xN matrix; per-point
/// attributes live in parallel vectors.
struct PointCloud {
  Eigen::Matrix3Xd xyz;
  std::vector<std::uint8_t> return_number;
  std::vector<std::uint8_t> number_of_returns;
  std::vector<std::uint8_t> classification;

  // Quantization used on disk; coordinates are stored as
  // round((coord - offset) / scale) in signed 32-bit integers.
  Eigen::Vector3d scale = Eigen::Vector3d::Constant(0.001);
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();

  Index size() const { return xyz.cols(); }
  bool empty() const { return xyz.cols() == 0; }

  LidarPoint point(Index i) const {
    return {xyz.col(i), return_number[static_cast<std::size_t>(i)],
            number_of_returns[static_cast<std::size_t>(i)],
            classification[static_cast<std::size_t>(i)]};
  }

  Eigen::Vector3d min_corner() const { return xyz.rowwise().minCoeff(); }
  Eigen::Vector3d max_corner() const { return xyz.rowwise().maxCoeff(); }

  void validate() const;
};

/// Builds a cloud and picks an offset at the floor of the bounding box so the
/// quantized integers stay small.
PointCloud make_point_cloud(std::span<const LidarPoint> points, double scale = 0.001);

PointCloud decode_las(std::span<const std::uint8_t> bytes);
PointCloud read_las(const std::filesystem::path& path);

/// LAS 1.2, point data record format 0, no variable-length records.
std::vector<std::uint8_t> encode_las(const PointCloud& cloud);
void write_las(const PointCloud& cloud, const std::filesystem::path& path);

enum class Reducer { Max, Min, Mean };

using PointFilter = std::function<bool(const LidarPoint&)>;

inline bool is_first_return(const LidarPoint& p) { return p.return_number == 1; }
inline bool is_ground(const LidarPoint& p) { return p.classification == kClassGround; }

/// Target raster geometry for rasterization.
struct GridSpec {
  GeoTransform geo;
  Index width = 0;
  Index height = 0;
  int crs_id = 0;
};

/// Grid covering the cloud's bounding box with square cells.
GridSpec grid_for_cloud(const PointCloud& cloud, double cell_size);

/// Per-cell reduction of z over filtered points. Cells without points are
/// NaN (the nodata value). Points outside the grid are ignored.
RasterGrid rasterize_surface(const PointCloud& cloud, const PointFilter& filter,
                             const GridSpec& grid, Reducer reducer);
RasterGrid rasterize_surface(const PointCloud& cloud, const PointFilter& filter, double cell_size,
                             Reducer reducer);

/// Replaces nodata cells with the value of the nearest valid cell (Euclidean
/// distance in cell units). Requires at least one valid cell.
RasterGrid fill_nearest(const RasterGrid& grid);

/// Canopy height model: max(DSM - DTM, 0) where DSM is the per-cell maximum of
/// first returns and DTM is the per-cell mean of ground returns with
/// nearest-neighbour fill. Cells without first returns are nodata.
RasterGrid build_chm(const PointCloud& cloud, const GridSpec& grid);
RasterGrid build_chm(const PointCloud& cloud, double cell_size);

/// Mean CHM value over valid cells whose centers fall inside the ring.
double sample_mean_height(const RasterGrid& chm, const std::vector<Eigen::Vector2d>& ring,
                          std::size_t min_samples);

}  // namespace treecarbon
