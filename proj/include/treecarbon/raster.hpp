#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "treecarbon/error.hpp"

namespace treecarbon {

using Index = Eigen::Index;

/// North-up affine georeference. The origin is the outer corner of the
/// top-left pixel; rows grow southward.
struct GeoTransform {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double pixel_size_x = 1.0;
  double pixel_size_y = 1.0;

  Eigen::Vector2d pixel_to_map(double col, double row) const {
    return {origin_x + col * pixel_size_x, origin_y - row * pixel_size_y};
  }
  Eigen::Vector2d map_to_pixel(double x, double y) const {
    return {(x - origin_x) / pixel_size_x, (origin_y - y) / pixel_size_y};
  }
  Eigen::Vector2d cell_center(Index col, Index row) const {
    return pixel_to_map(static_cast<double>(col) + 0.5, static_cast<double>(row) + 0.5);
  }
  GeoTransform shifted(Index col_offset, Index row_offset) const {
    return {origin_x + static_cast<double>(col_offset) * pixel_size_x,
            origin_y - static_cast<double>(row_offset) * pixel_size_y, pixel_size_x,
            pixel_size_y};
  }
  double cell_area() const { return pixel_size_x * pixel_size_y; }
  bool valid() const {
    return std::isfinite(origin_x) && std::isfinite(origin_y) && pixel_size_x > 0 &&
           pixel_size_y > 0 && std::isfinite(pixel_size_x) && std::isfinite(pixel_size_y);
  }

  friend bool operator==(const GeoTransform&, const GeoTransform&) = default;
};

/// Georeferenced multi-band pixel grid. Bands are stacked vertically in one
/// row-major Eigen array of shape (bands * height, width), so values() is a
/// contiguous band-sequential buffer of width * height * bands scalars.
template <typename Scalar>
class Raster {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using scalar_type = Scalar;

  Raster() = default;
  Raster(Index width, Index height, Index bands, GeoTransform geo = {}, int crs_id = 0,
         std::optional<double> nodata = std::nullopt, Scalar fill = Scalar(0))
      : width_(width), height_(height), bands_(bands), geo_(geo), crs_id_(crs_id),
        nodata_(nodata) {
    require(width >= 0 && height >= 0 && bands >= 0, ErrorKind::Parameter,
            "raster dimensions must be non-negative");
    values_ = Array::Constant(bands * height, width, fill);
  }

  Index width() const { return width_; }
  Index height() const { return height_; }
  Index bands() const { return bands_; }
  Index pixel_count() const { return width_ * height_; }

  const GeoTransform& geo() const { return geo_; }
  void set_geo(const GeoTransform& geo) { geo_ = geo; }
  int crs_id() const { return crs_id_; }
  void set_crs_id(int crs) { crs_id_ = crs; }
  const std::optional<double>& nodata() const { return nodata_; }
  void set_nodata(std::optional<double> nodata) { nodata_ = nodata; }

  const std::vector<std::string>& band_names() const { return band_names_; }
  void set_band_names(std::vector<std::string> names) { band_names_ = std::move(names); }

  Array& values() { return values_; }
  const Array& values() const { return values_; }

  auto band(Index b) { return values_.middleRows(b * height_, height_); }
  auto band(Index b) const { return values_.middleRows(b * height_, height_); }

  Scalar& operator()(Index b, Index row, Index col) { return values_(b * height_ + row, col); }
  Scalar operator()(Index b, Index row, Index col) const {
    return values_(b * height_ + row, col);
  }
  Scalar& at(Index row, Index col) { return values_(row, col); }
  Scalar at(Index row, Index col) const { return values_(row, col); }

  bool contains(Index row, Index col) const {
    return row >= 0 && col >= 0 && row < height_ && col < width_;
  }

  bool is_nodata(Scalar v) const {
    if (!nodata_) return false;
    if constexpr (std::is_floating_point_v<Scalar>) {
      if (std::isnan(*nodata_)) return std::isnan(v);
    }
    return static_cast<double>(v) == *nodata_;
  }

  /// Fill value to write into nodata cells.
  Scalar nodata_value() const {
    return nodata_ ? static_cast<Scalar>(*nodata_) : Scalar(0);
  }

  void validate() const {
    require(bands_ >= 1, ErrorKind::Invariant, "raster must have at least one band");
    require(width_ >= 1 && height_ >= 1, ErrorKind::Invariant, "raster must be non-empty");
    require(values_.rows() == bands_ * height_ && values_.cols() == width_,
            ErrorKind::Invariant, "raster value buffer does not match its shape");
    require(geo_.valid(), ErrorKind::Invariant, "pixel sizes must be positive and finite");
  }

 private:
  Index width_ = 0;
  Index height_ = 0;
  Index bands_ = 0;
  Array values_;
  GeoTransform geo_;
  int crs_id_ = 0;
  std::optional<double> nodata_;
  std::vector<std::string> band_names_;
};

using RasterGrid = Raster<float>;
using LabelRaster = Raster<std::int32_t>;

template <typename A, typename B>
bool same_grid(const Raster<A>& a, const Raster<B>& b) {
  return a.width() == b.width() && a.height() == b.height() && a.geo() == b.geo();
}

/// Field-by-field equality with bit-exact value comparison (NaN == NaN).
template <typename Scalar>
bool bit_equal(const Raster<Scalar>& a, const Raster<Scalar>& b) {
  if (a.width() != b.width() || a.height() != b.height() || a.bands() != b.bands()) return false;
  if (!(a.geo() == b.geo()) || a.crs_id() != b.crs_id()) return false;
  if (a.nodata().has_value() != b.nodata().has_value()) return false;
  if (a.nodata()) {
    const double x = *a.nodata(), y = *b.nodata();
    if (!(x == y || (std::isnan(x) && std::isnan(y)))) return false;
  }
  const auto n = static_cast<std::size_t>(a.values().size());
  return n == 0 || std::memcmp(a.values().data(), b.values().data(), n * sizeof(Scalar)) == 0;
}

template <typename To, typename From>
Raster<To> cast_raster(const Raster<From>& in) {
  Raster<To> out(in.width(), in.height(), in.bands(), in.geo(), in.crs_id(), in.nodata());
  out.values() = in.values().template cast<To>();
  out.set_band_names(in.band_names());
  return out;
}

enum Band : Index { kRed = 0, kGreen = 1, kBlue = 2, kNir = 3 };

struct RadiometricRange {
  double min = 0.0;
  double max = 1.0;
};

/// Four-band (red, green, blue, near-infrared) image with a declared
/// radiometric range. Construction validates both.
class MultiSpectralImage {
 public:
  explicit MultiSpectralImage(RasterGrid grid, RadiometricRange range = {});

  const RasterGrid& grid() const { return grid_; }
  const RadiometricRange& range() const { return range_; }
  Index width() const { return grid_.width(); }
  Index height() const { return grid_.height(); }
  const GeoTransform& geo() const { return grid_.geo(); }

  /// True when any band of the pixel holds the nodata value.
  bool pixel_is_nodata(Index row, Index col) const;

 private:
  RasterGrid grid_;
  RadiometricRange range_;
};

/// Rescales integer imagery into [0,1] by dividing every non-nodata value by
/// the source sample maximum (255 for 8-bit, 65535 for 16-bit). A maximum of
/// 1 leaves float imagery untouched.
MultiSpectralImage to_multispectral(RasterGrid grid, double sample_max);

/// Linear cell indices (row * width + col), ascending, of cells whose centers
/// fall inside a closed ring given in map coordinates.
std::vector<Index> cells_in_ring(const GeoTransform& geo, Index width, Index height,
                                 const std::vector<Eigen::Vector2d>& ring);

/// Crossing-number point-in-polygon test (half-open edge rule).
bool point_in_ring(const Eigen::Vector2d& p, const std::vector<Eigen::Vector2d>& ring);

}  // namespace treecarbon
