#include "treecarbon/raster.hpp"

#include <algorithm>

namespace treecarbon {

MultiSpectralImage::MultiSpectralImage(RasterGrid grid, RadiometricRange range)
    : grid_(std::move(grid)), range_(range) {
  grid_.validate();
  require(grid_.bands() == 4, ErrorKind::Invariant,
          "multispectral image needs exactly 4 bands (R,G,B,NIR), got " +
              std::to_string(grid_.bands()));
  require(range_.min < range_.max, ErrorKind::Invariant, "empty radiometric range");
  const auto& v = grid_.values();
  for (Index i = 0; i < v.size(); ++i) {
    const float x = v.data()[i];
    if (grid_.is_nodata(x)) continue;
    require(std::isfinite(x) && x >= range_.min && x <= range_.max, ErrorKind::Invariant,
            "pixel value " + std::to_string(x) + " outside radiometric range");
  }
  if (grid_.band_names().empty()) grid_.set_band_names({"R", "G", "B", "NIR"});
}

bool MultiSpectralImage::pixel_is_nodata(Index row, Index col) const {
  for (Index b = 0; b < 4; ++b) {
    if (grid_.is_nodata(grid_(b, row, col))) return true;
  }
  return false;
}

MultiSpectralImage to_multispectral(RasterGrid grid, double sample_max) {
  require(sample_max > 0, ErrorKind::Parameter, "sample maximum must be positive");
  if (sample_max != 1.0) {
    auto& v = grid.values();
    const float scale = static_cast<float>(1.0 / sample_max);
    for (Index i = 0; i < v.size(); ++i) {
      float& x = v.data()[i];
      if (!grid.is_nodata(x)) x = std::clamp(x * scale, 0.0f, 1.0f);
    }
  }
  return MultiSpectralImage(std::move(grid), {0.0, 1.0});
}

bool point_in_ring(const Eigen::Vector2d& p, const std::vector<Eigen::Vector2d>& ring) {
  bool inside = false;
  const std::size_t n = ring.size();
  if (n < 3) return false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const auto& a = ring[i];
    const auto& b = ring[j];
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      const double x = a.x() + (p.y() - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
      if (p.x() < x) inside = !inside;
    }
  }
  return inside;
}

std::vector<Index> cells_in_ring(const GeoTransform& geo, Index width, Index height,
                                 const std::vector<Eigen::Vector2d>& ring) {
  std::vector<Index> cells;
  if (ring.size() < 3 || width <= 0 || height <= 0) return cells;
  double min_x = ring[0].x(), max_x = min_x, min_y = ring[0].y(), max_y = min_y;
  for (const auto& v : ring) {
    min_x = std::min(min_x, v.x());
    max_x = std::max(max_x, v.x());
    min_y = std::min(min_y, v.y());
    max_y = std::max(max_y, v.y());
  }
  const Eigen::Vector2d top_left = geo.map_to_pixel(min_x, max_y);
  const Eigen::Vector2d bottom_right = geo.map_to_pixel(max_x, min_y);
  const auto clamp_to = [](double v, Index hi) {
    return static_cast<Index>(std::clamp(v, -1.0, static_cast<double>(hi)));
  };
  const Index c0 = std::max<Index>(0, clamp_to(std::floor(top_left.x()) - 1, width));
  const Index r0 = std::max<Index>(0, clamp_to(std::floor(top_left.y()) - 1, height));
  const Index c1 = std::min<Index>(width - 1, clamp_to(std::ceil(bottom_right.x()) + 1, width));
  const Index r1 = std::min<Index>(height - 1, clamp_to(std::ceil(bottom_right.y()) + 1, height));
  for (Index r = r0; r <= r1; ++r) {
    for (Index c = c0; c <= c1; ++c) {
      if (point_in_ring(geo.cell_center(c, r), ring)) cells.push_back(r * width + c);
    }
  }
  return cells;
}

}  // namespace treecarbon
