#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "treecarbon/lidar.hpp"

namespace treecarbon {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
const float kNaN = std::numeric_limits<float>::quiet_NaN();

RasterGrid rasterize(const PointCloud& cloud, const PointFilter& filter, const GridSpec& spec,
                     Reducer reducer, bool clamp_edges) {
  require(spec.width > 0 && spec.height > 0 && spec.geo.valid(), ErrorKind::Parameter,
          "rasterization grid must be non-empty with positive cell size");
  const Index cells = spec.width * spec.height;
  Eigen::ArrayXd acc;
  Eigen::ArrayXi count = Eigen::ArrayXi::Zero(cells);
  switch (reducer) {
    case Reducer::Max: acc = Eigen::ArrayXd::Constant(cells, -kInf); break;
    case Reducer::Min: acc = Eigen::ArrayXd::Constant(cells, kInf); break;
    case Reducer::Mean: acc = Eigen::ArrayXd::Zero(cells); break;
  }
  Index selected = 0;
  for (Index i = 0; i < cloud.size(); ++i) {
    const LidarPoint p = cloud.point(i);
    if (filter && !filter(p)) continue;
    ++selected;
    const Eigen::Vector2d px = spec.geo.map_to_pixel(p.position.x(), p.position.y());
    double col = std::floor(px.x()), row = std::floor(px.y());
    if (clamp_edges) {
      col = std::clamp(col, 0.0, static_cast<double>(spec.width - 1));
      row = std::clamp(row, 0.0, static_cast<double>(spec.height - 1));
    }
    if (col < 0 || row < 0 || col >= static_cast<double>(spec.width) ||
        row >= static_cast<double>(spec.height)) {
      continue;
    }
    const Index k = static_cast<Index>(row) * spec.width + static_cast<Index>(col);
    const double z = p.position.z();
    switch (reducer) {
      case Reducer::Max: acc[k] = std::max(acc[k], z); break;
      case Reducer::Min: acc[k] = std::min(acc[k], z); break;
      case Reducer::Mean: acc[k] += z; break;
    }
    ++count[k];
  }
  require(selected > 0, ErrorKind::EmptySelection, "no points pass the rasterization filter");

  RasterGrid out(spec.width, spec.height, 1, spec.geo, spec.crs_id,
                 std::numeric_limits<double>::quiet_NaN(), kNaN);
  for (Index k = 0; k < cells; ++k) {
    if (count[k] == 0) continue;
    const double v = reducer == Reducer::Mean ? acc[k] / count[k] : acc[k];
    out.values().data()[k] = static_cast<float>(v);
  }
  return out;
}

// One-dimensional squared distance transform of sampled function f using the
// lower envelope of parabolas. Writes distances to d and the source index of
// each minimum to arg. Entries of f equal to +inf are ignored.
void distance_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<Index>& arg) {
  const Index n = static_cast<Index>(f.size());
  std::vector<Index> v(static_cast<std::size_t>(n));
  std::vector<double> z(static_cast<std::size_t>(n) + 1);
  Index k = -1;
  for (Index q = 0; q < n; ++q) {
    const auto qi = static_cast<std::size_t>(q);
    if (f[qi] == kInf) continue;
    while (k >= 0) {
      const auto vk = static_cast<std::size_t>(v[static_cast<std::size_t>(k)]);
      const double s = ((f[qi] + static_cast<double>(q * q)) -
                        (f[vk] + static_cast<double>(vk * vk))) /
                       (2.0 * static_cast<double>(q - static_cast<Index>(vk)));
      if (s <= z[static_cast<std::size_t>(k)]) {
        --k;
      } else {
        ++k;
        v[static_cast<std::size_t>(k)] = q;
        z[static_cast<std::size_t>(k)] = s;
        z[static_cast<std::size_t>(k) + 1] = kInf;
        break;
      }
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
    }
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), kInf);
    std::fill(arg.begin(), arg.end(), -1);
    return;
  }
  Index j = 0;
  for (Index q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(j) + 1] < static_cast<double>(q)) ++j;
    const Index src = v[static_cast<std::size_t>(j)];
    const double dq = static_cast<double>(q - src);
    d[static_cast<std::size_t>(q)] = dq * dq + f[static_cast<std::size_t>(src)];
    arg[static_cast<std::size_t>(q)] = src;
  }
}

}  // namespace

GridSpec grid_for_cloud(const PointCloud& cloud, double cell_size) {
  require(cell_size > 0 && std::isfinite(cell_size), ErrorKind::Parameter,
          fmt::format("cell size must be positive, got {}", cell_size));
  require(!cloud.empty(), ErrorKind::EmptySelection, "point cloud is empty");
  const Eigen::Vector3d lo = cloud.min_corner();
  const Eigen::Vector3d hi = cloud.max_corner();
  GridSpec spec;
  spec.geo = {lo.x(), hi.y(), cell_size, cell_size};
  spec.width = std::max<Index>(1, static_cast<Index>(std::ceil((hi.x() - lo.x()) / cell_size)));
  spec.height = std::max<Index>(1, static_cast<Index>(std::ceil((hi.y() - lo.y()) / cell_size)));
  return spec;
}

RasterGrid rasterize_surface(const PointCloud& cloud, const PointFilter& filter,
                             const GridSpec& grid, Reducer reducer) {
  return rasterize(cloud, filter, grid, reducer, false);
}

RasterGrid rasterize_surface(const PointCloud& cloud, const PointFilter& filter, double cell_size,
                             Reducer reducer) {
  return rasterize(cloud, filter, grid_for_cloud(cloud, cell_size), reducer, true);
}

RasterGrid fill_nearest(const RasterGrid& grid) {
  const Index w = grid.width(), h = grid.height();
  const auto& src = grid.values();
  auto valid = [&](Index r, Index c) { return !std::isnan(src(r, c)) && !grid.is_nodata(src(r, c)); };

  // Column pass: squared distance to the nearest valid cell in the same column.
  Eigen::ArrayXXd col_dist(h, w);
  Eigen::Array<Index, Eigen::Dynamic, Eigen::Dynamic> col_src(h, w);
  bool any = false;
  {
    std::vector<double> f(static_cast<std::size_t>(h)), d(static_cast<std::size_t>(h));
    std::vector<Index> arg(static_cast<std::size_t>(h));
    for (Index c = 0; c < w; ++c) {
      for (Index r = 0; r < h; ++r) {
        f[static_cast<std::size_t>(r)] = valid(r, c) ? 0.0 : kInf;
        any = any || valid(r, c);
      }
      distance_1d(f, d, arg);
      for (Index r = 0; r < h; ++r) {
        col_dist(r, c) = d[static_cast<std::size_t>(r)];
        col_src(r, c) = arg[static_cast<std::size_t>(r)];
      }
    }
  }
  require(any, ErrorKind::EmptySelection, "nearest-neighbour fill needs at least one valid cell");

  RasterGrid out = grid;
  std::vector<double> f(static_cast<std::size_t>(w)), d(static_cast<std::size_t>(w));
  std::vector<Index> arg(static_cast<std::size_t>(w));
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) f[static_cast<std::size_t>(c)] = col_dist(r, c);
    distance_1d(f, d, arg);
    for (Index c = 0; c < w; ++c) {
      if (valid(r, c)) continue;
      const Index sc = arg[static_cast<std::size_t>(c)];
      const Index sr = col_src(r, sc);
      out.at(r, c) = src(sr, sc);
    }
  }
  return out;
}

RasterGrid build_chm(const PointCloud& cloud, const GridSpec& grid) {
  cloud.validate();
  const bool has_ground = std::any_of(cloud.classification.begin(), cloud.classification.end(),
                                      [](std::uint8_t c) { return c == kClassGround; });
  require(has_ground, ErrorKind::NoGroundSurface,
          "point cloud has no ground-classified (class 2) points");
  const RasterGrid dsm = rasterize_surface(cloud, is_first_return, grid, Reducer::Max);
  RasterGrid dtm_raw = rasterize_surface(cloud, is_ground, grid, Reducer::Mean);
  require((!dtm_raw.values().isNaN()).any(), ErrorKind::NoGroundSurface,
          "no ground points fall inside the CHM grid");
  const RasterGrid dtm = fill_nearest(dtm_raw);

  RasterGrid chm(grid.width, grid.height, 1, grid.geo, grid.crs_id,
                 std::numeric_limits<double>::quiet_NaN(), kNaN);
  chm.set_band_names({"CHM"});
  for (Index k = 0; k < chm.values().size(); ++k) {
    const float top = dsm.values().data()[k];
    if (std::isnan(top)) continue;
    const double height = static_cast<double>(top) - static_cast<double>(dtm.values().data()[k]);
    chm.values().data()[k] = static_cast<float>(std::max(height, 0.0));
  }
  return chm;
}

RasterGrid build_chm(const PointCloud& cloud, double cell_size) {
  return build_chm(cloud, grid_for_cloud(cloud, cell_size));
}

double sample_mean_height(const RasterGrid& chm, const std::vector<Eigen::Vector2d>& ring,
                          std::size_t min_samples) {
  double sum = 0.0;
  std::size_t n = 0;
  for (Index k : cells_in_ring(chm.geo(), chm.width(), chm.height(), ring)) {
    const float v = chm.values().data()[k];
    if (std::isnan(v) || chm.is_nodata(v)) continue;
    sum += v;
    ++n;
  }
  require(n >= std::max<std::size_t>(min_samples, 1), ErrorKind::InsufficientCoverage,
          fmt::format("crown covers {} valid CHM cells, need {}", n, min_samples));
  return sum / static_cast<double>(n);
}

}  // namespace treecarbon
