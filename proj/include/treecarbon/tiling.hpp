#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "treecarbon/raster.hpp"

namespace treecarbon {

struct Window {
  Index col = 0;
  Index row = 0;
  Index cols = 0;
  Index rows = 0;

  bool contains(Index r, Index c) const {
    return r >= row && c >= col && r < row + rows && c < col + cols;
  }
  friend bool operator==(const Window&, const Window&) = default;
};

/// Sliding-window tiling: tiles of tile_size pixels placed every
/// tile_size - 2 * overlap pixels. A tile's core is the tile minus an overlap
/// margin on every side that faces another tile; cores partition the grid.
struct TileLayout {
  Index width = 0;
  Index height = 0;
  Index bands = 1;
  Index tile_size = 0;
  Index overlap = 0;
  GeoTransform geo;
  int crs_id = 0;
  std::optional<double> nodata;

  struct Cell {
    Window extent;
    Window core;
  };

  std::vector<Cell> cells() const;
};

template <typename Scalar>
struct Tile {
  Raster<Scalar> grid;
  Index col_offset = 0;
  Index row_offset = 0;
  Window core;  // grid coordinates of the full raster
};

namespace detail {

// Start offsets and core spans along one axis.
inline std::vector<std::pair<Index, Index>> axis_cores(Index length, Index tile, Index overlap,
                                                       std::vector<Index>* starts) {
  const Index stride = tile - 2 * overlap;
  const Index count = length <= tile ? 1 : (length - tile + stride - 1) / stride + 1;
  std::vector<std::pair<Index, Index>> cores;
  for (Index i = 0; i < count; ++i) {
    const Index start = i * stride;
    const Index core_begin = i == 0 ? 0 : start + overlap;
    const Index core_end = i == count - 1 ? length : start + tile - overlap;
    starts->push_back(start);
    cores.emplace_back(core_begin, core_end - core_begin);
  }
  return cores;
}

}  // namespace detail

inline std::vector<TileLayout::Cell> TileLayout::cells() const {
  require(tile_size > 2 * overlap && overlap >= 0, ErrorKind::Parameter,
          fmt::format("tile_size ({}) must exceed 2 x overlap ({})", tile_size, overlap));
  std::vector<Index> col_starts, row_starts;
  const auto col_cores = detail::axis_cores(width, tile_size, overlap, &col_starts);
  const auto row_cores = detail::axis_cores(height, tile_size, overlap, &row_starts);
  std::vector<Cell> out;
  for (std::size_t i = 0; i < row_starts.size(); ++i) {
    for (std::size_t j = 0; j < col_starts.size(); ++j) {
      Cell cell;
      cell.extent = {col_starts[j], row_starts[i], std::min(tile_size, width - col_starts[j]),
                     std::min(tile_size, height - row_starts[i])};
      cell.core = {col_cores[j].first, row_cores[i].first, col_cores[j].second,
                   row_cores[i].second};
      out.push_back(cell);
    }
  }
  return out;
}

template <typename Scalar>
Raster<Scalar> crop(const Raster<Scalar>& grid, const Window& w) {
  require(w.col >= 0 && w.row >= 0 && w.col + w.cols <= grid.width() &&
              w.row + w.rows <= grid.height() && w.cols > 0 && w.rows > 0,
          ErrorKind::Parameter, "crop window outside raster");
  Raster<Scalar> out(w.cols, w.rows, grid.bands(), grid.geo().shifted(w.col, w.row),
                     grid.crs_id(), grid.nodata());
  for (Index b = 0; b < grid.bands(); ++b) {
    out.band(b) = grid.band(b).block(w.row, w.col, w.rows, w.cols);
  }
  out.set_band_names(grid.band_names());
  return out;
}

template <typename Scalar>
TileLayout make_layout(const Raster<Scalar>& grid, Index tile_size, Index overlap) {
  require(tile_size > 2 * overlap && overlap >= 0, ErrorKind::Parameter,
          fmt::format("tile_size ({}) must exceed 2 x overlap ({})", tile_size, overlap));
  return {grid.width(), grid.height(), grid.bands(), tile_size, overlap,
          grid.geo(),   grid.crs_id(), grid.nodata()};
}

template <typename Scalar>
std::vector<Tile<Scalar>> tile_grid(const Raster<Scalar>& grid, Index tile_size, Index overlap) {
  grid.validate();
  const TileLayout layout = make_layout(grid, tile_size, overlap);
  std::vector<Tile<Scalar>> tiles;
  for (const auto& cell : layout.cells()) {
    tiles.push_back({crop(grid, cell.extent), cell.extent.col, cell.extent.row, cell.core});
  }
  return tiles;
}

/// Writes each tile's core back into a raster of the layout's shape. Output
/// is independent of tile order; every expected tile must be present once.
template <typename Scalar>
Raster<Scalar> merge_tiles(std::span<const Tile<Scalar>> tiles, const TileLayout& layout) {
  const auto cells = layout.cells();
  Raster<Scalar> out(layout.width, layout.height, layout.bands, layout.geo, layout.crs_id,
                     layout.nodata);
  std::vector<int> seen(cells.size(), 0);
  for (const auto& tile : tiles) {
    auto it = std::find_if(cells.begin(), cells.end(), [&](const TileLayout::Cell& c) {
      return c.extent.col == tile.col_offset && c.extent.row == tile.row_offset;
    });
    require(it != cells.end(), ErrorKind::Parameter,
            fmt::format("tile offset ({}, {}) does not belong to the layout", tile.col_offset,
                        tile.row_offset));
    const auto k = static_cast<std::size_t>(it - cells.begin());
    require(seen[k] == 0, ErrorKind::Parameter,
            fmt::format("duplicate tile at offset ({}, {})", tile.col_offset, tile.row_offset));
    require(tile.grid.width() == it->extent.cols && tile.grid.height() == it->extent.rows &&
                tile.grid.bands() == layout.bands,
            ErrorKind::Parameter,
            fmt::format("tile at offset ({}, {}) has inconsistent shape", tile.col_offset,
                        tile.row_offset));
    seen[k] = 1;
    const Window& core = it->core;
    for (Index b = 0; b < layout.bands; ++b) {
      out.band(b).block(core.row, core.col, core.rows, core.cols) =
          tile.grid.band(b).block(core.row - tile.row_offset, core.col - tile.col_offset,
                                  core.rows, core.cols);
    }
  }
  std::string missing;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    if (!seen[k]) {
      missing += fmt::format("{}({}, {})", missing.empty() ? "" : ", ", cells[k].extent.col,
                             cells[k].extent.row);
    }
  }
  require(missing.empty(), ErrorKind::IncompleteCoverage, "missing tiles at offsets " + missing);
  return out;
}

template <typename Scalar>
Raster<Scalar> merge_tiles(const std::vector<Tile<Scalar>>& tiles, const TileLayout& layout) {
  return merge_tiles(std::span<const Tile<Scalar>>(tiles), layout);
}

}  // namespace treecarbon
