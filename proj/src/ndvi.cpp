#include "treecarbon/ndvi.hpp"

#include <limits>
#include <string>

namespace treecarbon {

RasterGrid compute_ndvi(const RasterGrid& grid) {
  grid.validate();
  require(grid.bands() == 4, ErrorKind::Invariant,
          "NDVI needs a 4-band (R,G,B,NIR) image, got " + std::to_string(grid.bands()) + " bands");
  const float nan = std::numeric_limits<float>::quiet_NaN();
  RasterGrid out(grid.width(), grid.height(), 1, grid.geo(), grid.crs_id(),
                 std::numeric_limits<double>::quiet_NaN());
  out.set_band_names({"NDVI"});
  const auto red = grid.band(kRed);
  const auto nir = grid.band(kNir);
  auto dst = out.band(0);
  for (Index r = 0; r < grid.height(); ++r) {
    for (Index c = 0; c < grid.width(); ++c) {
      const float rv = red(r, c), nv = nir(r, c);
      dst(r, c) = grid.is_nodata(rv) || grid.is_nodata(nv) ? nan : ndvi_value(nv, rv);
    }
  }
  return out;
}

RasterGrid compute_ndvi(const MultiSpectralImage& image) { return compute_ndvi(image.grid()); }

}  // namespace treecarbon
