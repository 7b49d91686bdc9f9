#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "treecarbon/learn.hpp"
#include "treecarbon/ndvi.hpp"

namespace treecarbon {

FeatureStack extract_features(const MultiSpectralImage& image, Index window) {
  require(window >= 3 && window % 2 == 1, ErrorKind::Parameter,
          fmt::format("texture window must be odd and >= 3, got {}", window));
  const float nan = std::numeric_limits<float>::quiet_NaN();
  const RasterGrid& src = image.grid();
  const Index w = src.width(), h = src.height(), half = window / 2;

  RasterGrid out(w, h, kPixelFeatureCount, src.geo(), src.crs_id(),
                 std::numeric_limits<double>::quiet_NaN(), nan);
  out.set_band_names({"R", "G", "B", "NIR", "NDVI", "texture_std", "texture_mean"});

  const RasterGrid ndvi = compute_ndvi(image);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      if (image.pixel_is_nodata(r, c)) continue;
      for (Index b = 0; b < 4; ++b) out(b, r, c) = src(b, r, c);
    }
  }
  out.band(kFeatNdvi) = ndvi.band(0);

  const double count = static_cast<double>(window * window);
  for (Index r = half; r < h - half; ++r) {
    for (Index c = half; c < w - half; ++c) {
      const auto block = ndvi.band(0).block(r - half, c - half, window, window);
      if (block.isNaN().any()) continue;
      const double mean = block.template cast<double>().sum() / count;
      const double var = (block.template cast<double>() - mean).square().sum() / count;
      out(kFeatTextureMean, r, c) = static_cast<float>(mean);
      out(kFeatTextureStd, r, c) = static_cast<float>(std::sqrt(var));
    }
  }
  return {std::move(out), window};
}

}  // namespace treecarbon
