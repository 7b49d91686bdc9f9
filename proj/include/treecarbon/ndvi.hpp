#pragma once

#include "treecarbon/raster.hpp"

namespace treecarbon {

/// Single-band (NIR - R) / (NIR + R). Pixels with NIR + R == 0 map to 0;
/// pixels where either band is nodata become NaN, the output's nodata value.
RasterGrid compute_ndvi(const MultiSpectralImage& image);

/// Same arithmetic on a raw grid; throws an invariant error unless it has
/// exactly four bands.
RasterGrid compute_ndvi(const RasterGrid& grid);

inline float ndvi_value(float nir, float red) {
  const double denom = static_cast<double>(nir) + static_cast<double>(red);
  if (denom == 0.0) return 0.0f;
  const double v = (static_cast<double>(nir) - static_cast<double>(red)) / denom;
  return static_cast<float>(v < -1.0 ? -1.0 : (v > 1.0 ? 1.0 : v));
}

}  // namespace treecarbon
