#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "treecarbon/raster.hpp"

namespace treecarbon {

// Supported GeoTIFF subset:
//   classic TIFF (II or MM), first IFD only;
//   stripped or tiled; uncompressed (1) or Deflate (8, 32946); predictor 1;
//   unsigned 8/16-bit integers or 32-bit IEEE floats, one type for all samples;
//   chunky (pixel-interleaved) or planar (band-interleaved) configuration;
//   north-up georeference via ModelPixelScale + ModelTiepoint or an
//   unrotated ModelTransformation; EPSG code from the GeoKey directory;
//   nodata from the GDAL_NODATA ASCII tag.
// Everything else is rejected with a typed Error.

enum class SampleType : std::uint8_t { UInt8, UInt16, Float32 };

/// Maximum representable value of an integer sample type; 1 for floats.
double sample_type_max(SampleType type);

struct GeoTiffInfo {
  SampleType sample_type = SampleType::Float32;
  bool tiled = false;
  bool planar = false;
  bool deflate = false;
  bool big_endian = false;
};

struct GeoTiffImage {
  RasterGrid grid;
  GeoTiffInfo info;
};

GeoTiffImage decode_geotiff(std::span<const std::uint8_t> bytes);
GeoTiffImage read_geotiff_with_info(const std::filesystem::path& path);
RasterGrid read_geotiff(const std::filesystem::path& path);

/// Reads a 4-band image and rescales integer samples into [0,1].
MultiSpectralImage read_multispectral(const std::filesystem::path& path);

struct GeoTiffWriteOptions {
  SampleType sample_type = SampleType::Float32;
  bool tiled = true;
  bool planar = true;
  bool deflate = true;
  Index tile_size = 256;  // multiple of 16
  Index rows_per_strip = 16;
};

/// Encodes a grid. The default options produce the interchange profile: tiled,
/// Deflate-compressed, band-interleaved 32-bit float. Integer sample types
/// round and saturate the stored values.
std::vector<std::uint8_t> encode_geotiff(const RasterGrid& grid,
                                         const GeoTiffWriteOptions& options = {});
void write_geotiff(const RasterGrid& grid, const std::filesystem::path& path,
                   const GeoTiffWriteOptions& options = {});

// Plain binary grid: "CGRD", u32 width, u32 height, u32 bands, f64 pixel
// size, then width * height * bands little-endian f32 values band by band.
std::vector<std::uint8_t> encode_cgrd(const RasterGrid& grid);
RasterGrid decode_cgrd(std::span<const std::uint8_t> bytes);
void write_cgrd(const RasterGrid& grid, const std::filesystem::path& path);
RasterGrid read_cgrd(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace treecarbon
