#include "treecarbon/geotiff.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <string>

#include <fmt/format.h>

namespace treecarbon {
namespace {

namespace tag {
constexpr std::uint16_t kImageWidth = 256;
constexpr std::uint16_t kImageLength = 257;
constexpr std::uint16_t kBitsPerSample = 258;
constexpr std::uint16_t kCompression = 259;
constexpr std::uint16_t kPhotometric = 262;
constexpr std::uint16_t kStripOffsets = 273;
constexpr std::uint16_t kSamplesPerPixel = 277;
constexpr std::uint16_t kRowsPerStrip = 278;
constexpr std::uint16_t kStripByteCounts = 279;
constexpr std::uint16_t kPlanarConfig = 284;
constexpr std::uint16_t kPredictor = 317;
constexpr std::uint16_t kTileWidth = 322;
constexpr std::uint16_t kTileLength = 323;
constexpr std::uint16_t kTileOffsets = 324;
constexpr std::uint16_t kTileByteCounts = 325;
constexpr std::uint16_t kExtraSamples = 338;
constexpr std::uint16_t kSampleFormat = 339;
constexpr std::uint16_t kModelPixelScale = 33550;
constexpr std::uint16_t kModelTiepoint = 33922;
constexpr std::uint16_t kModelTransformation = 34264;
constexpr std::uint16_t kGeoKeyDirectory = 34735;
constexpr std::uint16_t kGdalNodata = 42113;
}  // namespace tag

constexpr std::uint16_t kGeoKeyModelType = 1024;
constexpr std::uint16_t kGeoKeyRasterType = 1025;
constexpr std::uint16_t kGeoKeyGeographicType = 2048;
constexpr std::uint16_t kGeoKeyProjectedType = 3072;

enum FieldType : std::uint16_t {
  kByte = 1,
  kAscii = 2,
  kShort = 3,
  kLong = 4,
  kRational = 5,
  kSByte = 6,
  kUndefined = 7,
  kSShort = 8,
  kSLong = 9,
  kSRational = 10,
  kFloat = 11,
  kDouble = 12,
};

std::size_t field_type_size(std::uint16_t type) {
  switch (type) {
    case kByte: case kAscii: case kSByte: case kUndefined: return 1;
    case kShort: case kSShort: return 2;
    case kLong: case kSLong: case kFloat: return 4;
    case kRational: case kSRational: case kDouble: return 8;
    default: return 0;
  }
}

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, bool big_endian)
      : bytes_(bytes), big_endian_(big_endian) {}

  void need(std::uint64_t offset, std::uint64_t count, const char* what) const {
    if (offset > bytes_.size() || count > bytes_.size() - offset) {
      fail(ErrorKind::Parse, fmt::format("truncated TIFF: {} at byte offset {} needs {} bytes, "
                                         "file has {}",
                                         what, offset, count, bytes_.size()));
    }
  }

  template <typename T>
  T read(std::uint64_t offset) const {
    need(offset, sizeof(T), "field");
    T v;
    std::memcpy(&v, bytes_.data() + offset, sizeof(T));
    if (big_endian_ != (std::endian::native == std::endian::big)) v = byteswap(v);
    return v;
  }

  template <typename T>
  static T byteswap(T v) {
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    std::reverse(raw, raw + sizeof(T));
    std::memcpy(&v, raw, sizeof(T));
    return v;
  }

  std::span<const std::uint8_t> slice(std::uint64_t offset, std::uint64_t count,
                                      const char* what) const {
    need(offset, count, what);
    return bytes_.subspan(offset, count);
  }

  bool big_endian() const { return big_endian_; }

 private:
  std::span<const std::uint8_t> bytes_;
  bool big_endian_;
};

struct Field {
  std::uint16_t type = 0;
  std::vector<double> numbers;
  std::string text;
};

using Ifd = std::map<std::uint16_t, Field>;

Field read_field(const ByteReader& in, std::uint64_t entry_offset) {
  Field f;
  const auto id = in.read<std::uint16_t>(entry_offset);
  f.type = in.read<std::uint16_t>(entry_offset + 2);
  const auto count = in.read<std::uint32_t>(entry_offset + 4);
  const std::size_t size = field_type_size(f.type);
  if (size == 0) {
    // Unknown types are legal TIFF; skip their payload.
    return f;
  }
  const std::uint64_t total = static_cast<std::uint64_t>(size) * count;
  const std::uint64_t data_offset =
      total <= 4 ? entry_offset + 8 : in.read<std::uint32_t>(entry_offset + 8);
  in.need(data_offset, total, fmt::format("tag {} payload", id).c_str());
  if (f.type == kAscii) {
    auto raw = in.slice(data_offset, total, "ascii");
    f.text.assign(raw.begin(), raw.end());
    while (!f.text.empty() && f.text.back() == '\0') f.text.pop_back();
    return f;
  }
  f.numbers.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint64_t at = data_offset + static_cast<std::uint64_t>(i) * size;
    switch (f.type) {
      case kByte: case kUndefined: f.numbers.push_back(in.read<std::uint8_t>(at)); break;
      case kSByte: f.numbers.push_back(in.read<std::int8_t>(at)); break;
      case kShort: f.numbers.push_back(in.read<std::uint16_t>(at)); break;
      case kSShort: f.numbers.push_back(in.read<std::int16_t>(at)); break;
      case kLong: f.numbers.push_back(in.read<std::uint32_t>(at)); break;
      case kSLong: f.numbers.push_back(in.read<std::int32_t>(at)); break;
      case kFloat: f.numbers.push_back(in.read<float>(at)); break;
      case kDouble: f.numbers.push_back(in.read<double>(at)); break;
      case kRational: {
        const double num = in.read<std::uint32_t>(at);
        const double den = in.read<std::uint32_t>(at + 4);
        f.numbers.push_back(den == 0 ? 0.0 : num / den);
        break;
      }
      case kSRational: {
        const double num = in.read<std::int32_t>(at);
        const double den = in.read<std::int32_t>(at + 4);
        f.numbers.push_back(den == 0 ? 0.0 : num / den);
        break;
      }
      default: break;
    }
  }
  return f;
}

const Field* find(const Ifd& ifd, std::uint16_t id) {
  auto it = ifd.find(id);
  return it == ifd.end() ? nullptr : &it->second;
}

double scalar_tag(const Ifd& ifd, std::uint16_t id, std::optional<double> fallback,
                  const char* name) {
  const Field* f = find(ifd, id);
  if (!f || f->numbers.empty()) {
    if (fallback) return *fallback;
    fail(ErrorKind::Parse, fmt::format("required TIFF tag {} ({}) missing", name, id));
  }
  return f->numbers.front();
}

std::vector<std::uint64_t> array_tag(const Ifd& ifd, std::uint16_t id, const char* name) {
  const Field* f = find(ifd, id);
  if (!f || f->numbers.empty()) {
    fail(ErrorKind::Parse, fmt::format("required TIFF tag {} ({}) missing", name, id));
  }
  std::vector<std::uint64_t> out;
  out.reserve(f->numbers.size());
  for (double v : f->numbers) out.push_back(static_cast<std::uint64_t>(v));
  return out;
}

std::vector<std::uint8_t> inflate_chunk(std::span<const std::uint8_t> compressed,
                                        std::size_t expected, std::uint64_t offset) {
  std::vector<std::uint8_t> out(expected);
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) fail(ErrorKind::Parse, "zlib initialisation failed");
  zs.next_in = const_cast<Bytef*>(compressed.data());
  zs.avail_in = static_cast<uInt>(compressed.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  const std::size_t produced = zs.total_out;
  inflateEnd(&zs);
  // Z_BUF_ERROR with a full output buffer means the stream carried padding.
  if ((rc != Z_STREAM_END && !(rc == Z_BUF_ERROR && produced == expected)) ||
      produced < expected) {
    fail(ErrorKind::Parse,
         fmt::format("corrupt or truncated Deflate chunk at byte offset {} ({} of {} bytes)",
                     offset, produced, expected));
  }
  return out;
}

struct Layout {
  Index width = 0;
  Index height = 0;
  Index samples = 1;
  SampleType type = SampleType::Float32;
  std::size_t sample_bytes = 4;
  bool planar = false;
  bool tiled = false;
  bool deflate = false;
  Index chunk_width = 0;
  Index chunk_height = 0;
};

float decode_sample(const std::uint8_t* p, SampleType type, bool swap) {
  switch (type) {
    case SampleType::UInt8: return static_cast<float>(*p);
    case SampleType::UInt16: {
      std::uint16_t v;
      std::memcpy(&v, p, 2);
      if (swap) v = ByteReader::byteswap(v);
      return static_cast<float>(v);
    }
    case SampleType::Float32: {
      float v;
      std::memcpy(&v, p, 4);
      if (swap) v = ByteReader::byteswap(v);
      return v;
    }
  }
  return 0.0f;
}

GeoTransform read_georeference(const Ifd& ifd) {
  const Field* transform = find(ifd, tag::kModelTransformation);
  const Field* scale = find(ifd, tag::kModelPixelScale);
  const Field* tie = find(ifd, tag::kModelTiepoint);
  GeoTransform geo;
  if (transform) {
    const auto& m = transform->numbers;
    if (m.size() != 16) fail(ErrorKind::MalformedGeoreference, "ModelTransformation needs 16 values");
    if (m[1] != 0.0 || m[4] != 0.0) {
      fail(ErrorKind::MalformedGeoreference, "rotated ModelTransformation is not supported");
    }
    geo = {m[3], m[7], m[0], -m[5]};
  } else if (scale && tie) {
    if (scale->numbers.size() < 2 || tie->numbers.size() < 6) {
      fail(ErrorKind::MalformedGeoreference, "ModelPixelScale/ModelTiepoint too short");
    }
    const double sx = scale->numbers[0], sy = scale->numbers[1];
    const auto& t = tie->numbers;
    geo = {t[3] - t[0] * sx, t[4] + t[1] * sy, sx, sy};
  } else {
    fail(ErrorKind::MalformedGeoreference,
         "missing georeferencing: need ModelPixelScale + ModelTiepoint or ModelTransformation");
  }
  if (!geo.valid()) {
    fail(ErrorKind::MalformedGeoreference,
         fmt::format("non north-up or degenerate pixel size ({}, {})", geo.pixel_size_x,
                     geo.pixel_size_y));
  }
  return geo;
}

int read_geokeys(const Ifd& ifd, GeoTransform& geo) {
  const Field* keys = find(ifd, tag::kGeoKeyDirectory);
  if (!keys) return 0;
  const auto& k = keys->numbers;
  if (k.size() < 4) fail(ErrorKind::MalformedGeoreference, "GeoKeyDirectory header too short");
  const std::size_t n = static_cast<std::size_t>(k[3]);
  if (k.size() < 4 + 4 * n) fail(ErrorKind::MalformedGeoreference, "GeoKeyDirectory truncated");
  int projected = 0, geographic = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = static_cast<std::uint16_t>(k[4 + 4 * i]);
    const auto location = static_cast<std::uint16_t>(k[5 + 4 * i]);
    const auto value = static_cast<int>(k[7 + 4 * i]);
    if (location != 0) continue;
    if (id == kGeoKeyProjectedType) projected = value;
    if (id == kGeoKeyGeographicType) geographic = value;
    if (id == kGeoKeyRasterType && value == 2) {
      // PixelIsPoint: the tiepoint addresses a pixel center.
      geo.origin_x -= 0.5 * geo.pixel_size_x;
      geo.origin_y += 0.5 * geo.pixel_size_y;
    }
  }
  return projected != 0 ? projected : geographic;
}

}  // namespace

double sample_type_max(SampleType type) {
  switch (type) {
    case SampleType::UInt8: return 255.0;
    case SampleType::UInt16: return 65535.0;
    case SampleType::Float32: return 1.0;
  }
  return 1.0;
}

GeoTiffImage decode_geotiff(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) fail(ErrorKind::Parse, "truncated TIFF: header needs 8 bytes");
  bool big_endian;
  if (bytes[0] == 'I' && bytes[1] == 'I') {
    big_endian = false;
  } else if (bytes[0] == 'M' && bytes[1] == 'M') {
    big_endian = true;
  } else {
    fail(ErrorKind::UnsupportedFormat, "not a TIFF file (bad byte-order mark)");
  }
  const ByteReader in(bytes, big_endian);
  const auto magic = in.read<std::uint16_t>(2);
  if (magic == 43) fail(ErrorKind::UnsupportedFormat, "BigTIFF is not supported");
  if (magic != 42) fail(ErrorKind::UnsupportedFormat, fmt::format("bad TIFF magic {}", magic));

  const std::uint64_t ifd_offset = in.read<std::uint32_t>(4);
  const auto entry_count = in.read<std::uint16_t>(ifd_offset);
  in.need(ifd_offset + 2, 12ull * entry_count + 4, "IFD entries");
  Ifd ifd;
  for (std::uint16_t i = 0; i < entry_count; ++i) {
    const std::uint64_t entry = ifd_offset + 2 + 12ull * i;
    ifd[in.read<std::uint16_t>(entry)] = read_field(in, entry);
  }

  Layout L;
  L.width = static_cast<Index>(scalar_tag(ifd, tag::kImageWidth, std::nullopt, "ImageWidth"));
  L.height = static_cast<Index>(scalar_tag(ifd, tag::kImageLength, std::nullopt, "ImageLength"));
  L.samples = static_cast<Index>(scalar_tag(ifd, tag::kSamplesPerPixel, 1.0, "SamplesPerPixel"));
  if (L.width <= 0 || L.height <= 0 || L.samples <= 0) {
    fail(ErrorKind::Parse, "TIFF declares an empty image");
  }

  const auto compression = static_cast<int>(scalar_tag(ifd, tag::kCompression, 1.0, "Compression"));
  if (compression != 1 && compression != 8 && compression != 32946) {
    fail(ErrorKind::UnsupportedFormat,
         fmt::format("unsupported Compression (tag 259) = {}", compression));
  }
  L.deflate = compression != 1;
  const auto predictor = static_cast<int>(scalar_tag(ifd, tag::kPredictor, 1.0, "Predictor"));
  if (predictor != 1) {
    fail(ErrorKind::UnsupportedFormat, fmt::format("unsupported Predictor (tag 317) = {}", predictor));
  }

  const Field* bits_field = find(ifd, tag::kBitsPerSample);
  if (!bits_field || bits_field->numbers.empty()) {
    fail(ErrorKind::UnsupportedFormat, "BitsPerSample (tag 258) missing");
  }
  const double bits = bits_field->numbers.front();
  for (double b : bits_field->numbers) {
    if (b != bits) fail(ErrorKind::UnsupportedFormat, "mixed BitsPerSample (tag 258)");
  }
  const Field* format_field = find(ifd, tag::kSampleFormat);
  const int sample_format =
      format_field && !format_field->numbers.empty() ? static_cast<int>(format_field->numbers[0]) : 1;
  if (sample_format == 1 && bits == 8) {
    L.type = SampleType::UInt8;
  } else if (sample_format == 1 && bits == 16) {
    L.type = SampleType::UInt16;
  } else if (sample_format == 3 && bits == 32) {
    L.type = SampleType::Float32;
  } else {
    fail(ErrorKind::UnsupportedFormat,
         fmt::format("unsupported sample type: SampleFormat (tag 339) = {}, BitsPerSample (tag "
                     "258) = {}",
                     sample_format, bits));
  }
  L.sample_bytes = static_cast<std::size_t>(bits) / 8;

  const auto planar_config = static_cast<int>(scalar_tag(ifd, tag::kPlanarConfig, 1.0, "PlanarConfiguration"));
  if (planar_config != 1 && planar_config != 2) {
    fail(ErrorKind::UnsupportedFormat,
         fmt::format("unsupported PlanarConfiguration (tag 284) = {}", planar_config));
  }
  L.planar = planar_config == 2 && L.samples > 1;

  std::vector<std::uint64_t> offsets, counts;
  L.tiled = find(ifd, tag::kTileWidth) != nullptr;
  if (L.tiled) {
    L.chunk_width = static_cast<Index>(scalar_tag(ifd, tag::kTileWidth, std::nullopt, "TileWidth"));
    L.chunk_height = static_cast<Index>(scalar_tag(ifd, tag::kTileLength, std::nullopt, "TileLength"));
    offsets = array_tag(ifd, tag::kTileOffsets, "TileOffsets");
    counts = array_tag(ifd, tag::kTileByteCounts, "TileByteCounts");
  } else {
    L.chunk_width = L.width;
    L.chunk_height = static_cast<Index>(
        std::min<double>(scalar_tag(ifd, tag::kRowsPerStrip, static_cast<double>(L.height), "RowsPerStrip"),
                         static_cast<double>(L.height)));
    offsets = array_tag(ifd, tag::kStripOffsets, "StripOffsets");
    counts = array_tag(ifd, tag::kStripByteCounts, "StripByteCounts");
  }
  if (L.chunk_width <= 0 || L.chunk_height <= 0) fail(ErrorKind::Parse, "zero chunk dimensions");

  const Index across = (L.width + L.chunk_width - 1) / L.chunk_width;
  const Index down = (L.height + L.chunk_height - 1) / L.chunk_height;
  const Index planes = L.planar ? L.samples : 1;
  const Index chunk_samples = L.planar ? 1 : L.samples;
  const std::size_t expected_chunks = static_cast<std::size_t>(across * down * planes);
  if (offsets.size() < expected_chunks || counts.size() < expected_chunks) {
    fail(ErrorKind::Parse, fmt::format("expected {} data chunks, found {}", expected_chunks,
                                       std::min(offsets.size(), counts.size())));
  }

  RasterGrid grid(L.width, L.height, L.samples);
  grid.set_geo(read_georeference(ifd));
  GeoTransform geo = grid.geo();
  grid.set_crs_id(read_geokeys(ifd, geo));
  grid.set_geo(geo);
  if (const Field* nd = find(ifd, tag::kGdalNodata); nd && !nd->text.empty()) {
    char* end = nullptr;
    const double v = std::strtod(nd->text.c_str(), &end);
    if (end == nd->text.c_str()) {
      fail(ErrorKind::Parse, fmt::format("unparseable GDAL_NODATA '{}'", nd->text));
    }
    grid.set_nodata(v);
  }

  const bool swap = big_endian != (std::endian::native == std::endian::big);
  for (Index plane = 0; plane < planes; ++plane) {
    for (Index cy = 0; cy < down; ++cy) {
      for (Index cx = 0; cx < across; ++cx) {
        const std::size_t k = static_cast<std::size_t>((plane * down + cy) * across + cx);
        const Index rows_here =
            L.tiled ? L.chunk_height : std::min(L.chunk_height, L.height - cy * L.chunk_height);
        const std::size_t expected = static_cast<std::size_t>(L.chunk_width * rows_here *
                                                              chunk_samples) * L.sample_bytes;
        auto raw = in.slice(offsets[k], counts[k], L.tiled ? "tile" : "strip");
        std::vector<std::uint8_t> inflated;
        const std::uint8_t* data;
        if (L.deflate) {
          inflated = inflate_chunk(raw, expected, offsets[k]);
          data = inflated.data();
        } else {
          if (raw.size() < expected) {
            fail(ErrorKind::Parse,
                 fmt::format("truncated {} at byte offset {}: {} of {} bytes",
                             L.tiled ? "tile" : "strip", offsets[k], raw.size(), expected));
          }
          data = raw.data();
        }
        for (Index r = 0; r < rows_here; ++r) {
          const Index row = cy * L.chunk_height + r;
          if (row >= L.height) break;
          for (Index c = 0; c < L.chunk_width; ++c) {
            const Index col = cx * L.chunk_width + c;
            if (col >= L.width) break;
            const std::uint8_t* px =
                data + static_cast<std::size_t>((r * L.chunk_width + c) * chunk_samples) * L.sample_bytes;
            if (L.planar) {
              grid(plane, row, col) = decode_sample(px, L.type, swap);
            } else {
              for (Index s = 0; s < L.samples; ++s) {
                grid(s, row, col) = decode_sample(px + s * L.sample_bytes, L.type, swap);
              }
            }
          }
        }
      }
    }
  }

  GeoTiffInfo info{L.type, L.tiled, L.planar, L.deflate, big_endian};
  return {std::move(grid), info};
}

GeoTiffImage read_geotiff_with_info(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_geotiff(bytes);
}

RasterGrid read_geotiff(const std::filesystem::path& path) {
  return read_geotiff_with_info(path).grid;
}

MultiSpectralImage read_multispectral(const std::filesystem::path& path) {
  auto image = read_geotiff_with_info(path);
  return to_multispectral(std::move(image.grid), sample_type_max(image.info.sample_type));
}

// ---------------------------------------------------------------------------
// Writer

namespace {

class ByteWriter {
 public:
  std::vector<std::uint8_t>& bytes() { return bytes_; }
  std::size_t size() const { return bytes_.size(); }

  template <typename T>
  void put(T v) {
    static_assert(std::endian::native == std::endian::little);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  template <typename T>
  void patch(std::size_t at, T v) {
    std::memcpy(bytes_.data() + at, &v, sizeof(T));
  }
  void append(std::span<const std::uint8_t> data) {
    bytes_.insert(bytes_.end(), data.begin(), data.end());
  }
  void align2() {
    if (bytes_.size() % 2) bytes_.push_back(0);
  }

 private:
  std::vector<std::uint8_t> bytes_;
};

struct OutField {
  std::uint16_t id;
  std::uint16_t type;
  std::vector<std::uint8_t> payload;
  std::uint32_t count;
};

template <typename T>
OutField make_field(std::uint16_t id, std::uint16_t type, const std::vector<T>& values) {
  OutField f{id, type, {}, static_cast<std::uint32_t>(values.size())};
  f.payload.resize(values.size() * sizeof(T));
  if (!values.empty()) std::memcpy(f.payload.data(), values.data(), f.payload.size());
  return f;
}

OutField make_ascii(std::uint16_t id, const std::string& text) {
  OutField f{id, kAscii, std::vector<std::uint8_t>(text.begin(), text.end()), 0};
  f.payload.push_back(0);
  f.count = static_cast<std::uint32_t>(f.payload.size());
  return f;
}

std::vector<std::uint8_t> deflate_chunk(const std::vector<std::uint8_t>& raw) {
  uLongf size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> out(size);
  if (compress2(out.data(), &size, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    fail(ErrorKind::Io, "Deflate compression failed");
  }
  out.resize(size);
  return out;
}

void encode_sample(std::vector<std::uint8_t>& out, float v, SampleType type) {
  switch (type) {
    case SampleType::UInt8: {
      const float c = std::isnan(v) ? 0.0f : std::clamp(std::round(v), 0.0f, 255.0f);
      out.push_back(static_cast<std::uint8_t>(c));
      break;
    }
    case SampleType::UInt16: {
      const float c = std::isnan(v) ? 0.0f : std::clamp(std::round(v), 0.0f, 65535.0f);
      const auto u = static_cast<std::uint16_t>(c);
      out.push_back(static_cast<std::uint8_t>(u & 0xff));
      out.push_back(static_cast<std::uint8_t>(u >> 8));
      break;
    }
    case SampleType::Float32: {
      std::uint8_t raw[4];
      std::memcpy(raw, &v, 4);
      out.insert(out.end(), raw, raw + 4);
      break;
    }
  }
}

std::string format_nodata(double v) {
  if (std::isnan(v)) return "nan";
  return fmt::format("{}", v);
}

}  // namespace

std::vector<std::uint8_t> encode_geotiff(const RasterGrid& grid, const GeoTiffWriteOptions& options) {
  grid.validate();
  require(!options.tiled || (options.tile_size > 0 && options.tile_size % 16 == 0),
          ErrorKind::Parameter, "tile size must be a positive multiple of 16");
  require(options.tiled || options.rows_per_strip > 0, ErrorKind::Parameter,
          "rows per strip must be positive");

  const Index width = grid.width(), height = grid.height(), bands = grid.bands();
  const bool planar = options.planar && bands > 1;
  Index chunk_w = width, chunk_h = std::min(options.rows_per_strip, height);
  if (options.tiled) {
    const Index needed = std::max(width, height);
    chunk_w = chunk_h = std::min(options.tile_size, (needed + 15) / 16 * 16);
  }
  const Index across = (width + chunk_w - 1) / chunk_w;
  const Index down = (height + chunk_h - 1) / chunk_h;
  const Index planes = planar ? bands : 1;
  const Index chunk_samples = planar ? 1 : bands;

  ByteWriter w;
  w.put<std::uint8_t>('I');
  w.put<std::uint8_t>('I');
  w.put<std::uint16_t>(42);
  const std::size_t ifd_pointer_at = w.size();
  w.put<std::uint32_t>(0);

  std::vector<std::uint32_t> offsets, counts;
  for (Index plane = 0; plane < planes; ++plane) {
    for (Index cy = 0; cy < down; ++cy) {
      for (Index cx = 0; cx < across; ++cx) {
        const Index rows_here = options.tiled ? chunk_h : std::min(chunk_h, height - cy * chunk_h);
        std::vector<std::uint8_t> raw;
        for (Index r = 0; r < rows_here; ++r) {
          for (Index c = 0; c < chunk_w; ++c) {
            const Index row = cy * chunk_h + r, col = cx * chunk_w + c;
            const bool inside = row < height && col < width;
            for (Index s = 0; s < chunk_samples; ++s) {
              const Index b = planar ? plane : s;
              encode_sample(raw, inside ? grid(b, row, col) : 0.0f, options.sample_type);
            }
          }
        }
        if (options.deflate) raw = deflate_chunk(raw);
        w.align2();
        offsets.push_back(static_cast<std::uint32_t>(w.size()));
        counts.push_back(static_cast<std::uint32_t>(raw.size()));
        w.append(raw);
      }
    }
  }

  const std::uint16_t bits = options.sample_type == SampleType::UInt8    ? 8
                             : options.sample_type == SampleType::UInt16 ? 16
                                                                          : 32;
  const std::uint16_t format = options.sample_type == SampleType::Float32 ? 3 : 1;
  const auto n = static_cast<std::size_t>(bands);

  std::vector<OutField> fields;
  fields.push_back(make_field<std::uint32_t>(tag::kImageWidth, kLong, {static_cast<std::uint32_t>(width)}));
  fields.push_back(make_field<std::uint32_t>(tag::kImageLength, kLong, {static_cast<std::uint32_t>(height)}));
  fields.push_back(make_field<std::uint16_t>(tag::kBitsPerSample, kShort, std::vector<std::uint16_t>(n, bits)));
  fields.push_back(make_field<std::uint16_t>(tag::kCompression, kShort, {static_cast<std::uint16_t>(options.deflate ? 8 : 1)}));
  fields.push_back(make_field<std::uint16_t>(tag::kPhotometric, kShort, {1}));
  if (!options.tiled) fields.push_back(make_field<std::uint32_t>(tag::kStripOffsets, kLong, offsets));
  fields.push_back(make_field<std::uint16_t>(tag::kSamplesPerPixel, kShort, {static_cast<std::uint16_t>(bands)}));
  if (!options.tiled) {
    fields.push_back(make_field<std::uint32_t>(tag::kRowsPerStrip, kLong, {static_cast<std::uint32_t>(chunk_h)}));
    fields.push_back(make_field<std::uint32_t>(tag::kStripByteCounts, kLong, counts));
  }
  fields.push_back(make_field<std::uint16_t>(tag::kPlanarConfig, kShort, {static_cast<std::uint16_t>(planar ? 2 : 1)}));
  if (options.tiled) {
    fields.push_back(make_field<std::uint32_t>(tag::kTileWidth, kLong, {static_cast<std::uint32_t>(chunk_w)}));
    fields.push_back(make_field<std::uint32_t>(tag::kTileLength, kLong, {static_cast<std::uint32_t>(chunk_h)}));
    fields.push_back(make_field<std::uint32_t>(tag::kTileOffsets, kLong, offsets));
    fields.push_back(make_field<std::uint32_t>(tag::kTileByteCounts, kLong, counts));
  }
  if (bands > 1) {
    fields.push_back(make_field<std::uint16_t>(tag::kExtraSamples, kShort, std::vector<std::uint16_t>(n - 1, 0)));
  }
  fields.push_back(make_field<std::uint16_t>(tag::kSampleFormat, kShort, std::vector<std::uint16_t>(n, format)));

  const GeoTransform& geo = grid.geo();
  fields.push_back(make_field<double>(tag::kModelPixelScale, kDouble, {geo.pixel_size_x, geo.pixel_size_y, 0.0}));
  fields.push_back(make_field<double>(tag::kModelTiepoint, kDouble, {0.0, 0.0, 0.0, geo.origin_x, geo.origin_y, 0.0}));
  std::vector<std::uint16_t> keys = {1, 1, 0, 0};
  const int crs = grid.crs_id();
  if (crs != 0) {
    const bool geographic = crs >= 4000 && crs < 5000;
    keys.insert(keys.end(), {kGeoKeyModelType, 0, 1, static_cast<std::uint16_t>(geographic ? 2 : 1)});
    keys.insert(keys.end(), {kGeoKeyRasterType, 0, 1, 1});
    keys.insert(keys.end(), {geographic ? kGeoKeyGeographicType : kGeoKeyProjectedType, 0, 1,
                             static_cast<std::uint16_t>(crs)});
  } else {
    keys.insert(keys.end(), {kGeoKeyRasterType, 0, 1, 1});
  }
  keys[3] = static_cast<std::uint16_t>((keys.size() - 4) / 4);
  fields.push_back(make_field<std::uint16_t>(tag::kGeoKeyDirectory, kShort, keys));
  if (grid.nodata()) fields.push_back(make_ascii(tag::kGdalNodata, format_nodata(*grid.nodata())));

  std::sort(fields.begin(), fields.end(), [](const OutField& a, const OutField& b) { return a.id < b.id; });

  // Out-of-line payloads go before the IFD.
  std::vector<std::uint32_t> payload_offsets(fields.size(), 0);
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i].payload.size() > 4) {
      w.align2();
      payload_offsets[i] = static_cast<std::uint32_t>(w.size());
      w.append(fields[i].payload);
    }
  }
  w.align2();
  w.patch<std::uint32_t>(ifd_pointer_at, static_cast<std::uint32_t>(w.size()));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(fields.size()));
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const auto& f = fields[i];
    w.put<std::uint16_t>(f.id);
    w.put<std::uint16_t>(f.type);
    w.put<std::uint32_t>(f.count);
    if (f.payload.size() > 4) {
      w.put<std::uint32_t>(payload_offsets[i]);
    } else {
      std::uint8_t inline_value[4] = {0, 0, 0, 0};
      std::memcpy(inline_value, f.payload.data(), f.payload.size());
      w.append(inline_value);
    }
  }
  w.put<std::uint32_t>(0);
  if (w.size() > 0xffffffffull) fail(ErrorKind::Parameter, "raster too large for classic TIFF");
  return std::move(w.bytes());
}

void write_geotiff(const RasterGrid& grid, const std::filesystem::path& path,
                   const GeoTiffWriteOptions& options) {
  const auto bytes = encode_geotiff(grid, options);
  write_file_bytes(path, bytes);
}

// ---------------------------------------------------------------------------
// CGRD

std::vector<std::uint8_t> encode_cgrd(const RasterGrid& grid) {
  grid.validate();
  static_assert(std::endian::native == std::endian::little);
  std::vector<std::uint8_t> out;
  out.reserve(24 + static_cast<std::size_t>(grid.values().size()) * 4);
  const auto put = [&out](const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  };
  put("CGRD", 4);
  const std::uint32_t dims[3] = {static_cast<std::uint32_t>(grid.width()),
                                 static_cast<std::uint32_t>(grid.height()),
                                 static_cast<std::uint32_t>(grid.bands())};
  put(dims, sizeof dims);
  const double pixel = grid.geo().pixel_size_x;
  put(&pixel, 8);
  put(grid.values().data(), static_cast<std::size_t>(grid.values().size()) * 4);
  return out;
}

RasterGrid decode_cgrd(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 24) fail(ErrorKind::Parse, "truncated CGRD header at byte offset 0");
  if (std::memcmp(bytes.data(), "CGRD", 4) != 0) fail(ErrorKind::UnsupportedFormat, "bad CGRD magic");
  std::uint32_t dims[3];
  std::memcpy(dims, bytes.data() + 4, sizeof dims);
  double pixel;
  std::memcpy(&pixel, bytes.data() + 16, 8);
  const std::uint64_t n = static_cast<std::uint64_t>(dims[0]) * dims[1] * dims[2];
  if (bytes.size() - 24 != n * 4) {
    fail(ErrorKind::Parse, fmt::format("CGRD payload at byte offset 24 has {} bytes, expected {}",
                                       bytes.size() - 24, n * 4));
  }
  RasterGrid grid(dims[0], dims[1], dims[2], GeoTransform{0.0, 0.0, pixel, pixel});
  if (n) std::memcpy(grid.values().data(), bytes.data() + 24, n * 4);
  grid.validate();
  return grid;
}

void write_cgrd(const RasterGrid& grid, const std::filesystem::path& path) {
  write_file_bytes(path, encode_cgrd(grid));
}

RasterGrid read_cgrd(const std::filesystem::path& path) { return decode_cgrd(read_file_bytes(path)); }

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace treecarbon
