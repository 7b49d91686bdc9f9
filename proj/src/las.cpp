#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include <fmt/format.h>

#include "treecarbon/geotiff.hpp"
#include "treecarbon/lidar.hpp"

namespace treecarbon {
namespace {

static_assert(std::endian::native == std::endian::little, "LAS codec assumes a little-endian host");

constexpr std::size_t kHeaderSize12 = 227;
constexpr std::size_t kPdrf0Length = 20;

std::size_t base_record_length(int format) {
  switch (format) {
    case 0: return 20;
    case 1: return 28;
    case 2: return 26;
    case 3: return 34;
    default: return 0;
  }
}

template <typename T>
T get(std::span<const std::uint8_t> bytes, std::size_t at) {
  if (at + sizeof(T) > bytes.size()) {
    fail(ErrorKind::Parse, fmt::format("truncated LAS file at byte offset {}", at));
  }
  T v;
  std::memcpy(&v, bytes.data() + at, sizeof(T));
  return v;
}

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

}  // namespace

void PointCloud::validate() const {
  const auto n = static_cast<std::size_t>(xyz.cols());
  require(return_number.size() == n && number_of_returns.size() == n && classification.size() == n,
          ErrorKind::Invariant, "point attribute arrays do not match the point count");
  require(xyz.allFinite(), ErrorKind::Invariant, "point coordinates must be finite");
  require((scale.array() > 0).all() && scale.allFinite() && offset.allFinite(),
          ErrorKind::Invariant, "LAS scale must be positive and finite");
}

PointCloud make_point_cloud(std::span<const LidarPoint> points, double scale) {
  PointCloud cloud;
  const auto n = static_cast<Index>(points.size());
  cloud.xyz.resize(3, n);
  cloud.return_number.reserve(points.size());
  cloud.number_of_returns.reserve(points.size());
  cloud.classification.reserve(points.size());
  for (Index i = 0; i < n; ++i) {
    const auto& p = points[static_cast<std::size_t>(i)];
    cloud.xyz.col(i) = p.position;
    cloud.return_number.push_back(p.return_number);
    cloud.number_of_returns.push_back(p.number_of_returns);
    cloud.classification.push_back(p.classification);
  }
  cloud.scale = Eigen::Vector3d::Constant(scale);
  if (n > 0) cloud.offset = cloud.min_corner().array().floor();
  cloud.validate();
  return cloud;
}

PointCloud decode_las(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "LASF", 4) != 0) {
    fail(ErrorKind::UnsupportedFormat, "not a LAS file (missing LASF signature)");
  }
  if (bytes.size() < kHeaderSize12) {
    fail(ErrorKind::Parse, fmt::format("truncated LAS header: {} of {} bytes", bytes.size(), kHeaderSize12));
  }
  const int major = get<std::uint8_t>(bytes, 24);
  const int minor = get<std::uint8_t>(bytes, 25);
  if (major != 1 || minor < 2 || minor > 4) {
    fail(ErrorKind::UnsupportedFormat, fmt::format("unsupported LAS version {}.{}", major, minor));
  }
  const std::size_t header_size = get<std::uint16_t>(bytes, 94);
  const std::size_t point_offset = get<std::uint32_t>(bytes, 96);
  const std::uint8_t format_byte = get<std::uint8_t>(bytes, 104);
  const std::size_t record_length = get<std::uint16_t>(bytes, 105);
  if (format_byte & 0xC0) {
    fail(ErrorKind::UnsupportedFormat,
         fmt::format("LAZ-compressed point data (format byte {}) is not supported", format_byte));
  }
  const int format = format_byte;
  if (format > 3) {
    fail(ErrorKind::UnsupportedFormat,
         fmt::format("unsupported point data record format {}", format));
  }
  if (record_length < base_record_length(format)) {
    fail(ErrorKind::Parse, fmt::format("point record length {} too short for format {}",
                                       record_length, format));
  }
  if (header_size < kHeaderSize12 || point_offset < header_size) {
    fail(ErrorKind::Parse, fmt::format("inconsistent header size {} / point offset {}",
                                       header_size, point_offset));
  }
  std::uint64_t count = get<std::uint32_t>(bytes, 107);
  if (minor == 4 && count == 0 && header_size >= 375) count = get<std::uint64_t>(bytes, 247);

  const std::uint64_t needed = point_offset + count * record_length;
  if (needed > bytes.size()) {
    fail(ErrorKind::Parse,
         fmt::format("header declares {} points ({} bytes from offset {}) but file has {} bytes",
                     count, count * record_length, point_offset, bytes.size()));
  }

  PointCloud cloud;
  for (int k = 0; k < 3; ++k) {
    cloud.scale[k] = get<double>(bytes, 131 + 8 * static_cast<std::size_t>(k));
    cloud.offset[k] = get<double>(bytes, 155 + 8 * static_cast<std::size_t>(k));
  }
  if (!((cloud.scale.array() > 0).all() && cloud.scale.allFinite() && cloud.offset.allFinite())) {
    fail(ErrorKind::Parse, "invalid LAS scale/offset");
  }
  const auto n = static_cast<Index>(count);
  cloud.xyz.resize(3, n);
  cloud.return_number.resize(count);
  cloud.number_of_returns.resize(count);
  cloud.classification.resize(count);
  for (Index i = 0; i < n; ++i) {
    const std::size_t at = point_offset + static_cast<std::size_t>(i) * record_length;
    for (int k = 0; k < 3; ++k) {
      const auto q = get<std::int32_t>(bytes, at + 4 * static_cast<std::size_t>(k));
      cloud.xyz(k, i) = q * cloud.scale[k] + cloud.offset[k];
    }
    const std::uint8_t flags = get<std::uint8_t>(bytes, at + 14);
    const auto idx = static_cast<std::size_t>(i);
    cloud.return_number[idx] = flags & 0x07;
    cloud.number_of_returns[idx] = (flags >> 3) & 0x07;
    cloud.classification[idx] = get<std::uint8_t>(bytes, at + 15) & 0x1F;
  }
  cloud.validate();
  return cloud;
}

PointCloud read_las(const std::filesystem::path& path) { return decode_las(read_file_bytes(path)); }

std::vector<std::uint8_t> encode_las(const PointCloud& cloud) {
  cloud.validate();
  const Index n = cloud.size();
  require(static_cast<std::uint64_t>(n) <= std::numeric_limits<std::uint32_t>::max(),
          ErrorKind::Parameter, "too many points for LAS 1.2");

  Eigen::Matrix<std::int32_t, 3, Eigen::Dynamic> quantized(3, n);
  for (Index i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) {
      const double q = std::round((cloud.xyz(k, i) - cloud.offset[k]) / cloud.scale[k]);
      if (!(q >= std::numeric_limits<std::int32_t>::min() && q <= std::numeric_limits<std::int32_t>::max())) {
        fail(ErrorKind::QuantizationOverflow,
             fmt::format("point {} coordinate {} = {} not representable with scale {} offset {}", i,
                         "xyz"[k], cloud.xyz(k, i), cloud.scale[k], cloud.offset[k]));
      }
      quantized(k, i) = static_cast<std::int32_t>(q);
    }
  }

  std::vector<std::uint8_t> out;
  out.reserve(kHeaderSize12 + static_cast<std::size_t>(n) * kPdrf0Length);
  out.insert(out.end(), {'L', 'A', 'S', 'F'});
  put<std::uint16_t>(out, 0);  // file source id
  put<std::uint16_t>(out, 0);  // global encoding
  out.insert(out.end(), 16, 0);  // project GUID
  put<std::uint8_t>(out, 1);
  put<std::uint8_t>(out, 2);
  std::string system = "treecarbon";
  system.resize(32, '\0');
  out.insert(out.end(), system.begin(), system.end());
  std::string software = "treecarbon write_las";
  software.resize(32, '\0');
  out.insert(out.end(), software.begin(), software.end());
  put<std::uint16_t>(out, 1);     // creation day of year
  put<std::uint16_t>(out, 2020);  // creation year
  put<std::uint16_t>(out, static_cast<std::uint16_t>(kHeaderSize12));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(kHeaderSize12));
  put<std::uint32_t>(out, 0);  // VLR count
  put<std::uint8_t>(out, 0);
  put<std::uint16_t>(out, static_cast<std::uint16_t>(kPdrf0Length));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(n));
  std::uint32_t by_return[5] = {0, 0, 0, 0, 0};
  for (auto r : cloud.return_number) {
    if (r >= 1 && r <= 5) ++by_return[r - 1];
  }
  for (auto c : by_return) put<std::uint32_t>(out, c);
  for (int k = 0; k < 3; ++k) put<double>(out, cloud.scale[k]);
  for (int k = 0; k < 3; ++k) put<double>(out, cloud.offset[k]);
  const Eigen::Vector3d lo = n ? cloud.min_corner() : Eigen::Vector3d::Zero();
  const Eigen::Vector3d hi = n ? cloud.max_corner() : Eigen::Vector3d::Zero();
  for (int k = 0; k < 3; ++k) {
    put<double>(out, hi[k]);
    put<double>(out, lo[k]);
  }

  for (Index i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    for (int k = 0; k < 3; ++k) put<std::int32_t>(out, quantized(k, i));
    put<std::uint16_t>(out, 0);  // intensity
    const std::uint8_t flags = static_cast<std::uint8_t>((cloud.return_number[idx] & 0x07) |
                                                         ((cloud.number_of_returns[idx] & 0x07) << 3));
    put<std::uint8_t>(out, flags);
    put<std::uint8_t>(out, cloud.classification[idx] & 0x1F);
    put<std::int8_t>(out, 0);    // scan angle rank
    put<std::uint8_t>(out, 0);   // user data
    put<std::uint16_t>(out, 0);  // point source id
  }
  return out;
}

void write_las(const PointCloud& cloud, const std::filesystem::path& path) {
  const auto bytes = encode_las(cloud);
  write_file_bytes(path, bytes);
}

}  // namespace treecarbon
