#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "support.hpp"
#include "treecarbon/geotiff.hpp"
#include "treecarbon/lidar.hpp"

using namespace treecarbon;

namespace {

LidarPoint pt(double x, double y, double z, std::uint8_t cls = 1, std::uint8_t ret = 1,
              std::uint8_t nret = 1) {
  return {Eigen::Vector3d(x, y, z), ret, nret, cls};
}

std::vector<Eigen::Vector2d> square(double x0, double y0, double x1, double y1) {
  return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
}

template <typename T>
void poke(std::vector<std::uint8_t>& bytes, std::size_t at, T v) {
  std::memcpy(bytes.data() + at, &v, sizeof(T));
}

}  // namespace

TEST_SUITE("las") {
  TEST_CASE("three points: exact file size and round-trip within one quantization step") {
    const std::vector<LidarPoint> pts = {pt(583001.2345, 4507002.5, 12.3456, 5, 1, 2),
                                         pt(583003.0001, 4507001.25, 0.0004, 2, 2, 2),
                                         pt(583000.5, 4507000.125, 7.7777, 1, 1, 1)};
    const auto cloud = make_point_cloud(pts);
    const auto bytes = encode_las(cloud);
    CHECK(bytes.size() == 227 + 3 * 20);
    const auto back = decode_las(bytes);
    REQUIRE(back.size() == 3);
    for (Index i = 0; i < 3; ++i) {
      CHECK(((back.xyz.col(i) - cloud.xyz.col(i)).array().abs() <= 0.001).all());
      CHECK(back.classification[static_cast<std::size_t>(i)] == cloud.classification[static_cast<std::size_t>(i)]);
      CHECK(back.return_number[static_cast<std::size_t>(i)] == cloud.return_number[static_cast<std::size_t>(i)]);
      CHECK(back.number_of_returns[static_cast<std::size_t>(i)] == cloud.number_of_returns[static_cast<std::size_t>(i)]);
    }
  }

  TEST_CASE("empty point cloud round-trips to zero points") {
    const auto dir = testing::temp_dir("las_empty");
    const auto cloud = make_point_cloud(std::vector<LidarPoint>{});
    write_las(cloud, dir / "empty.las");
    CHECK(read_las(dir / "empty.las").size() == 0);
  }

  TEST_CASE("round-trip property over random clouds") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> coord(-5000.0, 5000.0);
    std::uniform_int_distribution<int> cls(0, 31), ret(1, 7), count(0, 300);
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<LidarPoint> pts;
      const int n = count(rng);
      for (int i = 0; i < n; ++i) {
        pts.push_back(pt(coord(rng), coord(rng), coord(rng) / 10, static_cast<std::uint8_t>(cls(rng)),
                         static_cast<std::uint8_t>(ret(rng)), static_cast<std::uint8_t>(ret(rng))));
      }
      const auto cloud = make_point_cloud(pts, trial % 2 ? 0.01 : 0.001);
      const auto back = decode_las(encode_las(cloud));
      REQUIRE(back.size() == cloud.size());
      for (Index i = 0; i < cloud.size(); ++i) {
        CHECK(((back.xyz.col(i) - cloud.xyz.col(i)).array().abs() <= cloud.scale.array()).all());
      }
      CHECK(back.classification == cloud.classification);
      CHECK(back.return_number == cloud.return_number);
    }
  }

  TEST_CASE("point format 6 is rejected by name") {
    auto bytes = encode_las(make_point_cloud(std::vector<LidarPoint>{pt(1, 2, 3)}));
    bytes[104] = 6;
    try {
      decode_las(bytes);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::UnsupportedFormat);
      CHECK(std::string(e.what()).find("format 6") != std::string::npos);
    }
  }

  TEST_CASE("LAZ-compressed data is rejected") {
    auto bytes = encode_las(make_point_cloud(std::vector<LidarPoint>{pt(1, 2, 3)}));
    bytes[104] = 0x80;
    CHECK_ERROR_KIND(decode_las(bytes), ErrorKind::UnsupportedFormat);
  }

  TEST_CASE("malformed inputs fail with typed errors") {
    const auto good = encode_las(make_point_cloud(std::vector<LidarPoint>{pt(1, 2, 3), pt(4, 5, 6)}));
    auto more = good;
    poke<std::uint32_t>(more, 107, 3);
    CHECK_ERROR_KIND(decode_las(more), ErrorKind::Parse);
    auto bad_sig = good;
    bad_sig[0] = 'X';
    CHECK_ERROR_KIND(decode_las(bad_sig), ErrorKind::UnsupportedFormat);
    auto old = good;
    old[25] = 0;
    CHECK_ERROR_KIND(decode_las(old), ErrorKind::UnsupportedFormat);
    for (std::size_t n = 0; n < good.size(); n += 5) {
      std::vector<std::uint8_t> prefix(good.begin(), good.begin() + static_cast<long>(n));
      bool threw = false;
      try {
        decode_las(prefix);
      } catch (const Error&) {
        threw = true;
      }
      CHECK(threw);
    }
  }

  TEST_CASE("LAS 1.4 header with 64-bit count and format 1 records") {
    std::vector<std::uint8_t> bytes(375, 0);
    std::memcpy(bytes.data(), "LASF", 4);
    bytes[24] = 1;
    bytes[25] = 4;
    poke<std::uint16_t>(bytes, 94, 375);
    poke<std::uint32_t>(bytes, 96, 375);
    bytes[104] = 1;
    poke<std::uint16_t>(bytes, 105, 28);
    poke<std::uint32_t>(bytes, 107, 0);
    for (int k = 0; k < 3; ++k) {
      poke<double>(bytes, 131 + 8 * static_cast<std::size_t>(k), 0.01);
      poke<double>(bytes, 155 + 8 * static_cast<std::size_t>(k), 100.0);
    }
    poke<std::uint64_t>(bytes, 247, 2);
    for (int i = 0; i < 2; ++i) {
      std::vector<std::uint8_t> rec(28, 0);
      poke<std::int32_t>(rec, 0, 150 + i);
      poke<std::int32_t>(rec, 4, -20);
      poke<std::int32_t>(rec, 8, 1234);
      rec[14] = static_cast<std::uint8_t>(1 | (2 << 3));
      rec[15] = 2;
      bytes.insert(bytes.end(), rec.begin(), rec.end());
    }
    const auto cloud = decode_las(bytes);
    REQUIRE(cloud.size() == 2);
    CHECK(cloud.xyz(0, 1) == doctest::Approx(101.51));
    CHECK(cloud.xyz(1, 0) == doctest::Approx(99.8));
    CHECK(cloud.xyz(2, 0) == doctest::Approx(112.34));
    CHECK(cloud.classification[0] == 2);
    CHECK(cloud.number_of_returns[1] == 2);
  }

  TEST_CASE("unrepresentable coordinate is a quantization overflow") {
    auto cloud = make_point_cloud(std::vector<LidarPoint>{pt(0, 0, 0), pt(1, 1, 1)});
    cloud.xyz(0, 1) = 1e8;  // 1e11 quanta at scale 0.001
    CHECK_ERROR_KIND(encode_las(cloud), ErrorKind::QuantizationOverflow);
  }
}

TEST_SUITE("rasterize") {
  TEST_CASE("distinct cells keep their own z; shared cell reduces") {
    GridSpec spec{GeoTransform{0, 2, 1, 1}, 2, 2};
    const auto cloud = make_point_cloud(std::vector<LidarPoint>{
        pt(0.5, 1.5, 1), pt(1.5, 1.5, 2), pt(0.5, 0.5, 3), pt(1.5, 0.5, 4)});
    const auto g = rasterize_surface(cloud, nullptr, spec, Reducer::Max);
    CHECK(g.at(0, 0) == 1.0f);
    CHECK(g.at(0, 1) == 2.0f);
    CHECK(g.at(1, 0) == 3.0f);
    CHECK(g.at(1, 1) == 4.0f);

    const auto two = make_point_cloud(std::vector<LidarPoint>{pt(0.2, 0.2, 3), pt(0.7, 0.6, 5)});
    GridSpec one{GeoTransform{0, 1, 1, 1}, 1, 1};
    CHECK(rasterize_surface(two, nullptr, one, Reducer::Max).at(0, 0) == 5.0f);
    CHECK(rasterize_surface(two, nullptr, one, Reducer::Mean).at(0, 0) == 4.0f);
    CHECK(rasterize_surface(two, nullptr, one, Reducer::Min).at(0, 0) == 3.0f);
  }

  TEST_CASE("bounding-box grid includes points on the far edges") {
    const auto cloud = make_point_cloud(std::vector<LidarPoint>{pt(0, 0, 1), pt(3, 2, 9)});
    const auto g = rasterize_surface(cloud, nullptr, 1.0, Reducer::Max);
    CHECK(g.width() == 3);
    CHECK(g.height() == 2);
    CHECK(g.at(0, 2) == 9.0f);
    CHECK(g.at(1, 0) == 1.0f);
    CHECK(std::isnan(g.at(0, 0)));
  }

  TEST_CASE("parameter and selection errors") {
    const auto cloud = make_point_cloud(std::vector<LidarPoint>{pt(0, 0, 1), pt(3, 2, 9)});
    CHECK_ERROR_KIND(rasterize_surface(cloud, nullptr, 0.0, Reducer::Max), ErrorKind::Parameter);
    CHECK_ERROR_KIND(rasterize_surface(cloud, is_ground, 1.0, Reducer::Max), ErrorKind::EmptySelection);
  }

  TEST_CASE("max reducer is permutation invariant") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 20.0);
    std::vector<LidarPoint> pts;
    for (int i = 0; i < 500; ++i) pts.push_back(pt(u(rng), u(rng), u(rng)));
    const auto a = rasterize_surface(make_point_cloud(pts), nullptr, 1.5, Reducer::Max);
    std::shuffle(pts.begin(), pts.end(), rng);
    const auto b = rasterize_surface(make_point_cloud(pts), nullptr, 1.5, Reducer::Max);
    CHECK(bit_equal(a, b));
  }

  TEST_CASE("nearest fill matches a brute-force search") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 25; ++trial) {
      const Index w = std::uniform_int_distribution<int>(1, 30)(rng);
      const Index h = std::uniform_int_distribution<int>(1, 30)(rng);
      RasterGrid g(w, h, 1, GeoTransform{}, 0, std::numeric_limits<double>::quiet_NaN(),
                   std::numeric_limits<float>::quiet_NaN());
      std::bernoulli_distribution keep(trial % 2 ? 0.05 : 0.4);
      g.at(std::uniform_int_distribution<int>(0, static_cast<int>(h - 1))(rng),
           std::uniform_int_distribution<int>(0, static_cast<int>(w - 1))(rng)) = 0.0f;
      for (Index k = 0; k < w * h; ++k) {
        if (keep(rng)) g.values().data()[k] = static_cast<float>(k);
      }
      for (Index k = 0; k < w * h; ++k) {
        if (!std::isnan(g.values().data()[k])) g.values().data()[k] = static_cast<float>(k);
      }
      const auto filled = fill_nearest(g);
      for (Index r = 0; r < h; ++r) {
        for (Index c = 0; c < w; ++c) {
          double best = std::numeric_limits<double>::infinity();
          for (Index rr = 0; rr < h; ++rr) {
            for (Index cc = 0; cc < w; ++cc) {
              if (std::isnan(g.at(rr, cc))) continue;
              best = std::min(best, double((r - rr) * (r - rr) + (c - cc) * (c - cc)));
            }
          }
          // Values encode the source index, so recover the chosen source.
          const auto src = static_cast<Index>(filled.at(r, c));
          const Index sr = src / w, sc = src % w;
          REQUIRE_FALSE(std::isnan(g.at(sr, sc)));
          CHECK(double((r - sr) * (r - sr) + (c - sc) * (c - sc)) == best);
        }
      }
    }
  }
}

TEST_SUITE("chm") {
  // Ground returns on a 0.25 m lattice; canopy first returns over x < half.
  PointCloud flat_scene(double ground_z, double canopy_z, double extent, double canopy_until) {
    std::vector<LidarPoint> pts;
    for (double y = 0.125; y < extent; y += 0.25) {
      for (double x = 0.125; x < extent; x += 0.25) {
        if (x < canopy_until) {
          pts.push_back(pt(x, y, canopy_z, 5, 1, 2));
          pts.push_back(pt(x, y, ground_z, kClassGround, 2, 2));
        } else {
          pts.push_back(pt(x, y, ground_z, kClassGround, 1, 1));
        }
      }
    }
    return make_point_cloud(pts);
  }

  TEST_CASE("flat ground with canopy over half the area") {
    const auto cloud = flat_scene(0.0, 10.0, 6.0, 3.0);
    const GridSpec spec{GeoTransform{0, 6, 0.5, 0.5}, 12, 12};
    const auto chm = build_chm(cloud, spec);
    for (Index r = 0; r < 12; ++r) {
      for (Index c = 0; c < 12; ++c) CHECK(chm.at(r, c) == (c < 6 ? 10.0f : 0.0f));
    }
  }

  TEST_CASE("raised ground subtracts exactly") {
    const auto cloud = flat_scene(5.0, 12.0, 4.0, 4.0);
    const auto chm = build_chm(cloud, GridSpec{GeoTransform{0, 4, 0.5, 0.5}, 8, 8});
    CHECK((chm.values() == 7.0f).all());
  }

  TEST_CASE("negative canopy height clamps to zero") {
    // Ground at 6 in the left cell only; a lone first return at 4 in the right cell.
    const auto cloud = make_point_cloud(std::vector<LidarPoint>{
        pt(0.5, 0.5, 6.0, kClassGround, 1, 1), pt(1.5, 0.5, 4.0, 1, 1, 1)});
    const auto chm = build_chm(cloud, GridSpec{GeoTransform{0, 1, 1, 1}, 2, 1});
    CHECK(chm.at(0, 0) == 0.0f);
    CHECK(chm.at(0, 1) == 0.0f);
    CHECK((chm.values() >= 0.0f).all());
  }

  TEST_CASE("cells without first returns are nodata; no ground is an error") {
    const auto cloud = make_point_cloud(std::vector<LidarPoint>{
        pt(0.5, 0.5, 0.0, kClassGround, 1, 1), pt(2.5, 0.5, 3.0, kClassGround, 2, 2)});
    const auto chm = build_chm(cloud, GridSpec{GeoTransform{0, 1, 1, 1}, 3, 1});
    CHECK(chm.at(0, 0) == 0.0f);
    CHECK(std::isnan(chm.at(0, 1)));
    CHECK(std::isnan(chm.at(0, 2)));
    const auto no_ground = make_point_cloud(std::vector<LidarPoint>{pt(0.5, 0.5, 1.0)});
    CHECK_ERROR_KIND(build_chm(no_ground, 1.0), ErrorKind::NoGroundSurface);
  }

  TEST_CASE("mean height sampling") {
    RasterGrid chm(4, 4, 1, GeoTransform{0, 4, 1, 1}, 0, std::numeric_limits<double>::quiet_NaN(), 7.0f);
    CHECK(sample_mean_height(chm, square(0, 0, 4, 4), 5) == 7.0);
    chm.values().setConstant(std::numeric_limits<float>::quiet_NaN());
    chm.at(1, 1) = 4.0f;
    chm.at(1, 2) = 10.0f;
    CHECK(sample_mean_height(chm, square(0, 0, 4, 4), 2) == 7.0);
    CHECK_ERROR_KIND(sample_mean_height(chm, square(0, 0, 4, 4), 5), ErrorKind::InsufficientCoverage);
    CHECK_ERROR_KIND(sample_mean_height(chm, square(3, 0, 4, 1), 1), ErrorKind::InsufficientCoverage);
  }
}
