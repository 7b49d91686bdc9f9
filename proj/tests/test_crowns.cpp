#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numbers>

#include "support.hpp"
#include "treecarbon/crowns.hpp"
#include "treecarbon/random.hpp"

using namespace treecarbon;

namespace {

const GeoTransform kGeo{1000.0, 2000.0, 0.6, 0.6};

RasterGrid bumps(Index w, Index h, const std::vector<Eigen::Vector3d>& peaks, double sigma = 3.0) {
  RasterGrid g(w, h, 1, kGeo);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      double v = 0;
      for (const auto& p : peaks) {
        const double dr = r - p.y(), dc = c - p.x();
        v = std::max(v, p.z() * std::exp(-(dr * dr + dc * dc) / (2 * sigma * sigma)));
      }
      g.at(r, c) = static_cast<float>(v);
    }
  }
  return g;
}

TreeMask full_mask(Index w, Index h, std::uint8_t v = 1) { return TreeMask(w, h, 1, kGeo, 0, std::nullopt, v); }

// Reference flood: linear scan of the frontier for the highest value, ties to
// the earliest insertion.
SegmentLabels oracle_flood(const RasterGrid& z, const std::vector<Marker>& markers, const TreeMask& mask) {
  const Index w = z.width(), h = z.height();
  SegmentLabels out(w, h, 1, z.geo());
  struct Item {
    double v;
    long seq;
    Index r, c;
    int label;
  };
  std::vector<Item> frontier;
  long seq = 0;
  auto value = [&](Index r, Index c) {
    const float v = z.at(r, c);
    return std::isnan(v) ? -std::numeric_limits<double>::infinity() : static_cast<double>(v);
  };
  auto push = [&](Index r, Index c, int label) {
    const Index nb[4][2] = {{r - 1, c}, {r, c - 1}, {r, c + 1}, {r + 1, c}};
    for (const auto& n : nb) {
      if (n[0] < 0 || n[1] < 0 || n[0] >= h || n[1] >= w) continue;
      if (mask.at(n[0], n[1]) && out.at(n[0], n[1]) == 0) frontier.push_back({value(n[0], n[1]), seq++, n[0], n[1], label});
    }
  };
  for (std::size_t i = 0; i < markers.size(); ++i) out.at(markers[i].row, markers[i].col) = static_cast<int>(i + 1);
  for (std::size_t i = 0; i < markers.size(); ++i) push(markers[i].row, markers[i].col, static_cast<int>(i + 1));
  while (!frontier.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < frontier.size(); ++i) {
      if (frontier[i].v > frontier[best].v || (frontier[i].v == frontier[best].v && frontier[i].seq < frontier[best].seq)) best = i;
    }
    const Item it = frontier[best];
    frontier.erase(frontier.begin() + static_cast<long>(best));
    if (out.at(it.r, it.c) != 0) continue;
    out.at(it.r, it.c) = it.label;
    push(it.r, it.c, it.label);
  }
  int next = static_cast<int>(markers.size());
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      if (!mask.at(r, c) || out.at(r, c) != 0) continue;
      ++next;
      std::deque<std::pair<Index, Index>> q{{r, c}};
      out.at(r, c) = next;
      while (!q.empty()) {
        auto [pr, pc] = q.front();
        q.pop_front();
        const Index nb[4][2] = {{pr - 1, pc}, {pr, pc - 1}, {pr, pc + 1}, {pr + 1, pc}};
        for (const auto& n : nb) {
          if (n[0] < 0 || n[1] < 0 || n[0] >= h || n[1] >= w) continue;
          if (mask.at(n[0], n[1]) && out.at(n[0], n[1]) == 0) {
            out.at(n[0], n[1]) = next;
            q.emplace_back(n[0], n[1]);
          }
        }
      }
    }
  }
  return out;
}

double shoelace(const std::vector<Eigen::Vector2d>& ring) {
  double a = 0;
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) a += ring[i].x() * ring[i + 1].y() - ring[i + 1].x() * ring[i].y();
  return a / 2;
}

// Pixels of `id` plus every enclosed pixel: the complement of the background
// reachable (8-connected) from outside the grid.
std::vector<Index> filled_region(const SegmentLabels& labels, int id) {
  const Index w = labels.width() + 2, h = labels.height() + 2;
  std::vector<char> outside(static_cast<std::size_t>(w * h), 0);
  auto in_region = [&](Index r, Index c) {
    return r >= 1 && c >= 1 && r < h - 1 && c < w - 1 && labels.at(r - 1, c - 1) == id;
  };
  std::deque<std::pair<Index, Index>> q{{0, 0}};
  outside[0] = 1;
  while (!q.empty()) {
    auto [r, c] = q.front();
    q.pop_front();
    for (Index dr = -1; dr <= 1; ++dr) {
      for (Index dc = -1; dc <= 1; ++dc) {
        const Index nr = r + dr, nc = c + dc;
        if (nr < 0 || nc < 0 || nr >= h || nc >= w || outside[static_cast<std::size_t>(nr * w + nc)] || in_region(nr, nc)) continue;
        outside[static_cast<std::size_t>(nr * w + nc)] = 1;
        q.emplace_back(nr, nc);
      }
    }
  }
  std::vector<Index> out;
  for (Index r = 1; r < h - 1; ++r) {
    for (Index c = 1; c < w - 1; ++c) {
      if (!outside[static_cast<std::size_t>(r * w + c)]) out.push_back((r - 1) * labels.width() + c - 1);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("markers: single bump, separated bumps, tied peaks and height floor") {
  const TreeMask mask = full_mask(30, 30);
  auto one = find_markers(bumps(30, 30, {{12, 15, 5}}), mask, 5, 0);
  REQUIRE(one.size() == 1);
  CHECK(one[0].row == 15);
  CHECK(one[0].col == 12);

  CHECK(find_markers(bumps(30, 30, {{5, 5, 5}, {24, 24, 4}}), mask, 5, 0).size() == 2);

  RasterGrid tied(30, 30, 1, kGeo);
  tied.at(10, 12) = 3;
  tied.at(12, 10) = 3;
  const auto t = find_markers(tied, mask, 5, 0.5);
  REQUIRE(t.size() == 1);
  CHECK(t[0].row == 10);
  CHECK(t[0].col == 12);

  CHECK(find_markers(bumps(30, 30, {{5, 5, 5}, {24, 24, 1}}), mask, 5, 2).size() == 1);
  CHECK_ERROR_KIND(find_markers(RasterGrid(10, 10, 1, kGeo), mask, 5, 0), ErrorKind::Parameter);
  CHECK_ERROR_KIND(find_markers(RasterGrid(30, 30, 2, kGeo), mask, 5, 0), ErrorKind::Parameter);
}

TEST_CASE("a flat plateau yields one marker near its centre") {
  RasterGrid z(20, 20, 1, kGeo);
  z.band(0).block(4, 6, 7, 9).setConstant(12.0f);
  const auto m = find_markers(z, full_mask(20, 20), 2, 1);
  REQUIRE(m.size() == 1);
  CHECK(m[0].row == 7);
  CHECK(m[0].col == 10);
}

TEST_CASE("watershed basics") {
  const TreeMask mask = full_mask(16, 16);
  const RasterGrid z = bumps(16, 16, {{8, 8, 3}});
  const std::vector<Marker> m = {{8, 8, 3}};
  const SegmentLabels one = watershed(z, m, mask);
  CHECK((one.values() == 1).all());
  CHECK_ERROR_KIND(watershed(z, std::vector<Marker>{}, mask), ErrorKind::EmptySegmentation);
  CHECK_ERROR_KIND(watershed(z, m, full_mask(16, 16, 0)), ErrorKind::EmptySegmentation);
}

TEST_CASE("watershed on two Gaussian bumps equals the reference flood") {
  const RasterGrid z = bumps(32, 32, {{8, 10, 5}, {22, 20, 4}}, 4.0);
  TreeMask mask = full_mask(32, 32);
  for (Index r = 0; r < 32; ++r) {
    for (Index c = 0; c < 32; ++c) mask.at(r, c) = z.at(r, c) > 0.3f;
  }
  const auto markers = find_markers(z, mask, 5, 0);
  REQUIRE(markers.size() == 2);
  const SegmentLabels got = watershed(z, markers, mask);
  CHECK((got.values() == oracle_flood(z, markers, mask).values()).all());
  CHECK(got.at(10, 8) == 1);
  CHECK(got.at(20, 22) == 2);
}

TEST_CASE("watershed equals the reference flood on 200 random masked grids") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const Index w = 4 + static_cast<Index>(uniform_index(rng, 61));
    const Index h = 4 + static_cast<Index>(uniform_index(rng, 61));
    RasterGrid z(w, h, 1, kGeo);
    TreeMask mask(w, h, 1, kGeo);
    const double fill = uniform(rng, 0.3, 0.9);
    for (Index r = 0; r < h; ++r) {
      for (Index c = 0; c < w; ++c) {
        // Coarse quantisation forces plenty of ties.
        z.at(r, c) = static_cast<float>(std::round(uniform(rng, 0, 8)));
        if (uniform01(rng) < 0.02) z.at(r, c) = std::numeric_limits<float>::quiet_NaN();
        mask.at(r, c) = uniform01(rng) < fill;
      }
    }
    std::vector<Marker> markers;
    if (trial % 2 == 0) {
      markers = find_markers(z, mask, uniform(rng, 0, 4), 0);
    } else {
      for (Index k = 0; k < w * h; ++k) {
        if (mask.values().data()[k] && uniform01(rng) < 0.05) markers.push_back({k / w, k % w, 0});
      }
    }
    if (markers.empty() || !(mask.values() != 0).any()) continue;
    const SegmentLabels got = watershed(z, markers, mask);
    const SegmentLabels want = oracle_flood(z, markers, mask);
    REQUIRE_MESSAGE((got.values() == want.values()).all(), "trial " << trial);
    CHECK(((got.values() == 0) == (mask.values() == 0)).all());
  }
}

TEST_CASE("equivalent diameter") {
  CHECK(equivalent_diameter(std::numbers::pi) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(equivalent_diameter(0) == 0);
  CHECK(equivalent_diameter(78.5398) == doctest::Approx(10.0).epsilon(1e-6));
  CHECK(equivalent_diameter(3.0) < equivalent_diameter(3.0000001));
  CHECK_ERROR_KIND(equivalent_diameter(-1), ErrorKind::Parameter);
}

TEST_CASE("polygonize single pixel, block, hole and small-region drop") {
  SegmentLabels px(3, 3, 1, kGeo);
  px.at(1, 1) = 1;
  auto p = polygonize(px);
  REQUIRE(p.size() == 1);
  CHECK(p[0].ring.size() == 5);
  CHECK(p[0].ring.front() == p[0].ring.back());
  CHECK(p[0].area_m2 == doctest::Approx(0.36));
  CHECK(p[0].diameter_m == doctest::Approx(0.677).epsilon(1e-3));
  CHECK(shoelace(p[0].ring) == doctest::Approx(0.36));
  CHECK(p[0].centroid.isApprox(Eigen::Vector2d(1000.9, 1999.1)));
  CHECK(p[0].ring[0].isApprox(Eigen::Vector2d(1001.2, 2000 - 0.6)));

  SegmentLabels block(4, 4, 1, kGeo);
  block.band(0).block(1, 1, 2, 2).setConstant(3);
  p = polygonize(block);
  REQUIRE(p.size() == 1);
  CHECK(p[0].id == 3);
  CHECK(p[0].ring.size() == 5);
  CHECK(p[0].area_m2 == doctest::Approx(4 * 0.36));

  SegmentLabels ring(5, 5, 1, kGeo);
  ring.band(0).block(1, 1, 3, 3).setConstant(1);
  ring.at(2, 2) = 0;
  p = polygonize(ring);
  REQUIRE(p.size() == 1);
  CHECK(p[0].ring.size() == 5);
  CHECK(p[0].pixel_count == 8);
  CHECK(p[0].area_m2 == doctest::Approx(8 * 0.36));
  CHECK(shoelace(p[0].ring) == doctest::Approx(9 * 0.36));

  SegmentLabels two(6, 6, 1, kGeo);
  two.at(0, 0) = 1;
  two.band(0).block(2, 2, 4, 4).setConstant(2);
  p = polygonize(two, 4 * 0.36);
  REQUIRE(p.size() == 1);
  CHECK(p[0].id == 2);
  CHECK(polygonize(SegmentLabels(4, 4, 1, kGeo)).empty());
}

TEST_CASE("pinched region traces one outer ring") {
  // Two blocks touching only at a corner, joined by an arm; the pocket
  // between them opens to the outside through the pinch.
  SegmentLabels l(6, 6, 1, kGeo);
  const char* rows[] = {"110000", "110000", "101100", "101100", "100100", "111100"};
  for (Index r = 0; r < 6; ++r) {
    for (Index c = 0; c < 6; ++c) l.at(r, c) = rows[r][c] == '1' ? 1 : 0;
  }
  const SegmentLabels canon = canonical_labels(l);
  const auto p = polygonize(canon);
  REQUIRE(p.size() == 1);
  CHECK(shoelace(p[0].ring) > 0);
  const auto filled = filled_region(canon, 1);
  CHECK(cells_in_ring(kGeo, 6, 6, p[0].ring) == filled);
  CHECK(std::find(filled.begin(), filled.end(), 2 * 6 + 1) == filled.end());
}

TEST_CASE("traced rings enclose exactly the filled region on random blobs") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const Index w = 3 + static_cast<Index>(uniform_index(rng, 20)), h = 3 + static_cast<Index>(uniform_index(rng, 20));
    SegmentLabels raw(w, h, 1, kGeo);
    for (Index k = 0; k < w * h; ++k) raw.values().data()[k] = uniform01(rng) < 0.55 ? 1 + static_cast<int>(uniform_index(rng, 2)) : 0;
    const SegmentLabels labels = canonical_labels(raw);
    Index total = 0;
    for (const auto& poly : polygonize(labels)) {
      CHECK(shoelace(poly.ring) > 0);
      CHECK(poly.diameter_m == doctest::Approx(2 * std::sqrt(poly.area_m2 / std::numbers::pi)));
      REQUIRE_MESSAGE(cells_in_ring(kGeo, w, h, poly.ring) == filled_region(labels, poly.id),
                      "trial " << trial << " crown " << poly.id);
      total += poly.pixel_count;
    }
    CHECK(total == (labels.values() != 0).count());
  }
}

TEST_CASE("canonical labels split disconnected runs and number them row-major") {
  SegmentLabels l(4, 3, 1, kGeo);
  l.at(0, 3) = 7;
  l.at(2, 0) = 7;
  l.at(1, 1) = 2;
  l.at(1, 2) = 2;
  const auto c = canonical_labels(l);
  CHECK(c.at(0, 3) == 1);
  CHECK(c.at(1, 1) == 2);
  CHECK(c.at(1, 2) == 2);
  CHECK(c.at(2, 0) == 3);
}

TEST_CASE("gaussian smoothing keeps constants and skips NaN") {
  RasterGrid g(12, 9, 1, kGeo, 0, std::numeric_limits<double>::quiet_NaN(), 0.7f);
  g.at(4, 4) = std::numeric_limits<float>::quiet_NaN();
  const RasterGrid s = gaussian_smooth(g, 1.5);
  CHECK(std::isnan(s.at(4, 4)));
  for (Index r = 0; r < 9; ++r) {
    for (Index c = 0; c < 12; ++c) {
      if (r != 4 || c != 4) CHECK(s.at(r, c) == doctest::Approx(0.7).epsilon(1e-6));
    }
  }
  RasterGrid spike(31, 31, 1, kGeo);
  spike.at(15, 15) = 1;
  const RasterGrid b = gaussian_smooth(spike, 2.0);
  CHECK(b.values().sum() == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(b.at(15, 15) > b.at(15, 16));
  CHECK(b.at(15, 16) == doctest::Approx(b.at(16, 15)));
  CHECK_ERROR_KIND(gaussian_smooth(g, 0), ErrorKind::Parameter);
}

TEST_CASE("tiled segmentation matches untiled and is worker-independent") {
  Rng rng(99);
  const Index n = 150;
  std::vector<Eigen::Vector3d> discs;
  while (discs.size() < 30) {
    const Eigen::Vector3d d(uniform(rng, 8, n - 8), uniform(rng, 8, n - 8), uniform(rng, 3, 7));
    bool clear = true;
    for (const auto& e : discs) clear = clear && (d.head<2>() - e.head<2>()).norm() > d.z() + e.z() + 2;
    if (clear) discs.push_back(d);
  }
  RasterGrid z(n, n, 1, kGeo);
  TreeMask mask(n, n, 1, kGeo);
  for (Index r = 0; r < n; ++r) {
    for (Index c = 0; c < n; ++c) {
      for (std::size_t i = 0; i < discs.size(); ++i) {
        const auto& d = discs[i];
        const double dist = std::hypot(c + 0.5 - d.x(), r + 0.5 - d.y());
        if (dist > d.z()) continue;
        mask.at(r, c) = 1;
        z.at(r, c) = static_cast<float>(10 + i - dist);
      }
    }
  }
  SegmentParams whole;
  whole.tile_size = 0;
  whole.min_crown_area = 0;
  const auto a = segment_crowns(z, mask, whole);
  CHECK(a.crowns.size() == discs.size());
  CHECK(((a.labels.values() == 0) == (mask.values() == 0)).all());

  SegmentParams tiled = whole;
  tiled.tile_size = 48;
  tiled.overlap = 10;
  tiled.workers = 1;
  const auto b = segment_crowns(z, mask, tiled);
  tiled.workers = 4;
  const auto c = segment_crowns(z, mask, tiled);
  CHECK(bit_equal(a.labels, b.labels));
  CHECK(bit_equal(b.labels, c.labels));
  CHECK(crowns_to_geojson(a.crowns, 0) == crowns_to_geojson(c.crowns, 0));

  SegmentParams big = whole;
  big.min_crown_area = 20 * 0.36;
  const auto d = segment_crowns(z, mask, big);
  Index kept = 0;
  for (const auto& crown : d.crowns) {
    CHECK(crown.area_m2 >= big.min_crown_area);
    kept += crown.pixel_count;
  }
  Index small = 0;
  for (const auto& crown : a.crowns) small += crown.area_m2 < big.min_crown_area ? crown.pixel_count : 0;
  CHECK(kept == (mask.values() != 0).count() - small);

  CHECK_ERROR_KIND(segment_crowns(z, TreeMask(n, n, 1, kGeo), whole), ErrorKind::EmptySegmentation);
}

TEST_CASE("crown GeoJSON round-trips") {
  SegmentLabels l(8, 8, 1, kGeo);
  l.band(0).block(1, 1, 3, 4).setConstant(1);
  l.band(0).block(5, 5, 2, 2).setConstant(2);
  auto crowns = polygonize(l);
  crowns[0].species = 3;
  crowns[0].height_m = 12.5;
  const auto dir = testing::temp_dir("crowns_geojson");
  write_crowns(crowns, 32618, dir / "c.geojson");
  const auto back = read_crowns(dir / "c.geojson");
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].id == crowns[i].id);
    CHECK(back[i].ring == crowns[i].ring);
    CHECK(back[i].area_m2 == crowns[i].area_m2);
    CHECK(back[i].diameter_m == crowns[i].diameter_m);
    CHECK(back[i].centroid == crowns[i].centroid);
    CHECK(back[i].species == crowns[i].species);
    CHECK(back[i].height_m == crowns[i].height_m);
  }
  CHECK(crowns_from_geojson(crowns_to_geojson({}, 0)).empty());
  CHECK_ERROR_KIND(crowns_from_geojson("{\"type\": \"Feature\"}"), ErrorKind::Parse);
  CHECK_ERROR_KIND(crowns_from_geojson("not json"), ErrorKind::Parse);
}
