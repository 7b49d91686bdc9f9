#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

#include <fmt/format.h>

#include "treecarbon/crowns.hpp"
#include "treecarbon/parallel.hpp"
#include "treecarbon/tiling.hpp"

namespace treecarbon {
namespace {

constexpr float kLowest = -std::numeric_limits<float>::infinity();

float level(float v) { return std::isnan(v) ? kLowest : v; }

void check_inputs(const RasterGrid& topography, const TreeMask& mask) {
  require(topography.bands() == 1 && mask.bands() == 1, ErrorKind::Parameter,
          "topography and mask must be single-band");
  require(same_grid(topography, mask), ErrorKind::Parameter,
          fmt::format("topography grid {}x{} does not match mask grid {}x{}", topography.width(),
                      topography.height(), mask.width(), mask.height()));
}

struct QueueEntry {
  float value;
  std::uint64_t seq;
  Index pixel;
  std::int32_t label;
};

struct Lower {
  bool operator()(const QueueEntry& a, const QueueEntry& b) const {
    if (a.value != b.value) return a.value < b.value;
    return a.seq > b.seq;
  }
};

// Labels every 4-connected masked component still at 0, row-major.
void label_leftovers(SegmentLabels& labels, const TreeMask& mask, std::int32_t next) {
  const Index w = labels.width(), h = labels.height();
  std::vector<Index> stack;
  for (Index k = 0; k < w * h; ++k) {
    if (!mask.values().data()[k] || labels.values().data()[k] != 0) continue;
    ++next;
    labels.values().data()[k] = next;
    stack.push_back(k);
    while (!stack.empty()) {
      const Index p = stack.back();
      stack.pop_back();
      const Index r = p / w, c = p % w;
      const Index nb[4][2] = {{r - 1, c}, {r, c - 1}, {r, c + 1}, {r + 1, c}};
      for (const auto& n : nb) {
        if (!labels.contains(n[0], n[1])) continue;
        const Index q = n[0] * w + n[1];
        if (mask.values().data()[q] && labels.values().data()[q] == 0) {
          labels.values().data()[q] = next;
          stack.push_back(q);
        }
      }
    }
  }
}

SegmentLabels flood(const RasterGrid& topography, std::span<const Marker> markers, const TreeMask& mask) {
  const Index w = mask.width(), h = mask.height();
  SegmentLabels labels(w, h, 1, mask.geo(), mask.crs_id(), 0.0, 0);
  labels.set_band_names({"crown_id"});
  const auto* z = topography.values().data();
  const auto* m = mask.values().data();
  auto* out = labels.values().data();

  std::priority_queue<QueueEntry, std::vector<QueueEntry>, Lower> queue;
  std::uint64_t seq = 0;
  auto push_neighbours = [&](Index p, std::int32_t label) {
    const Index r = p / w, c = p % w;
    const Index nb[4][2] = {{r - 1, c}, {r, c - 1}, {r, c + 1}, {r + 1, c}};
    for (const auto& n : nb) {
      if (!labels.contains(n[0], n[1])) continue;
      const Index q = n[0] * w + n[1];
      if (m[q] && out[q] == 0) queue.push({level(z[q]), seq++, q, label});
    }
  };

  for (std::size_t i = 0; i < markers.size(); ++i) {
    const auto& mk = markers[i];
    require(mask.contains(mk.row, mk.col) && mask.at(mk.row, mk.col), ErrorKind::Parameter,
            fmt::format("marker {} at ({}, {}) lies outside the mask", i, mk.row, mk.col));
    const Index p = mk.row * w + mk.col;
    require(out[p] == 0, ErrorKind::Parameter,
            fmt::format("duplicate marker at ({}, {})", mk.row, mk.col));
    out[p] = static_cast<std::int32_t>(i + 1);
  }
  for (std::size_t i = 0; i < markers.size(); ++i) {
    push_neighbours(markers[i].row * w + markers[i].col, static_cast<std::int32_t>(i + 1));
  }
  while (!queue.empty()) {
    const QueueEntry e = queue.top();
    queue.pop();
    if (out[e.pixel] != 0) continue;
    out[e.pixel] = e.label;
    push_neighbours(e.pixel, e.label);
  }
  label_leftovers(labels, mask, static_cast<std::int32_t>(markers.size()));
  return labels;
}

}  // namespace

std::vector<Marker> find_markers(const RasterGrid& topography, const TreeMask& mask,
                                 double min_distance, double min_height) {
  check_inputs(topography, mask);
  require(min_distance >= 0 && std::isfinite(min_distance), ErrorKind::Parameter,
          fmt::format("min_distance must be non-negative, got {}", min_distance));
  const Index w = mask.width(), h = mask.height();
  const auto* z = topography.values().data();
  const auto* m = mask.values().data();

  std::vector<char> visited(static_cast<std::size_t>(w * h), 0);
  std::vector<Marker> candidates;
  std::vector<Index> plateau, stack;
  for (Index k = 0; k < w * h; ++k) {
    if (!m[k] || visited[static_cast<std::size_t>(k)] || std::isnan(z[k])) continue;
    const float v = z[k];
    plateau.clear();
    stack.assign(1, k);
    visited[static_cast<std::size_t>(k)] = 1;
    bool maximum = true;
    while (!stack.empty()) {
      const Index p = stack.back();
      stack.pop_back();
      plateau.push_back(p);
      const Index r = p / w, c = p % w;
      for (Index dr = -1; dr <= 1; ++dr) {
        for (Index dc = -1; dc <= 1; ++dc) {
          if ((dr == 0 && dc == 0) || !mask.contains(r + dr, c + dc)) continue;
          const Index q = (r + dr) * w + c + dc;
          if (!m[q] || std::isnan(z[q])) continue;
          if (z[q] > v) maximum = false;
          if (z[q] == v && !visited[static_cast<std::size_t>(q)]) {
            visited[static_cast<std::size_t>(q)] = 1;
            stack.push_back(q);
          }
        }
      }
    }
    if (!maximum || !(v >= min_height)) continue;
    std::sort(plateau.begin(), plateau.end());
    double mr = 0, mc = 0;
    for (Index p : plateau) {
      mr += static_cast<double>(p / w);
      mc += static_cast<double>(p % w);
    }
    mr /= static_cast<double>(plateau.size());
    mc /= static_cast<double>(plateau.size());
    Index best = plateau.front();
    double best_d = std::numeric_limits<double>::infinity();
    for (Index p : plateau) {
      const double dr = static_cast<double>(p / w) - mr, dc = static_cast<double>(p % w) - mc;
      const double d = dr * dr + dc * dc;
      if (d < best_d) {
        best_d = d;
        best = p;
      }
    }
    candidates.push_back({best / w, best % w, v});
  }

  std::sort(candidates.begin(), candidates.end(), [](const Marker& a, const Marker& b) {
    if (a.value != b.value) return a.value > b.value;
    if (a.row != b.row) return a.row < b.row;
    return a.col < b.col;
  });
  std::vector<Marker> kept;
  const double limit = min_distance * min_distance;
  for (const auto& c : candidates) {
    const bool clear = std::none_of(kept.begin(), kept.end(), [&](const Marker& k) {
      const double dr = static_cast<double>(c.row - k.row), dc = static_cast<double>(c.col - k.col);
      return dr * dr + dc * dc <= limit;
    });
    if (clear) kept.push_back(c);
  }
  return kept;
}

SegmentLabels watershed(const RasterGrid& topography, std::span<const Marker> markers,
                        const TreeMask& mask) {
  check_inputs(topography, mask);
  require((mask.values() != 0).any(), ErrorKind::EmptySegmentation, "tree mask is empty");
  require(!markers.empty(), ErrorKind::EmptySegmentation, "watershed needs at least one marker");
  return flood(topography, markers, mask);
}

RasterGrid gaussian_smooth(const RasterGrid& grid, double sigma) {
  require(sigma > 0 && std::isfinite(sigma), ErrorKind::Parameter,
          fmt::format("smoothing sigma must be positive, got {}", sigma));
  const auto radius = static_cast<Index>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (Index i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] =
        std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
  }
  const Index w = grid.width(), h = grid.height();
  RasterGrid out = grid;
  for (Index b = 0; b < grid.bands(); ++b) {
    Eigen::ArrayXXd tmp(h, w);
    const auto src = grid.band(b);
    for (Index r = 0; r < h; ++r) {
      for (Index c = 0; c < w; ++c) {
        double sum = 0, weight = 0;
        for (Index i = std::max<Index>(-radius, -c); i <= std::min(radius, w - 1 - c); ++i) {
          const float v = src(r, c + i);
          if (std::isnan(v) || grid.is_nodata(v)) continue;
          sum += kernel[static_cast<std::size_t>(i + radius)] * v;
          weight += kernel[static_cast<std::size_t>(i + radius)];
        }
        tmp(r, c) = weight > 0 ? sum / weight : std::numeric_limits<double>::quiet_NaN();
      }
    }
    for (Index r = 0; r < h; ++r) {
      for (Index c = 0; c < w; ++c) {
        const float v = src(r, c);
        if (std::isnan(v) || grid.is_nodata(v)) continue;
        double sum = 0, weight = 0;
        for (Index i = std::max<Index>(-radius, -r); i <= std::min(radius, h - 1 - r); ++i) {
          const double t = tmp(r + i, c);
          if (std::isnan(t)) continue;
          sum += kernel[static_cast<std::size_t>(i + radius)] * t;
          weight += kernel[static_cast<std::size_t>(i + radius)];
        }
        out(b, r, c) = static_cast<float>(sum / weight);
      }
    }
  }
  return out;
}

SegmentLabels canonical_labels(const SegmentLabels& labels) {
  const Index w = labels.width(), h = labels.height();
  SegmentLabels out(w, h, 1, labels.geo(), labels.crs_id(), 0.0, 0);
  out.set_band_names({"crown_id"});
  const auto* in = labels.values().data();
  auto* o = out.values().data();
  std::int32_t next = 0;
  std::vector<Index> stack;
  for (Index k = 0; k < w * h; ++k) {
    if (in[k] <= 0 || o[k] != 0) continue;
    const std::int32_t id = ++next;
    o[k] = id;
    stack.assign(1, k);
    while (!stack.empty()) {
      const Index p = stack.back();
      stack.pop_back();
      const Index r = p / w, c = p % w;
      const Index nb[4][2] = {{r - 1, c}, {r, c - 1}, {r, c + 1}, {r + 1, c}};
      for (const auto& n : nb) {
        if (!out.contains(n[0], n[1])) continue;
        const Index q = n[0] * w + n[1];
        if (in[q] == in[k] && o[q] == 0) {
          o[q] = id;
          stack.push_back(q);
        }
      }
    }
  }
  return out;
}

Segmentation segment_crowns(const RasterGrid& topography, const TreeMask& mask,
                            const SegmentParams& params) {
  check_inputs(topography, mask);
  require(params.min_crown_area >= 0, ErrorKind::Parameter, "min_crown_area must be non-negative");
  require((mask.values() != 0).any(), ErrorKind::EmptySegmentation, "tree mask is empty");
  const Index w = mask.width(), h = mask.height();
  const Index tile = params.tile_size > 0 ? params.tile_size : std::max(w, h);
  TileLayout layout{w, h, 1, tile, params.tile_size > 0 ? params.overlap : 0, mask.geo(), mask.crs_id(), {}};
  const auto cells = layout.cells();

  // Per tile: the crowns it owns, as global linear pixel indices.
  std::vector<std::vector<std::vector<Index>>> owned(cells.size());
  parallel_for(cells.size(), params.workers, [&](std::size_t t) {
    const Window& ext = cells[t].extent;
    const RasterGrid topo = crop(topography, ext);
    const TreeMask sub = crop(mask, ext);
    const auto markers = find_markers(topo, sub, params.min_distance, params.min_height);
    const SegmentLabels local = flood(topo, markers, sub);
    const std::int32_t n = local.values().maxCoeff();
    std::vector<std::vector<Index>> pixels(static_cast<std::size_t>(std::max(n, 0)));
    for (Index r = 0; r < ext.rows; ++r) {
      for (Index c = 0; c < ext.cols; ++c) {
        const std::int32_t l = local.at(r, c);
        if (l > 0) pixels[static_cast<std::size_t>(l - 1)].push_back((r + ext.row) * w + c + ext.col);
      }
    }
    for (auto& px : pixels) {
      if (px.empty()) continue;
      double sr = 0, sc = 0;
      for (Index p : px) {
        sr += static_cast<double>(p / w) + 0.5;
        sc += static_cast<double>(p % w) + 0.5;
      }
      const auto cr = static_cast<Index>(std::floor(sr / static_cast<double>(px.size())));
      const auto cc = static_cast<Index>(std::floor(sc / static_cast<double>(px.size())));
      if (cells[t].core.contains(cr, cc)) owned[t].push_back(std::move(px));
    }
  });

  SegmentLabels painted(w, h, 1, mask.geo(), mask.crs_id(), 0.0, 0);
  std::int32_t next = 0;
  for (const auto& tile_crowns : owned) {
    for (const auto& px : tile_crowns) {
      ++next;
      for (Index p : px) {
        auto& v = painted.values().data()[p];
        if (v == 0) v = next;
      }
    }
  }
  label_leftovers(painted, mask, next);
  Segmentation out;
  out.labels = canonical_labels(painted);
  out.crowns = polygonize(out.labels, params.min_crown_area);
  return out;
}

}  // namespace treecarbon
