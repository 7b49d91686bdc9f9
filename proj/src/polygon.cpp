#include <cmath>
#include <numbers>

#include <fmt/format.h>
#include <json.hpp>

#include "treecarbon/crowns.hpp"
#include "treecarbon/csv.hpp"

namespace treecarbon {
namespace {

using Corner = Eigen::Matrix<Index, 2, 1>;  // (col, row) in pixel-corner space

// Walks the boundary of region `id` with the region on the left, starting on
// the top edge of its first row-major pixel. At pinch vertices the walk turns
// left, which keeps diagonal neighbours apart and yields the outer ring.
std::vector<Corner> trace_exterior(const SegmentLabels& labels, std::int32_t id, Index first) {
  const Index w = labels.width();
  auto inside = [&](Index col, Index row) {
    return labels.contains(row, col) && labels.at(row, col) == id;
  };
  // Pixel whose center is corner + (a, b) / 2 for a, b in {-1, 1}.
  auto pixel_in = [&](const Corner& v, Index a, Index b) {
    return inside(v.x() + (a < 0 ? -1 : 0), v.y() + (b < 0 ? -1 : 0));
  };
  auto left_of = [](const Corner& d) { return Corner(d.y(), -d.x()); };

  const Corner start(first % w + 1, first / w);
  const Corner west(-1, 0);
  std::vector<Corner> path;
  Corner v = start, d = west;
  do {
    path.push_back(v);
    v += d;
    const Corner l = left_of(d);
    const bool ahead_left = pixel_in(v, d.x() + l.x(), d.y() + l.y());
    const bool ahead_right = pixel_in(v, d.x() - l.x(), d.y() - l.y());
    if (!ahead_left) {
      d = l;
    } else if (ahead_right) {
      d = -l;
    }
  } while (!(v == start && d == west));

  std::vector<Corner> ring;
  const std::size_t n = path.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Corner a = path[(i + n - 1) % n], b = path[i], c = path[(i + 1) % n];
    if ((b - a) != (c - b)) ring.push_back(b);
  }
  return ring;
}

}  // namespace

double equivalent_diameter(double area_m2) {
  require(area_m2 >= 0 && std::isfinite(area_m2), ErrorKind::Parameter,
          fmt::format("crown area must be non-negative, got {}", area_m2));
  return 2.0 * std::sqrt(area_m2 / std::numbers::pi);
}

std::vector<CrownPolygon> polygonize(const SegmentLabels& labels, double min_area_m2) {
  if (labels.pixel_count() == 0) return {};
  require(labels.bands() == 1, ErrorKind::Parameter, "segment labels must be single-band");
  const Index w = labels.width();
  const auto* v = labels.values().data();
  const std::int32_t max_label = labels.values().maxCoeff();
  require(labels.values().minCoeff() >= 0, ErrorKind::Parameter, "segment labels must be non-negative");

  struct Acc {
    Index count = 0;
    Index first = -1;
    double sum_col = 0.0, sum_row = 0.0;
  };
  std::vector<Acc> acc(static_cast<std::size_t>(max_label) + 1);
  for (Index k = 0; k < labels.pixel_count(); ++k) {
    if (v[k] == 0) continue;
    auto& a = acc[static_cast<std::size_t>(v[k])];
    if (a.count++ == 0) a.first = k;
    a.sum_col += static_cast<double>(k % w) + 0.5;
    a.sum_row += static_cast<double>(k / w) + 0.5;
  }

  const GeoTransform& geo = labels.geo();
  std::vector<CrownPolygon> out;
  for (std::int32_t id = 1; id <= max_label; ++id) {
    const auto& a = acc[static_cast<std::size_t>(id)];
    if (a.count == 0) continue;
    const double area = static_cast<double>(a.count) * geo.cell_area();
    if (area < min_area_m2) continue;
    CrownPolygon p;
    p.id = id;
    p.pixel_count = a.count;
    p.area_m2 = area;
    p.diameter_m = equivalent_diameter(area);
    const double n = static_cast<double>(a.count);
    p.centroid = geo.pixel_to_map(a.sum_col / n, a.sum_row / n);
    for (const Corner& c : trace_exterior(labels, id, a.first)) {
      p.ring.push_back(geo.pixel_to_map(static_cast<double>(c.x()), static_cast<double>(c.y())));
    }
    p.ring.push_back(p.ring.front());
    out.push_back(std::move(p));
  }
  return out;
}

std::string crowns_to_geojson(std::span<const CrownPolygon> crowns, int crs_id) {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& c : crowns) {
    nlohmann::json ring = nlohmann::json::array();
    for (const auto& p : c.ring) ring.push_back({p.x(), p.y()});
    nlohmann::json props = {{"id", c.id},
                            {"area_m2", c.area_m2},
                            {"diameter_m", c.diameter_m},
                            {"centroid_x", c.centroid.x()},
                            {"centroid_y", c.centroid.y()},
                            {"pixel_count", c.pixel_count}};
    if (c.species) props["species"] = *c.species;
    if (c.height_m) props["height_m"] = *c.height_m;
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "Polygon"}, {"coordinates", {ring}}}},
                        {"properties", props}});
  }
  nlohmann::json doc = {{"type", "FeatureCollection"}, {"features", features}};
  if (crs_id) doc["epsg"] = crs_id;
  return doc.dump(1) + "\n";
}

std::vector<CrownPolygon> crowns_from_geojson(const std::string& text) {
  std::vector<CrownPolygon> out;
  try {
    const auto doc = nlohmann::json::parse(text);
    require(doc.at("type") == "FeatureCollection", ErrorKind::Parse, "expected a FeatureCollection");
    for (const auto& f : doc.at("features")) {
      const auto& props = f.at("properties");
      CrownPolygon c;
      c.id = props.at("id").get<int>();
      c.area_m2 = props.at("area_m2").get<double>();
      c.diameter_m = props.at("diameter_m").get<double>();
      c.centroid = {props.at("centroid_x").get<double>(), props.at("centroid_y").get<double>()};
      c.pixel_count = props.value("pixel_count", Index{0});
      if (props.contains("species") && !props["species"].is_null()) c.species = props["species"].get<int>();
      if (props.contains("height_m") && !props["height_m"].is_null()) c.height_m = props["height_m"].get<double>();
      for (const auto& p : f.at("geometry").at("coordinates").at(0)) {
        c.ring.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
      }
      require(c.ring.size() >= 4, ErrorKind::Parse, fmt::format("crown {} ring has too few vertices", c.id));
      out.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, fmt::format("invalid crown GeoJSON: {}", e.what()));
  }
  return out;
}

void write_crowns(std::span<const CrownPolygon> crowns, int crs_id, const std::filesystem::path& path) {
  write_text_file(path, crowns_to_geojson(crowns, crs_id));
}

std::vector<CrownPolygon> read_crowns(const std::filesystem::path& path) {
  return crowns_from_geojson(read_text_file(path));
}

}  // namespace treecarbon
