#include "treecarbon/carbon.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

#include <fmt/format.h>
#include <json.hpp>

#include "treecarbon/csv.hpp"

namespace treecarbon {
namespace {

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += sep;
    out += p;
  }
  return out;
}

std::vector<std::string> split_flags(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size() && !s.empty()) {
    const auto end = s.find('|', start);
    out.push_back(s.substr(start, end == std::string::npos ? std::string::npos : end - start));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

double cross(const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

bool segments_cross(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c,
                    const Eigen::Vector2d& d) {
  const double d1 = cross(c, d, a), d2 = cross(c, d, b), d3 = cross(a, b, c), d4 = cross(a, b, d);
  return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

bool rings_overlap(const std::vector<Eigen::Vector2d>& a, const std::vector<Eigen::Vector2d>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& a0 = a[i];
    const auto& a1 = a[(i + 1) % a.size()];
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (segments_cross(a0, a1, b[j], b[(j + 1) % b.size()])) return true;
    }
  }
  auto on_edge = [](const Eigen::Vector2d& p, const std::vector<Eigen::Vector2d>& q) {
    for (std::size_t j = 0; j < q.size(); ++j) {
      const auto& u = q[j];
      const auto& v = q[(j + 1) % q.size()];
      const double scale = std::max({1.0, (v - u).norm(), (p - u).norm()});
      if (std::abs(cross(u, v, p)) <= 1e-9 * scale * scale && (p - u).dot(p - v) <= 0) return true;
    }
    return false;
  };
  auto strictly_inside = [&](const Eigen::Vector2d& p, const std::vector<Eigen::Vector2d>& q) {
    return !on_edge(p, q) && point_in_ring(p, q);
  };
  auto any_inside = [&](const std::vector<Eigen::Vector2d>& p, const std::vector<Eigen::Vector2d>& q) {
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const Eigen::Vector2d mid = (p[i] + p[(i + 1) % p.size()]) / 2;
      if (strictly_inside(p[i], q) || strictly_inside(mid, q)) return true;
      mean += p[i];
    }
    mean /= static_cast<double>(p.size());
    return point_in_ring(mean, p) && strictly_inside(mean, q);
  };
  return any_inside(a, b) || any_inside(b, a);
}

struct Accumulator {
  std::vector<double> agb, carbon;
  void add(const CarbonEstimate& e) {
    agb.push_back(e.agb_kg);
    carbon.push_back(e.carbon_kg);
  }
  CarbonTotals finish(std::string name) const {
    return {std::move(name), carbon.size(), compensated_sum(agb), compensated_sum(carbon)};
  }
};

}  // namespace

double agb(double d_m, double h_m, double rho, double form_factor) {
  require(d_m >= 0 && std::isfinite(d_m), ErrorKind::Parameter, fmt::format("D must be non-negative, got {}", d_m));
  require(h_m >= 0 && std::isfinite(h_m), ErrorKind::Parameter, fmt::format("H must be non-negative, got {}", h_m));
  require(rho > 0 && std::isfinite(rho), ErrorKind::Parameter, fmt::format("rho must be positive, got {}", rho));
  require(form_factor > 0 && form_factor <= 1, ErrorKind::Parameter,
          fmt::format("form factor must lie in (0, 1], got {}", form_factor));
  return form_factor * rho * (std::numbers::pi * d_m * d_m / 4.0) * h_m;
}

BiomassSplit carbon_from_agb(double agb_kg) {
  require(agb_kg >= 0 && std::isfinite(agb_kg), ErrorKind::Parameter,
          fmt::format("AGB must be non-negative, got {}", agb_kg));
  BiomassSplit s;
  s.agb_kg = agb_kg;
  s.bgb_kg = kBelowGroundRatio * agb_kg;
  s.total_biomass_kg = agb_kg + s.bgb_kg;
  s.carbon_kg = kCarbonFraction * s.total_biomass_kg;
  return s;
}

CrownOutcome estimate_crown(const CrownPolygon& crown, const SpeciesTable& table, double form_factor) {
  if (!crown.species) return SkipRecord{crown.id, crown.centroid, "unclassified"};
  require(crown.height_m.has_value(), ErrorKind::Parameter, fmt::format("crown {} has no height", crown.id));
  const SpeciesEntry& sp = table.at(*crown.species);
  CarbonEstimate e;
  e.crown_id = crown.id;
  e.species = sp.label;
  e.form_factor = form_factor;
  e.rho = sp.rho;
  e.d_m = crown.diameter_m;
  e.h_m = *crown.height_m;
  e.centroid = crown.centroid;
  const BiomassSplit s = carbon_from_agb(agb(e.d_m, e.h_m, e.rho, form_factor));
  e.agb_kg = s.agb_kg;
  e.bgb_kg = s.bgb_kg;
  e.total_biomass_kg = s.total_biomass_kg;
  e.carbon_kg = s.carbon_kg;
  return e;
}

double compensated_sum(std::span<const double> values) {
  double sum = 0.0, c = 0.0;
  for (double v : values) {
    const double t = sum + v;
    c += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  return sum + c;
}

CarbonSummary aggregate(std::span<const CarbonEstimate> estimates, std::span<const Region> regions,
                        std::size_t skipped) {
  for (std::size_t i = 0; i < regions.size(); ++i) {
    for (std::size_t j = i + 1; j < regions.size(); ++j) {
      require(!rings_overlap(regions[i].ring, regions[j].ring), ErrorKind::Ambiguity,
              fmt::format("regions '{}' and '{}' overlap", regions[i].name, regions[j].name));
    }
  }
  std::vector<const CarbonEstimate*> order;
  for (const auto& e : estimates) order.push_back(&e);
  std::stable_sort(order.begin(), order.end(), [](const CarbonEstimate* a, const CarbonEstimate* b) {
    if (a->crown_id != b->crown_id) return a->crown_id < b->crown_id;
    if (a->carbon_kg != b->carbon_kg) return a->carbon_kg < b->carbon_kg;
    return a->agb_kg < b->agb_kg;
  });

  std::vector<Accumulator> acc(regions.size());
  Accumulator outside;
  for (const CarbonEstimate* e : order) {
    int home = -1;
    for (std::size_t r = 0; r < regions.size(); ++r) {
      if (!point_in_ring(e->centroid, regions[r].ring)) continue;
      if (home >= 0) {
        fail(ErrorKind::Ambiguity, fmt::format("crown {} lies in both '{}' and '{}'", e->crown_id,
                                               regions[static_cast<std::size_t>(home)].name, regions[r].name));
      }
      home = static_cast<int>(r);
    }
    (home < 0 ? outside : acc[static_cast<std::size_t>(home)]).add(*e);
  }

  CarbonSummary s;
  std::vector<double> agb_parts, carbon_parts;
  for (std::size_t r = 0; r < regions.size(); ++r) {
    s.regions.push_back(acc[r].finish(regions[r].name));
    agb_parts.push_back(s.regions.back().agb_kg);
    carbon_parts.push_back(s.regions.back().carbon_kg);
  }
  s.outside = outside.finish("outside");
  agb_parts.push_back(s.outside.agb_kg);
  carbon_parts.push_back(s.outside.carbon_kg);
  s.total = {"total", estimates.size(), compensated_sum(agb_parts), compensated_sum(carbon_parts)};
  s.estimated = estimates.size();
  s.skipped = skipped;
  return s;
}

RasterGrid carbon_density_raster(std::span<const CarbonEstimate> estimates,
                                 std::span<const CrownPolygon> crowns, const GeoTransform& geo,
                                 Index width, Index height, int crs_id) {
  std::map<int, const CrownPolygon*> by_id;
  for (const auto& c : crowns) by_id[c.id] = &c;
  Eigen::ArrayXXd acc = Eigen::ArrayXXd::Zero(height, width);
  for (const auto& e : estimates) {
    const auto it = by_id.find(e.crown_id);
    require(it != by_id.end(), ErrorKind::Validation,
            fmt::format("no crown geometry for estimate {}", e.crown_id));
    std::vector<Index> cells = cells_in_ring(geo, width, height, it->second->ring);
    if (cells.empty()) {
      const Eigen::Vector2d px = geo.map_to_pixel(e.centroid.x(), e.centroid.y());
      const double c = std::floor(px.x()), r = std::floor(px.y());
      if (c < 0 || r < 0 || c >= static_cast<double>(width) || r >= static_cast<double>(height)) continue;
      cells.push_back(static_cast<Index>(r) * width + static_cast<Index>(c));
    }
    const double share = e.carbon_kg / (static_cast<double>(cells.size()) * geo.cell_area());
    for (Index k : cells) acc(k / width, k % width) += share;
  }
  RasterGrid out(width, height, 1, geo, crs_id, std::numeric_limits<double>::quiet_NaN());
  out.band(0) = acc.cast<float>();
  out.set_band_names({"carbon_kg_m2"});
  return out;
}

RasterGrid carbon_density_raster(std::span<const CarbonEstimate> estimates,
                                 std::span<const CrownPolygon> crowns, double cell_size, int crs_id) {
  require(cell_size > 0 && std::isfinite(cell_size), ErrorKind::Parameter,
          fmt::format("cell size must be positive, got {}", cell_size));
  if (crowns.empty() || estimates.empty()) {
    return RasterGrid(1, 1, 1, {0, 0, cell_size, cell_size}, crs_id, std::numeric_limits<double>::quiet_NaN(),
                      std::numeric_limits<float>::quiet_NaN());
  }
  Eigen::Vector2d lo = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector2d hi = -lo;
  for (const auto& c : crowns) {
    for (const auto& p : c.ring) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    lo = lo.cwiseMin(c.centroid);
    hi = hi.cwiseMax(c.centroid);
  }
  const double x0 = std::floor(lo.x() / cell_size) * cell_size;
  const double y1 = std::ceil(hi.y() / cell_size) * cell_size;
  const auto w = std::max<Index>(1, static_cast<Index>(std::ceil((hi.x() - x0) / cell_size - 1e-9)));
  const auto h = std::max<Index>(1, static_cast<Index>(std::ceil((y1 - lo.y()) / cell_size - 1e-9)));
  return carbon_density_raster(estimates, crowns, {x0, y1, cell_size, cell_size}, w, h, crs_id);
}

std::string trees_csv(std::span<const CrownOutcome> outcomes, const SpeciesTable& table) {
  std::string out = "id,centroid_x,centroid_y,species,D_m,H_m,agb_kg,carbon_kg,flags\n";
  for (const auto& o : outcomes) {
    if (const auto* e = std::get_if<CarbonEstimate>(&o)) {
      out += fmt::format("{},{},{},{},{},{},{},{},{}\n", e->crown_id, e->centroid.x(), e->centroid.y(),
                         table.at(e->species).name, e->d_m, e->h_m, e->agb_kg, e->carbon_kg, join(e->flags, '|'));
    } else {
      const auto& s = std::get<SkipRecord>(o);
      out += fmt::format("{},{},{},,,,,,skipped:{}\n", s.crown_id, s.centroid.x(), s.centroid.y(), s.reason);
    }
  }
  return out;
}

std::vector<CrownOutcome> parse_trees_csv(const std::string& text, const SpeciesTable& table) {
  const CsvTable t = parse_csv(text);
  const std::size_t ci = t.column("id"), cx = t.column("centroid_x"), cy = t.column("centroid_y"),
                    cs = t.column("species"), cd = t.column("D_m"), ch = t.column("H_m"),
                    ca = t.column("agb_kg"), cc = t.column("carbon_kg"), cf = t.column("flags");
  std::vector<CrownOutcome> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const int id = static_cast<int>(parse_number(row[ci], i + 1, "id"));
    const Eigen::Vector2d centroid(parse_number(row[cx], i + 1, "centroid_x"),
                                   parse_number(row[cy], i + 1, "centroid_y"));
    if (row[cf].rfind("skipped:", 0) == 0) {
      out.emplace_back(SkipRecord{id, centroid, row[cf].substr(8)});
      continue;
    }
    CarbonEstimate e;
    e.crown_id = id;
    e.centroid = centroid;
    e.species = table.find(row[cs]);
    require(e.species >= 0, ErrorKind::Validation,
            fmt::format("row {}: species '{}' is not in the species table", i + 1, row[cs]));
    e.rho = table.at(e.species).rho;
    e.d_m = parse_number(row[cd], i + 1, "D_m");
    e.h_m = parse_number(row[ch], i + 1, "H_m");
    e.agb_kg = parse_number(row[ca], i + 1, "agb_kg");
    e.carbon_kg = parse_number(row[cc], i + 1, "carbon_kg");
    const BiomassSplit s = carbon_from_agb(e.agb_kg);
    e.bgb_kg = s.bgb_kg;
    e.total_biomass_kg = s.total_biomass_kg;
    e.form_factor = e.agb_kg > 0 ? e.agb_kg / agb(e.d_m, e.h_m, e.rho, 1.0) : 1.0;
    e.flags = split_flags(row[cf]);
    out.emplace_back(std::move(e));
  }
  return out;
}

std::string summary_json(const CarbonSummary& summary) {
  auto totals = [](const CarbonTotals& t) {
    return nlohmann::json{{"name", t.name}, {"count", t.count}, {"agb_kg", t.agb_kg},
                          {"carbon_kg", t.carbon_kg}, {"carbon_t", t.carbon_t()}};
  };
  nlohmann::json regions = nlohmann::json::array();
  for (const auto& r : summary.regions) regions.push_back(totals(r));
  const nlohmann::json doc = {{"total", totals(summary.total)},
                              {"outside_regions", totals(summary.outside)},
                              {"regions", regions},
                              {"estimated", summary.estimated},
                              {"skipped", summary.skipped}};
  return doc.dump(2) + "\n";
}

std::string trees_geojson(std::span<const CarbonEstimate> estimates, std::span<const CrownPolygon> crowns,
                          const SpeciesTable& table, int crs_id) {
  std::map<int, const CrownPolygon*> by_id;
  for (const auto& c : crowns) by_id[c.id] = &c;
  nlohmann::json features = nlohmann::json::array();
  for (const auto& e : estimates) {
    const auto it = by_id.find(e.crown_id);
    require(it != by_id.end(), ErrorKind::Validation, fmt::format("no crown geometry for estimate {}", e.crown_id));
    nlohmann::json ring = nlohmann::json::array();
    for (const auto& p : it->second->ring) ring.push_back({p.x(), p.y()});
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "Polygon"}, {"coordinates", {ring}}}},
                        {"properties",
                         {{"id", e.crown_id},
                          {"species", table.at(e.species).name},
                          {"D_m", e.d_m},
                          {"H_m", e.h_m},
                          {"agb_kg", e.agb_kg},
                          {"carbon_kg", e.carbon_kg},
                          {"flags", join(e.flags, '|')}}}});
  }
  nlohmann::json doc = {{"type", "FeatureCollection"}, {"features", features}};
  if (crs_id) doc["epsg"] = crs_id;
  return doc.dump(1) + "\n";
}

std::vector<Region> load_regions(const std::filesystem::path& geojson) {
  std::vector<Region> out;
  try {
    const auto doc = nlohmann::json::parse(read_text_file(geojson));
    for (const auto& f : doc.at("features")) {
      Region r;
      const auto& props = f.value("properties", nlohmann::json::object());
      r.name = props.contains("name") ? props["name"].get<std::string>() : fmt::format("region{}", out.size());
      require(f.at("geometry").at("type") == "Polygon", ErrorKind::Parse, "regions must be Polygon features");
      for (const auto& p : f["geometry"]["coordinates"].at(0)) r.ring.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
      out.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, fmt::format("invalid region GeoJSON {}: {}", geojson.string(), e.what()));
  }
  return out;
}

}  // namespace treecarbon
