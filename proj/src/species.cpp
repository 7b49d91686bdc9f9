#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>
#include <json.hpp>

#include "treecarbon/csv.hpp"
#include "treecarbon/geotiff.hpp"
#include "treecarbon/ndvi.hpp"
#include "treecarbon/species.hpp"

namespace treecarbon {
namespace {

constexpr double kSpeciesFileNodata = 255.0;

}  // namespace

const SpeciesEntry& SpeciesTable::at(int label) const {
  if (label >= 0 && label < static_cast<int>(entries.size())) return entries[static_cast<std::size_t>(label)];
  fail(ErrorKind::Validation, fmt::format("species label {} is not in the species table", label));
}

bool SpeciesTable::contains(int label) const {
  return label >= 0 && label < static_cast<int>(entries.size());
}

int SpeciesTable::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return e.label;
  }
  return -1;
}

std::vector<std::string> SpeciesTable::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries) out.push_back(e.name);
  return out;
}

void SpeciesTable::validate() const {
  require(!entries.empty(), ErrorKind::Validation, "species table has no entries");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    require(e.label == static_cast<int>(i), ErrorKind::Validation,
            fmt::format("species labels must be contiguous from 0; found {} at position {}", e.label, i));
    require(e.rho > 0 && std::isfinite(e.rho), ErrorKind::Validation,
            fmt::format("species {} ({}) has non-positive density {}", e.label, e.name, e.rho));
    require(!e.name.empty(), ErrorKind::Validation, fmt::format("species {} has an empty name", e.label));
  }
}

SpeciesTable parse_species_table(const std::string& csv) {
  const CsvTable t = parse_csv(csv);
  const std::size_t cl = t.column("label"), cn = t.column("name"), cr = t.column("rho");
  require(!t.rows.empty(), ErrorKind::Validation, "species table has no entries");
  SpeciesTable table;
  std::map<int, std::size_t> seen;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const double label = parse_number(row[cl], i + 1, "label");
    require(label >= 0 && label == std::floor(label) && label < 1e6, ErrorKind::Validation,
            fmt::format("row {}: label '{}' is not a non-negative integer", i + 1, row[cl]));
    const double rho = parse_number(row[cr], i + 1, "rho");
    require(rho > 0 && std::isfinite(rho), ErrorKind::Validation,
            fmt::format("row {}: rho must be positive, got {}", i + 1, row[cr]));
    const auto [it, inserted] = seen.emplace(static_cast<int>(label), i + 1);
    require(inserted, ErrorKind::Validation,
            fmt::format("row {}: duplicate label {} (first on row {})", i + 1, it->first, it->second));
    table.entries.push_back({static_cast<int>(label), row[cn], rho});
  }
  std::sort(table.entries.begin(), table.entries.end(),
            [](const SpeciesEntry& a, const SpeciesEntry& b) { return a.label < b.label; });
  table.validate();
  return table;
}

SpeciesTable load_species_table(const std::filesystem::path& path) {
  return parse_species_table(read_text_file(path));
}

std::string species_table_csv(const SpeciesTable& table) {
  std::string out = "label,name,rho\n";
  for (const auto& e : table.entries) out += fmt::format("{},{},{}\n", e.label, e.name, e.rho);
  return out;
}

void validate_species_raster(const SpeciesRaster& raster, const SpeciesTable& table) {
  raster.validate();
  for (Index k = 0; k < raster.values().size(); ++k) {
    const std::int32_t v = raster.values().data()[k];
    if (raster.is_nodata(v) || v == kUnclassified) continue;
    require(table.contains(v), ErrorKind::Validation,
            fmt::format("species raster cell ({}, {}) holds label {} not in the species table",
                        k / raster.width(), k % raster.width(), v));
  }
}

std::filesystem::path sidecar_path(const std::filesystem::path& raster_path) {
  auto p = raster_path;
  p += ".json";
  return p;
}

void write_species_raster(const SpeciesRaster& raster, const SpeciesTable& table,
                          const std::filesystem::path& path) {
  validate_species_raster(raster, table);
  require(table.entries.size() < 255, ErrorKind::Parameter, "species rasters hold at most 255 classes");
  RasterGrid g(raster.width(), raster.height(), 1, raster.geo(), raster.crs_id(), kSpeciesFileNodata);
  for (Index k = 0; k < raster.values().size(); ++k) {
    const std::int32_t v = raster.values().data()[k];
    g.values().data()[k] = raster.is_nodata(v) || v < 0 ? static_cast<float>(kSpeciesFileNodata) : static_cast<float>(v);
  }
  g.set_band_names({"species"});
  GeoTiffWriteOptions opts;
  opts.sample_type = SampleType::UInt8;
  write_geotiff(g, path, opts);

  nlohmann::json classes = nlohmann::json::array();
  for (const auto& e : table.entries) classes.push_back({{"label", e.label}, {"name", e.name}});
  const nlohmann::json doc = {{"version", 1}, {"nodata", kSpeciesFileNodata}, {"classes", classes}};
  write_text_file(sidecar_path(path), doc.dump(2) + "\n");
}

SpeciesRaster read_species_raster(const std::filesystem::path& path, const SpeciesTable& table) {
  const auto side = sidecar_path(path);
  require(std::filesystem::exists(side), ErrorKind::Validation,
          fmt::format("species raster {} has no label sidecar {}", path.string(), side.string()));
  std::optional<double> sidecar_nodata;
  try {
    const auto doc = nlohmann::json::parse(read_text_file(side));
    require(doc.at("version").get<int>() == 1, ErrorKind::Validation, "unsupported species sidecar version");
    if (doc.contains("nodata") && !doc["nodata"].is_null()) sidecar_nodata = doc["nodata"].get<double>();
    for (const auto& c : doc.at("classes")) {
      const int label = c.at("label").get<int>();
      const auto name = c.at("name").get<std::string>();
      require(table.contains(label) && table.at(label).name == name, ErrorKind::Validation,
              fmt::format("sidecar class {} '{}' does not match the species table", label, name));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Validation, fmt::format("invalid species sidecar {}: {}", side.string(), e.what()));
  }

  const RasterGrid g = read_geotiff(path);
  require(g.bands() == 1, ErrorKind::Validation, "species raster must be single-band");
  const std::optional<double> nodata = g.nodata() ? g.nodata() : sidecar_nodata;
  SpeciesRaster out(g.width(), g.height(), 1, g.geo(), g.crs_id(), kUnclassified, kUnclassified);
  for (Index k = 0; k < g.values().size(); ++k) {
    const float v = g.values().data()[k];
    if (std::isnan(v) || (nodata && static_cast<double>(v) == *nodata)) continue;
    require(v == std::floor(v), ErrorKind::Validation,
            fmt::format("species raster value {} is not an integer label", v));
    out.values().data()[k] = static_cast<std::int32_t>(v);
  }
  validate_species_raster(out, table);
  return out;
}

std::optional<int> majority_label(std::span<const std::int32_t> values, std::int32_t nodata) {
  std::map<std::int32_t, std::size_t> counts;
  for (auto v : values) {
    if (v != nodata && v >= 0) ++counts[v];
  }
  std::optional<int> best;
  std::size_t best_n = 0;
  for (const auto& [label, n] : counts) {
    if (n > best_n) {
      best = label;
      best_n = n;
    }
  }
  return best;
}

std::optional<int> assign_species_majority(const CrownPolygon& crown, const SpeciesRaster& species) {
  std::vector<std::int32_t> values;
  for (Index k : cells_in_ring(species.geo(), species.width(), species.height(), crown.ring)) {
    const std::int32_t v = species.values().data()[k];
    values.push_back(species.is_nodata(v) ? kUnclassified : v);
  }
  return majority_label(values);
}

Eigen::VectorXd crown_features(const CrownPolygon& crown, const MultiSpectralImage& image) {
  const RasterGrid& g = image.grid();
  std::vector<Eigen::Matrix<double, 5, 1>> cols;
  for (Index k : cells_in_ring(g.geo(), g.width(), g.height(), crown.ring)) {
    const Index r = k / g.width(), c = k % g.width();
    if (image.pixel_is_nodata(r, c)) continue;
    Eigen::Matrix<double, 5, 1> v;
    for (Index b = 0; b < 4; ++b) v[b] = g(b, r, c);
    v[4] = ndvi_value(g(kNir, r, c), g(kRed, r, c));
    cols.push_back(v);
  }
  require(!cols.empty(), ErrorKind::InsufficientCoverage,
          fmt::format("crown {} covers no valid image pixels", crown.id));
  Eigen::Matrix<double, 5, Eigen::Dynamic> px(5, static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) px.col(static_cast<Index>(i)) = cols[i];
  const Eigen::Matrix<double, 5, 1> mean = px.rowwise().mean();
  const Eigen::Matrix<double, 5, 1> var =
      (px.colwise() - mean).array().square().rowwise().mean().matrix();

  Eigen::VectorXd f(kCrownFeatureCount);
  f.segment<4>(0) = mean.head<4>();
  f.segment<4>(4) = var.head<4>().cwiseSqrt();
  f[8] = mean[4];
  f[9] = crown.diameter_m;
  return f;
}

RandomForestModel species_train(const Eigen::MatrixXd& features, std::span<const int> labels,
                                const SpeciesTable& table, const ForestParams& params,
                                std::uint64_t seed, int workers) {
  table.validate();
  require(features.cols() == kCrownFeatureCount, ErrorKind::Parameter,
          fmt::format("crown features must have {} columns, got {}", kCrownFeatureCount, features.cols()));
  LabeledSamples data;
  data.features = features;
  data.labels.assign(labels.begin(), labels.end());
  data.classes = table.names();
  return rf_train(data, params, seed, workers);
}

SpeciesRaster rasterize_species(std::span<const CrownPolygon> crowns, const GeoTransform& geo,
                                Index width, Index height, int crs_id) {
  SpeciesRaster out(width, height, 1, geo, crs_id, kUnclassified, kUnclassified);
  out.set_band_names({"species"});
  std::vector<int> owner(static_cast<std::size_t>(width * height), 0);
  std::vector<std::string> clashes;
  for (const auto& c : crowns) {
    for (Index k : cells_in_ring(geo, width, height, c.ring)) {
      auto& o = owner[static_cast<std::size_t>(k)];
      if (o != 0) {
        const auto msg = fmt::format("{} and {}", o, c.id);
        if (std::find(clashes.begin(), clashes.end(), msg) == clashes.end()) clashes.push_back(msg);
        continue;
      }
      o = c.id;
      if (c.species) out.values().data()[k] = *c.species;
    }
  }
  if (!clashes.empty()) {
    std::string list;
    for (const auto& s : clashes) list += (list.empty() ? "" : "; ") + s;
    fail(ErrorKind::Overlap, "overlapping crowns: " + list);
  }
  return out;
}

std::vector<SurveyTree> load_tree_survey(const std::filesystem::path& path, const SpeciesTable& table) {
  const CsvTable t = read_csv(path);
  const std::size_t cx = t.column("x"), cy = t.column("y"), cs = t.column("species");
  std::vector<SurveyTree> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const int label = table.find(row[cs]);
    require(label >= 0, ErrorKind::Validation,
            fmt::format("row {}: species '{}' is not in the species table", i + 1, row[cs]));
    out.push_back({parse_number(row[cx], i + 1, "x"), parse_number(row[cy], i + 1, "y"), label});
  }
  return out;
}

}  // namespace treecarbon
