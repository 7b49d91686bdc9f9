#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>
#include <json.hpp>

#include "treecarbon/csv.hpp"
#include "treecarbon/geotiff.hpp"
#include "treecarbon/pipeline.hpp"
#include "treecarbon/random.hpp"

namespace treecarbon {
namespace {

constexpr std::uint8_t kClassHighVegetation = 5;

enum Stream : std::uint64_t { kPlacement = 1, kPixels = 2, kLabels = 3 };

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

SpeciesTable default_species_table() {
  SpeciesTable t;
  t.entries = {{0, "London plane", 560}, {1, "Honeylocust", 755}, {2, "Callery pear", 690}, {3, "Pin oak", 705}};
  return t;
}

SyntheticSceneSpec SyntheticSceneSpec::standard(std::uint64_t seed, std::size_t trees) {
  SyntheticSceneSpec s;
  s.seed = seed;
  s.tree_count = trees;
  s.species = {
      {0, 0.25, 1.2, 2.0, {0.05, 0.12, 0.04, 0.50}},
      {1, 0.25, 0.9, 3.0, {0.07, 0.14, 0.05, 0.42}},
      {2, 0.25, 1.0, 1.0, {0.04, 0.10, 0.05, 0.55}},
      {3, 0.25, 1.5, 0.0, {0.06, 0.11, 0.03, 0.60}},
  };
  return s;
}

void SyntheticSceneSpec::validate() const {
  require(extent_m > 0 && pixel_size > 0 && extent_m >= pixel_size, ErrorKind::Validation,
          "scene extent and pixel size must be positive");
  require(d_min > 0 && d_min <= d_max, ErrorKind::Validation,
          fmt::format("diameter range [{}, {}] must satisfy 0 < min <= max", d_min, d_max));
  require(gap_m >= 0 && noise >= 0 && texture >= 0, ErrorKind::Validation,
          "gap, noise and texture must be non-negative");
  require(!species.empty(), ErrorKind::Validation, "scene needs at least one species");
  double sum = 0.0;
  for (const auto& s : species) {
    require(s.frequency >= 0, ErrorKind::Validation, fmt::format("species {} has a negative frequency", s.label));
    require(s.slope * d_min + s.intercept > 0 && s.slope * d_max + s.intercept > 0, ErrorKind::Validation,
            fmt::format("species {} allometry gives non-positive heights", s.label));
    sum += s.frequency;
  }
  require(std::abs(sum - 1.0) <= 1e-9, ErrorKind::Validation,
          fmt::format("species frequencies sum to {}, not 1", sum));
  require(max_attempts >= 1, ErrorKind::Validation, "max_attempts must be at least 1");
}

double SyntheticScene::true_carbon_kg() const {
  std::vector<double> c;
  for (const auto& t : truth) c.push_back(t.carbon_kg);
  return compensated_sum(c);
}

SyntheticScene generate_synthetic_scene(const SyntheticSceneSpec& spec, const SpeciesTable& table) {
  spec.validate();
  table.validate();
  for (const auto& s : spec.species) table.at(s.label);

  const auto n = static_cast<Index>(std::ceil(spec.extent_m / spec.pixel_size - 1e-9));
  const GeoTransform geo{spec.origin.x(), spec.origin.y(), spec.pixel_size, spec.pixel_size};
  const double extent = static_cast<double>(n) * spec.pixel_size;
  const double border = spec.gap_m + 3.0 * spec.pixel_size;

  Rng place(derive_seed(spec.seed, kPlacement));
  std::vector<TruthTree> truth;
  for (std::size_t i = 0; i < spec.tree_count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < spec.max_attempts && !placed; ++attempt) {
      const double u = uniform01(place);
      std::size_t k = 0;
      for (double acc = spec.species[0].frequency; k + 1 < spec.species.size() && u >= acc;) {
        acc += spec.species[++k].frequency;
      }
      const auto& sp = spec.species[k];
      const double d = spec.d_min == spec.d_max ? spec.d_min : uniform(place, spec.d_min, spec.d_max);
      const double r = d / 2;
      if (2 * (r + border) > extent) continue;
      const Eigen::Vector2d offset(uniform(place, r + border, extent - r - border),
                                   uniform(place, r + border, extent - r - border));
      const Eigen::Vector2d center(spec.origin.x() + offset.x(), spec.origin.y() - offset.y());
      const bool clear = std::all_of(truth.begin(), truth.end(), [&](const TruthTree& t) {
        return (t.center - center).norm() >= r + t.d_m / 2 + spec.gap_m;
      });
      if (!clear) continue;
      TruthTree t;
      t.id = static_cast<int>(truth.size()) + 1;
      t.center = center;
      t.species = sp.label;
      t.d_m = d;
      t.h_m = sp.slope * d + sp.intercept;
      const auto split = carbon_from_agb(agb(d, t.h_m, table.at(sp.label).rho, 1.0));
      t.agb_kg = split.agb_kg;
      t.carbon_kg = split.carbon_kg;
      truth.push_back(t);
      placed = true;
    }
    require(placed, ErrorKind::Placement,
            fmt::format("could not place tree {} of {} without overlap in a {} m scene after {} attempts", i + 1,
                        spec.tree_count, spec.extent_m, spec.max_attempts));
  }

  Raster<std::int32_t> owner(n, n, 1, geo, spec.crs_id, std::nullopt, -1);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto& t = truth[i];
    const double r = t.d_m / 2;
    const Eigen::Vector2d lo = geo.map_to_pixel(t.center.x() - r, t.center.y() + r);
    const Eigen::Vector2d hi = geo.map_to_pixel(t.center.x() + r, t.center.y() - r);
    for (Index row = std::max<Index>(0, static_cast<Index>(lo.y())); row <= std::min(n - 1, static_cast<Index>(hi.y()));
         ++row) {
      for (Index col = std::max<Index>(0, static_cast<Index>(lo.x()));
           col <= std::min(n - 1, static_cast<Index>(hi.x())); ++col) {
        if ((geo.cell_center(col, row) - t.center).squaredNorm() <= r * r) owner.at(row, col) = static_cast<std::int32_t>(i);
      }
    }
  }

  std::vector<const Signature*> signature(table.entries.size(), nullptr);
  for (const auto& s : spec.species) signature[static_cast<std::size_t>(s.label)] = &s.signature;

  RasterGrid img(n, n, 4, geo, spec.crs_id);
  img.set_band_names({"red", "green", "blue", "nir"});
  SpeciesRaster species(n, n, 1, geo, spec.crs_id, kUnclassified, kUnclassified);
  species.set_band_names({"species"});
  Rng px(derive_seed(spec.seed, kPixels));
  std::vector<LidarPoint> points;
  points.reserve(static_cast<std::size_t>(n * n) * 2);
  for (Index row = 0; row < n; ++row) {
    for (Index col = 0; col < n; ++col) {
      const std::int32_t o = owner.at(row, col);
      const Signature& s = o < 0 ? spec.grass : *signature[static_cast<std::size_t>(truth[o].species)];
      const double base[4] = {s.red, s.green, s.blue, s.nir};
      for (Index b = 0; b < 4; ++b) {
        double v = base[b] + spec.noise * uniform(px, -1, 1);
        if (b == kNir && o >= 0) v += spec.texture * uniform(px, -1, 1);
        img(b, row, col) = static_cast<float>(clamp01(v));
      }
      const Eigen::Vector2d c = geo.cell_center(col, row);
      if (o < 0) {
        points.push_back({{c.x(), c.y(), 0.0}, 1, 1, kClassGround});
      } else {
        species.at(row, col) = truth[o].species;
        points.push_back({{c.x(), c.y(), truth[o].h_m}, 1, 2, kClassHighVegetation});
        points.push_back({{c.x(), c.y(), 0.0}, 2, 2, kClassGround});
      }
    }
  }

  Rng lr(derive_seed(spec.seed, kLabels));
  std::vector<TrainingLabel> labels;
  if (!truth.empty()) {
    for (std::size_t i = 0; i < spec.label_points; ++i) {
      const auto& t = truth[uniform_index(lr, truth.size())];
      const double a = uniform(lr, 0, 2 * std::numbers::pi), rr = 0.7 * t.d_m / 2 * std::sqrt(uniform01(lr));
      labels.push_back({t.center.x() + rr * std::cos(a), t.center.y() + rr * std::sin(a), kTreeClass});
    }
  }
  for (std::size_t i = 0, tries = 0; i < spec.label_points && tries < 100 * spec.label_points; ++tries) {
    const Eigen::Vector2d p(spec.origin.x() + uniform(lr, border, extent - border),
                            spec.origin.y() - uniform(lr, border, extent - border));
    const bool grass = std::all_of(truth.begin(), truth.end(), [&](const TruthTree& t) {
      return (t.center - p).norm() > t.d_m / 2 + 2 * spec.pixel_size;
    });
    if (!grass) continue;
    labels.push_back({p.x(), p.y(), kNotTreeClass});
    ++i;
  }

  return {MultiSpectralImage(std::move(img)), make_point_cloud(points), std::move(species), std::move(truth),
          std::move(labels)};
}

std::string truth_csv(std::span<const TruthTree> truth, const SpeciesTable& table) {
  std::string out = "id,x,y,species,D_m,H_m,agb_kg,carbon_kg\n";
  for (const auto& t : truth) {
    out += fmt::format("{},{:.17g},{:.17g},{},{:.17g},{:.17g},{:.17g},{:.17g}\n", t.id, t.center.x(), t.center.y(),
                       table.at(t.species).name, t.d_m, t.h_m, t.agb_kg, t.carbon_kg);
  }
  return out;
}

std::filesystem::path write_synthetic_scene(const SyntheticScene& scene, const SpeciesTable& table,
                                            const std::filesystem::path& dir, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  write_geotiff(scene.image.grid(), dir / "imagery.tif");
  write_las(scene.cloud, dir / "lidar.las");
  write_species_raster(scene.species, table, dir / "species.tif");
  write_text_file(dir / "species_table.csv", species_table_csv(table));
  write_text_file(dir / "truth.csv", truth_csv(scene.truth, table));

  std::string labels = "x,y,class\n";
  for (const auto& l : scene.labels) labels += fmt::format("{:.17g},{:.17g},{}\n", l.x, l.y, l.label);
  write_text_file(dir / "labels.csv", labels);

  const nlohmann::json config = {
      {"inputs",
       {{"imagery", "imagery.tif"},
        {"species_table", "species_table.csv"},
        {"lidar", "lidar.las"},
        {"species_raster", "species.tif"},
        {"training_labels", "labels.csv"}}},
      {"output_dir", "out"},
      {"seed", seed},
      {"allometry", {{"n_min", 5}}},
  };
  const auto path = dir / "config.json";
  write_text_file(path, config.dump(2) + "\n");
  return path;
}

}  // namespace treecarbon
