#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "treecarbon/crowns.hpp"
#include "treecarbon/learn.hpp"
#include "treecarbon/raster.hpp"

namespace treecarbon {

struct SpeciesEntry {
  int label = 0;
  std::string name;
  double rho = 0.0;  // wood dry-mass density, kg/m^3
};

/// Labels unique and contiguous from 0, rho > 0.
struct SpeciesTable {
  std::vector<SpeciesEntry> entries;  // sorted by label

  const SpeciesEntry& at(int label) const;  // validation error if absent
  bool contains(int label) const;
  int find(const std::string& name) const;  // -1 when absent
  std::vector<std::string> names() const;
  void validate() const;
};

/// CSV with header label,name,rho.
SpeciesTable parse_species_table(const std::string& csv);
SpeciesTable load_species_table(const std::filesystem::path& path);
std::string species_table_csv(const SpeciesTable& table);

/// Single-band class-id raster; nodata (-1 by default) marks unclassified.
using SpeciesRaster = LabelRaster;

inline constexpr std::int32_t kUnclassified = -1;

/// Checks every non-nodata value is a table label.
void validate_species_raster(const SpeciesRaster& raster, const SpeciesTable& table);

/// Sidecar JSON next to a species GeoTIFF: {"version":1, "nodata":-1,
/// "classes":[{"label":0,"name":"..."}...]}. Reading checks the classes
/// against the table by label and name.
std::filesystem::path sidecar_path(const std::filesystem::path& raster_path);
void write_species_raster(const SpeciesRaster& raster, const SpeciesTable& table,
                          const std::filesystem::path& path);
SpeciesRaster read_species_raster(const std::filesystem::path& path, const SpeciesTable& table);

/// Most frequent classified label among cells whose centers lie inside the
/// crown ring; ties go to the lower label; nullopt when none is classified.
std::optional<int> assign_species_majority(const CrownPolygon& crown, const SpeciesRaster& species);

/// Majority over an explicit list of cell values (nodata entries ignored).
std::optional<int> majority_label(std::span<const std::int32_t> values, std::int32_t nodata = kUnclassified);

inline constexpr Index kCrownFeatureCount = 10;

/// Mean R, G, B, NIR; population std R, G, B, NIR; mean NDVI; diameter.
Eigen::VectorXd crown_features(const CrownPolygon& crown, const MultiSpectralImage& image);

/// Crown classifier over crown_features vectors; classes are the table names.
RandomForestModel species_train(const Eigen::MatrixXd& features, std::span<const int> labels,
                                const SpeciesTable& table, const ForestParams& params,
                                std::uint64_t seed, int workers = 1);

/// Paints each crown's cells with its species; crowns without species are
/// left as nodata. Overlapping crowns are an error naming both ids.
SpeciesRaster rasterize_species(std::span<const CrownPolygon> crowns, const GeoTransform& geo,
                                Index width, Index height, int crs_id = 0);

/// Survey CSV with header x,y,species (species by table name).
struct SurveyTree {
  double x = 0.0;
  double y = 0.0;
  int species = 0;
};
std::vector<SurveyTree> load_tree_survey(const std::filesystem::path& path, const SpeciesTable& table);

}  // namespace treecarbon
