#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "treecarbon/crowns.hpp"
#include "treecarbon/raster.hpp"
#include "treecarbon/species.hpp"

namespace treecarbon {

inline constexpr double kBelowGroundRatio = 0.3;
inline constexpr double kCarbonFraction = 0.5;

/// Above-ground biomass in kg: F * rho * (pi D^2 / 4) * H.
double agb(double d_m, double h_m, double rho, double form_factor = 1.0);

struct BiomassSplit {
  double agb_kg = 0.0;
  double bgb_kg = 0.0;
  double total_biomass_kg = 0.0;
  double carbon_kg = 0.0;
};

/// bgb = 0.3 agb, total = agb + bgb, carbon = 0.5 total (= 0.65 agb).
BiomassSplit carbon_from_agb(double agb_kg);

struct CarbonEstimate {
  int crown_id = 0;
  int species = 0;
  double form_factor = 1.0;
  double rho = 0.0;
  double d_m = 0.0;
  double h_m = 0.0;
  double agb_kg = 0.0;
  double bgb_kg = 0.0;
  double total_biomass_kg = 0.0;
  double carbon_kg = 0.0;
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  std::vector<std::string> flags;
};

struct SkipRecord {
  int crown_id = 0;
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  std::string reason;
};

using CrownOutcome = std::variant<CarbonEstimate, SkipRecord>;

/// Crowns without species become a skip record ("unclassified"); a species
/// absent from the table is a validation error; a missing height is a
/// parameter error.
CrownOutcome estimate_crown(const CrownPolygon& crown, const SpeciesTable& table, double form_factor = 1.0);

/// Neumaier-compensated sum.
double compensated_sum(std::span<const double> values);

struct Region {
  std::string name;
  std::vector<Eigen::Vector2d> ring;
};

struct CarbonTotals {
  std::string name;
  std::size_t count = 0;
  double agb_kg = 0.0;
  double carbon_kg = 0.0;

  double carbon_t() const { return carbon_kg / 1000.0; }
};

struct CarbonSummary {
  std::vector<CarbonTotals> regions;  // input region order
  CarbonTotals outside{"outside"};    // crowns in no region (all crowns when there are none)
  CarbonTotals total{"total"};
  std::size_t estimated = 0;
  std::size_t skipped = 0;
};

/// Sums per region by crown centroid. Records are ordered by crown id first,
/// so totals do not depend on input order. Overlapping regions are an
/// ambiguity error.
CarbonSummary aggregate(std::span<const CarbonEstimate> estimates, std::span<const Region> regions = {},
                        std::size_t skipped = 0);

/// Carbon in kg/m^2: each crown's carbon spread evenly over the cells whose
/// centers lie inside its ring (its centroid cell when there are none).
RasterGrid carbon_density_raster(std::span<const CarbonEstimate> estimates,
                                 std::span<const CrownPolygon> crowns, const GeoTransform& geo,
                                 Index width, Index height, int crs_id = 0);

/// Same, on a grid of the given cell size snapped to multiples of it and
/// covering every crown. No crowns gives a 1x1 all-NaN raster.
RasterGrid carbon_density_raster(std::span<const CarbonEstimate> estimates,
                                 std::span<const CrownPolygon> crowns, double cell_size, int crs_id = 0);

/// Per-tree CSV: id,centroid_x,centroid_y,species,D_m,H_m,agb_kg,carbon_kg,flags.
/// Skipped crowns appear with empty numeric fields and a "skipped:<reason>"
/// flag. Flags are '|'-separated.
std::string trees_csv(std::span<const CrownOutcome> outcomes, const SpeciesTable& table);
std::vector<CrownOutcome> parse_trees_csv(const std::string& text, const SpeciesTable& table);

std::string summary_json(const CarbonSummary& summary);

/// GeoJSON FeatureCollection, one Feature per estimated crown with
/// id, species, D_m, H_m, agb_kg, carbon_kg, flags.
std::string trees_geojson(std::span<const CarbonEstimate> estimates, std::span<const CrownPolygon> crowns,
                          const SpeciesTable& table, int crs_id);

std::vector<Region> load_regions(const std::filesystem::path& geojson);

}  // namespace treecarbon
