#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "treecarbon/allometry.hpp"
#include "treecarbon/carbon.hpp"
#include "treecarbon/crowns.hpp"
#include "treecarbon/learn.hpp"
#include "treecarbon/lidar.hpp"
#include "treecarbon/species.hpp"

namespace treecarbon {

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Configuration

struct InputPaths {
  std::filesystem::path imagery;
  std::filesystem::path species_table;
  std::optional<std::filesystem::path> lidar;
  std::optional<std::filesystem::path> species_raster;
  std::optional<std::filesystem::path> species_model;
  std::optional<std::filesystem::path> training_labels;
  std::optional<std::filesystem::path> mask_model;
  std::optional<std::filesystem::path> allometry;
  std::optional<std::filesystem::path> regions;
};

struct PipelineConfig {
  InputPaths inputs;
  std::filesystem::path output_dir;
  std::uint64_t seed = 1;
  int workers = 1;

  double ndvi_prefilter = 0.2;
  ForestParams forest;
  int texture_window = 5;

  double min_distance = 5.0;    // pixels
  double min_height = 2.0;      // m; canopy cells below it are not crown
  double smooth_sigma = 1.5;    // px, NDVI topography only
  double min_crown_area = 4.0;  // m^2
  Index tile_size = 512;
  Index overlap = 32;

  std::optional<double> chm_cell_size;  // defaults to the image pixel size
  std::size_t min_samples = 5;
  std::size_t n_min = 20;
  double h_floor = 0.0;
  double form_factor = 1.0;
  double density_cell = 10.0;  // m

  /// Ranges and path existence; configuration errors name the field.
  void validate() const;
};

/// Reads the JSON schema documented in the README. Relative paths resolve
/// against the config file's directory.
PipelineConfig parse_config(const std::string& json, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const PipelineConfig& config);

/// FNV-1a of the canonical config JSON without workers and output_dir.
std::uint64_t config_hash(const PipelineConfig& config);

// ---------------------------------------------------------------------------
// Synthetic scenes

struct Signature {
  double red = 0.0, green = 0.0, blue = 0.0, nir = 0.0;
};

struct SyntheticSpecies {
  int label = 0;
  double frequency = 0.0;
  double slope = 1.0;  // true H = slope * D + intercept
  double intercept = 0.0;
  Signature signature;
};

struct SyntheticSceneSpec {
  double extent_m = 150.0;
  double pixel_size = 0.6;
  Eigen::Vector2d origin{583000.0, 4507000.0};  // top-left corner
  int crs_id = 32618;
  std::size_t tree_count = 50;
  double d_min = 4.0;
  double d_max = 12.0;
  double gap_m = 1.5;  // clearance between crowns and from the border
  std::vector<SyntheticSpecies> species;
  Signature grass{0.08, 0.15, 0.06, 0.40};
  double noise = 0.01;      // per-band uniform noise everywhere
  double texture = 0.15;    // extra NIR noise inside crowns
  std::size_t label_points = 200;  // per class
  std::uint64_t seed = 1;
  int max_attempts = 10000;

  /// Four species on the default signatures with frequencies 0.25.
  static SyntheticSceneSpec standard(std::uint64_t seed, std::size_t trees = 50);
  void validate() const;
};

struct TruthTree {
  int id = 0;
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  int species = 0;
  double d_m = 0.0;
  double h_m = 0.0;
  double agb_kg = 0.0;
  double carbon_kg = 0.0;
};

struct SyntheticScene {
  MultiSpectralImage image;
  PointCloud cloud;
  SpeciesRaster species;
  std::vector<TruthTree> truth;
  std::vector<TrainingLabel> labels;

  double true_carbon_kg() const;
};

SyntheticScene generate_synthetic_scene(const SyntheticSceneSpec& spec, const SpeciesTable& table);

/// Writes imagery.tif, lidar.las, species.tif (+ sidecar), species_table.csv,
/// labels.csv, truth.csv and config.json (output under dir/out) and returns
/// the config path.
std::filesystem::path write_synthetic_scene(const SyntheticScene& scene, const SpeciesTable& table,
                                            const std::filesystem::path& dir, std::uint64_t seed);

std::string truth_csv(std::span<const TruthTree> truth, const SpeciesTable& table);

/// Table of the four default species and their wood densities.
SpeciesTable default_species_table();

// ---------------------------------------------------------------------------
// Stages

/// Tree / not-tree forest on the pixel feature stack, seeded from a stream
/// of `seed` reserved for the mask stage.
RandomForestModel train_mask_model(const MultiSpectralImage& image, std::span<const TrainingLabel> labels,
                                   const ForestParams& params, int texture_window, std::uint64_t seed,
                                   int workers = 1, std::size_t* skipped = nullptr);

/// CHM on the image grid when cell size matches the pixel size, else on a
/// grid covering the cloud.
RasterGrid chm_for_image(const PointCloud& cloud, const MultiSpectralImage& image,
                         std::optional<double> cell_size);

struct SegmentInput {
  RasterGrid topography;
  TreeMask mask;
  std::string source;  // "chm" or "ndvi"
};

/// CHM topography with the mask cut to canopy at least min_height tall when
/// a CHM is given, else NDVI smoothed by sigma.
SegmentInput segmentation_input(const MultiSpectralImage& image, const TreeMask& mask,
                                const RasterGrid* chm, double min_height, double sigma);

/// segmentation_input followed by segment_crowns with the config's
/// parameters; `source` receives the topography used.
Segmentation segment_scene(const MultiSpectralImage& image, const TreeMask& mask, const RasterGrid* chm,
                           const PipelineConfig& config, std::string* source = nullptr);

/// Species by raster majority vote.
void assign_species(std::vector<CrownPolygon>& crowns, const SpeciesRaster& raster);

/// Species by the crown classifier; crowns without valid pixels stay unclassified.
void predict_species(std::vector<CrownPolygon>& crowns, const MultiSpectralImage& image,
                     const RandomForestModel& model);

/// Crown features and labels for survey trees falling inside crowns.
LabeledSamples crown_training_set(std::span<const CrownPolygon> crowns, const MultiSpectralImage& image,
                                  std::span<const SurveyTree> survey, const SpeciesTable& table);

struct CalibrationResult {
  std::vector<CalibrationSample> samples;
  std::size_t insufficient = 0;  // crowns with too few CHM cells
};

CalibrationResult calibration_samples(std::span<const CrownPolygon> crowns, const RasterGrid& chm,
                                      std::size_t min_samples);

/// Allometric heights for classified crowns; returns per-crown flags.
std::map<int, std::vector<std::string>> apply_allometry(std::vector<CrownPolygon>& crowns,
                                                        const AllometrySet& models, double h_floor);

struct CarbonRun {
  std::vector<CrownOutcome> outcomes;
  std::vector<CarbonEstimate> estimates;
  std::size_t skipped = 0;
};

CarbonRun estimate_carbon(std::span<const CrownPolygon> crowns, const SpeciesTable& table,
                          double form_factor, const std::map<int, std::vector<std::string>>& flags = {});

/// RFC 7946 FeatureCollection of the estimated crowns.
void export_geojson(std::span<const CarbonEstimate> estimates, std::span<const CrownPolygon> crowns,
                    const SpeciesTable& table, int crs_id, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Full run

struct StageTiming {
  std::string name;
  double seconds = 0.0;
};

struct RunReport {
  std::string json;  // run_report.json content
  std::uint64_t hash = 0;
  double total_carbon_kg = 0.0;
  std::size_t crowns = 0;
  std::size_t estimated = 0;
  std::size_t skipped = 0;
  std::vector<StageTiming> timings;
};

/// Runs every stage, materialising artifacts under config.output_dir. A stage
/// failure writes FAILED into the output directory and rethrows with the
/// same kind and the message prefixed by "stage <name>: ".
RunReport run_pipeline(const PipelineConfig& config);

inline constexpr const char* kFailureMarker = "FAILED";

}  // namespace treecarbon
