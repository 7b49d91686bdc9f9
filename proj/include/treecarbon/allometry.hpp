#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>

namespace treecarbon {

inline constexpr int kPooledSpecies = -1;

/// Linear crown-diameter to height model, H = slope * D + intercept.
struct AllometricModel {
  int species = kPooledSpecies;
  double slope = 0.0;
  double intercept = 0.0;
  std::size_t n = 0;
  double r2 = 0.0;
  double d_min = 0.0;
  double d_max = 0.0;
};

struct HeightPair {
  double d = 0.0;  // crown diameter, m
  double h = 0.0;  // height, m
};

/// Ordinary least squares on centred sums.
AllometricModel fit_allometry(std::span<const HeightPair> pairs, int species);

struct HeightEstimate {
  double height = 0.0;
  bool extrapolated = false;  // D outside the training range
  bool clamped = false;       // formula fell below h_floor
};

HeightEstimate estimate_height(const AllometricModel& model, double d, double h_floor = 0.0);

struct CalibrationSample {
  int species = 0;
  double d = 0.0;
  double h = 0.0;
};

struct AllometrySet {
  std::map<int, AllometricModel> per_species;
  std::optional<AllometricModel> pooled;
  std::size_t n_min = 20;

  /// The species model, else the pooled one (fallback set true). Calibration
  /// error when neither exists.
  const AllometricModel& model_for(int species, bool* fallback = nullptr) const;
};

/// Per-species fits for species with at least n_min samples and two distinct
/// diameters, plus a pooled fit over every sample.
AllometrySet fit_all_species(std::span<const CalibrationSample> samples, std::size_t n_min = 20);

// Versioned JSON: {"format":"treecarbon-allometry","version":1,"n_min":..,
// "models":[{species,slope,intercept,n,r2,d_range:[min,max]}...],"pooled":{...}|null}
inline constexpr int kAllometryFormatVersion = 1;
std::string allometry_to_json(const AllometrySet& set);
AllometrySet allometry_from_json(const std::string& text);
void save_allometry(const AllometrySet& set, const std::filesystem::path& path);
AllometrySet load_allometry(const std::filesystem::path& path);

}  // namespace treecarbon
