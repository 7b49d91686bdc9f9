#include "treecarbon/allometry.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "treecarbon/csv.hpp"
#include "treecarbon/error.hpp"

namespace treecarbon {

AllometricModel fit_allometry(std::span<const HeightPair> pairs, int species) {
  require(pairs.size() >= 2, ErrorKind::InsufficientData,
          fmt::format("allometric fit needs at least 2 pairs, got {}", pairs.size()));
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    require(pairs[i].d > 0 && std::isfinite(pairs[i].d), ErrorKind::Parameter,
            fmt::format("pair {}: diameter must be positive, got {}", i, pairs[i].d));
    require(pairs[i].h >= 0 && std::isfinite(pairs[i].h), ErrorKind::Parameter,
            fmt::format("pair {}: height must be non-negative, got {}", i, pairs[i].h));
  }
  const double n = static_cast<double>(pairs.size());
  double md = 0, mh = 0;
  for (const auto& p : pairs) {
    md += p.d;
    mh += p.h;
  }
  md /= n;
  mh /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (const auto& p : pairs) {
    const double dx = p.d - md, dy = p.h - mh;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  const auto [lo, hi] = std::minmax_element(pairs.begin(), pairs.end(),
                                            [](const HeightPair& a, const HeightPair& b) { return a.d < b.d; });
  require(lo->d < hi->d && sxx > 0, ErrorKind::SingularFit,
          fmt::format("all {} diameters are identical ({}); slope is undetermined", pairs.size(), lo->d));

  AllometricModel m;
  m.species = species;
  m.slope = sxy / sxx;
  m.intercept = mh - m.slope * md;
  m.n = pairs.size();
  m.d_min = lo->d;
  m.d_max = hi->d;
  if (syy == 0) {
    m.r2 = 1.0;
  } else {
    double ss_res = 0;
    for (const auto& p : pairs) {
      const double r = p.h - (m.slope * p.d + m.intercept);
      ss_res += r * r;
    }
    m.r2 = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
  }
  return m;
}

HeightEstimate estimate_height(const AllometricModel& model, double d, double h_floor) {
  require(d > 0 && std::isfinite(d), ErrorKind::Parameter,
          fmt::format("crown diameter must be positive, got {}", d));
  HeightEstimate e;
  const double h = model.slope * d + model.intercept;
  e.clamped = h < h_floor;
  e.height = e.clamped ? h_floor : h;
  e.extrapolated = d < model.d_min || d > model.d_max;
  return e;
}

const AllometricModel& AllometrySet::model_for(int species, bool* fallback) const {
  if (const auto it = per_species.find(species); it != per_species.end()) {
    if (fallback) *fallback = false;
    return it->second;
  }
  require(pooled.has_value(), ErrorKind::Calibration,
          fmt::format("no allometric model for species {} and no pooled fallback", species));
  if (fallback) *fallback = true;
  return *pooled;
}

AllometrySet fit_all_species(std::span<const CalibrationSample> samples, std::size_t n_min) {
  AllometrySet set;
  set.n_min = n_min;
  std::map<int, std::vector<HeightPair>> groups;
  std::vector<HeightPair> all;
  for (const auto& s : samples) {
    groups[s.species].push_back({s.d, s.h});
    all.push_back({s.d, s.h});
  }
  for (const auto& [species, pairs] : groups) {
    if (pairs.size() < n_min) continue;
    try {
      set.per_species.emplace(species, fit_allometry(pairs, species));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::SingularFit) throw;
    }
  }
  try {
    set.pooled = fit_allometry(all, kPooledSpecies);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::SingularFit && e.kind() != ErrorKind::InsufficientData) throw;
  }
  require(set.pooled || !set.per_species.empty(), ErrorKind::Calibration,
          fmt::format("no species reaches {} calibration samples and a pooled fit over {} samples is impossible",
                      n_min, samples.size()));
  return set;
}

namespace {

nlohmann::json model_json(const AllometricModel& m) {
  return {{"species", m.species}, {"slope", m.slope}, {"intercept", m.intercept}, {"n", m.n},
          {"r2", m.r2},           {"d_range", {m.d_min, m.d_max}}};
}

AllometricModel model_from(const nlohmann::json& j) {
  AllometricModel m;
  m.species = j.at("species").get<int>();
  m.slope = j.at("slope").get<double>();
  m.intercept = j.at("intercept").get<double>();
  m.n = j.at("n").get<std::size_t>();
  m.r2 = j.at("r2").get<double>();
  m.d_min = j.at("d_range").at(0).get<double>();
  m.d_max = j.at("d_range").at(1).get<double>();
  require(std::isfinite(m.slope) && std::isfinite(m.intercept) && m.n >= 2 && m.d_min <= m.d_max,
          ErrorKind::Deserialization, fmt::format("invalid allometric model for species {}", m.species));
  return m;
}

}  // namespace

std::string allometry_to_json(const AllometrySet& set) {
  nlohmann::json models = nlohmann::json::array();
  for (const auto& [species, m] : set.per_species) models.push_back(model_json(m));
  const nlohmann::json doc = {{"format", "treecarbon-allometry"},
                              {"version", kAllometryFormatVersion},
                              {"n_min", set.n_min},
                              {"models", models},
                              {"pooled", set.pooled ? model_json(*set.pooled) : nlohmann::json(nullptr)}};
  return doc.dump(2) + "\n";
}

AllometrySet allometry_from_json(const std::string& text) {
  AllometrySet set;
  try {
    const auto doc = nlohmann::json::parse(text);
    require(doc.at("format") == "treecarbon-allometry", ErrorKind::Deserialization,
            "not an allometry model document");
    const int version = doc.at("version").get<int>();
    require(version == kAllometryFormatVersion, ErrorKind::Deserialization,
            fmt::format("unsupported allometry format version {}", version));
    set.n_min = doc.at("n_min").get<std::size_t>();
    for (const auto& j : doc.at("models")) {
      const AllometricModel m = model_from(j);
      require(set.per_species.emplace(m.species, m).second, ErrorKind::Deserialization,
              fmt::format("duplicate allometric model for species {}", m.species));
    }
    if (!doc.at("pooled").is_null()) set.pooled = model_from(doc["pooled"]);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Deserialization, fmt::format("invalid allometry JSON: {}", e.what()));
  }
  return set;
}

void save_allometry(const AllometrySet& set, const std::filesystem::path& path) {
  write_text_file(path, allometry_to_json(set));
}

AllometrySet load_allometry(const std::filesystem::path& path) {
  return allometry_from_json(read_text_file(path));
}

}  // namespace treecarbon
