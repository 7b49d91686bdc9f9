#include <cmath>

#include <fmt/format.h>
#include <json.hpp>

#include "treecarbon/csv.hpp"
#include "treecarbon/pipeline.hpp"

namespace treecarbon {
namespace {

using nlohmann::json;

void config_error(const std::string& field, const std::string& what) {
  fail(ErrorKind::Configuration, fmt::format("config {}: {}", field, what));
}

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> known) {
  if (!obj.is_object()) config_error(where, "expected an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) config_error(where.empty() ? key : where + "." + key, "unknown key");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key) || obj[key].is_null()) return;
  try {
    out = obj[key].get<T>();
  } catch (const json::exception&) {
    config_error(where + "." + key, "wrong type");
  }
}

std::filesystem::path resolve(const std::string& text, const std::filesystem::path& base) {
  std::filesystem::path p(text);
  return p.is_absolute() || base.empty() ? p : base / p;
}

void read_path(const json& obj, const char* key, std::optional<std::filesystem::path>& out,
               const std::filesystem::path& base) {
  if (!obj.contains(key) || obj[key].is_null()) return;
  if (!obj[key].is_string()) config_error(std::string("inputs.") + key, "expected a path string");
  out = resolve(obj[key].get<std::string>(), base);
}

json opt_path(const std::optional<std::filesystem::path>& p) {
  return p ? json(p->generic_string()) : json(nullptr);
}

void check_range(bool ok, const std::string& field, const std::string& rule) {
  if (!ok) config_error(field, rule);
}

void check_file(const std::filesystem::path& p, const std::string& field) {
  if (!std::filesystem::is_regular_file(p)) config_error(field, fmt::format("file '{}' does not exist", p.string()));
}

json body(const PipelineConfig& c, bool with_run_fields) {
  const auto& in = c.inputs;
  json j = {
      {"inputs",
       {{"imagery", in.imagery.generic_string()},
        {"species_table", in.species_table.generic_string()},
        {"lidar", opt_path(in.lidar)},
        {"species_raster", opt_path(in.species_raster)},
        {"species_model", opt_path(in.species_model)},
        {"training_labels", opt_path(in.training_labels)},
        {"mask_model", opt_path(in.mask_model)},
        {"allometry", opt_path(in.allometry)},
        {"regions", opt_path(in.regions)}}},
      {"seed", c.seed},
      {"ndvi", {{"prefilter", c.ndvi_prefilter}}},
      {"mask",
       {{"n_trees", c.forest.n_trees},
        {"max_depth", c.forest.max_depth},
        {"min_leaf", c.forest.min_leaf},
        {"features_per_split", c.forest.features_per_split},
        {"texture_window", c.texture_window}}},
      {"segmentation",
       {{"min_distance", c.min_distance},
        {"min_height", c.min_height},
        {"sigma", c.smooth_sigma},
        {"min_crown_area", c.min_crown_area},
        {"tile_size", c.tile_size},
        {"overlap", c.overlap}}},
      {"chm", {{"cell_size", c.chm_cell_size ? json(*c.chm_cell_size) : json(nullptr)}, {"min_samples", c.min_samples}}},
      {"allometry", {{"n_min", c.n_min}, {"h_floor", c.h_floor}}},
      {"carbon", {{"form_factor", c.form_factor}, {"density_cell", c.density_cell}}},
  };
  if (with_run_fields) {
    j["output_dir"] = c.output_dir.generic_string();
    j["workers"] = c.workers;
  }
  return j;
}

}  // namespace

void PipelineConfig::validate() const {
  check_file(inputs.imagery, "inputs.imagery");
  check_file(inputs.species_table, "inputs.species_table");
  const std::pair<const std::optional<std::filesystem::path>*, const char*> optional_inputs[] = {
      {&inputs.lidar, "inputs.lidar"},
      {&inputs.species_raster, "inputs.species_raster"},
      {&inputs.species_model, "inputs.species_model"},
      {&inputs.training_labels, "inputs.training_labels"},
      {&inputs.mask_model, "inputs.mask_model"},
      {&inputs.allometry, "inputs.allometry"},
      {&inputs.regions, "inputs.regions"},
  };
  for (const auto& [p, name] : optional_inputs) {
    if (*p) check_file(**p, name);
  }
  if (!inputs.training_labels && !inputs.mask_model) {
    config_error("inputs", "need training_labels to train the tree mask or a saved mask_model");
  }
  if (!inputs.species_raster && !inputs.species_model) {
    config_error("inputs", "need a species_raster or a saved species_model");
  }
  if (!inputs.lidar && !inputs.allometry) {
    config_error("inputs", "need lidar to calibrate allometry or saved allometry models");
  }
  check_range(!output_dir.empty(), "output_dir", "must be set");
  check_range(workers >= 1, "workers", "must be at least 1");
  check_range(std::isfinite(ndvi_prefilter) && ndvi_prefilter >= -1 && ndvi_prefilter <= 1, "ndvi.prefilter",
              "must lie in [-1, 1]");
  check_range(forest.n_trees >= 1, "mask.n_trees", "must be at least 1");
  check_range(forest.max_depth >= 1, "mask.max_depth", "must be at least 1");
  check_range(forest.min_leaf >= 1, "mask.min_leaf", "must be at least 1");
  check_range(forest.features_per_split >= 0 && forest.features_per_split <= kPixelFeatureCount,
              "mask.features_per_split", fmt::format("must lie in [0, {}]", kPixelFeatureCount));
  check_range(texture_window >= 3 && texture_window % 2 == 1, "mask.texture_window", "must be odd and at least 3");
  check_range(min_distance >= 0 && std::isfinite(min_distance), "segmentation.min_distance", "must be non-negative");
  check_range(min_height >= 0 && std::isfinite(min_height), "segmentation.min_height", "must be non-negative");
  check_range(smooth_sigma > 0 && std::isfinite(smooth_sigma), "segmentation.sigma", "must be positive");
  check_range(min_crown_area >= 0 && std::isfinite(min_crown_area), "segmentation.min_crown_area",
              "must be non-negative");
  check_range(tile_size >= 16, "segmentation.tile_size", "must be at least 16");
  check_range(overlap >= 0 && 2 * overlap < tile_size, "segmentation.overlap", "must lie in [0, tile_size / 2)");
  check_range(!chm_cell_size || (*chm_cell_size > 0 && std::isfinite(*chm_cell_size)), "chm.cell_size",
              "must be positive");
  check_range(min_samples >= 1, "chm.min_samples", "must be at least 1");
  check_range(n_min >= 2, "allometry.n_min", "must be at least 2");
  check_range(h_floor >= 0 && std::isfinite(h_floor), "allometry.h_floor", "must be non-negative");
  check_range(form_factor > 0 && form_factor <= 1, "carbon.form_factor", "must lie in (0, 1]");
  check_range(density_cell > 0 && std::isfinite(density_cell), "carbon.density_cell", "must be positive");
}

PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Configuration, fmt::format("config is not valid JSON: {}", e.what()));
  }
  check_keys(doc, "", {"inputs", "output_dir", "seed", "workers", "ndvi", "mask", "segmentation", "chm",
                       "allometry", "carbon"});
  PipelineConfig c;
  const json empty = json::object();
  auto section = [&](const char* key) -> const json& { return doc.contains(key) ? doc[key] : empty; };

  const json& in = section("inputs");
  check_keys(in, "inputs", {"imagery", "species_table", "lidar", "species_raster", "species_model",
                            "training_labels", "mask_model", "allometry", "regions"});
  for (const char* required : {"imagery", "species_table"}) {
    if (!in.contains(required) || !in[required].is_string()) config_error(std::string("inputs.") + required, "missing");
  }
  c.inputs.imagery = resolve(in["imagery"].get<std::string>(), base);
  c.inputs.species_table = resolve(in["species_table"].get<std::string>(), base);
  read_path(in, "lidar", c.inputs.lidar, base);
  read_path(in, "species_raster", c.inputs.species_raster, base);
  read_path(in, "species_model", c.inputs.species_model, base);
  read_path(in, "training_labels", c.inputs.training_labels, base);
  read_path(in, "mask_model", c.inputs.mask_model, base);
  read_path(in, "allometry", c.inputs.allometry, base);
  read_path(in, "regions", c.inputs.regions, base);

  if (!doc.contains("output_dir") || !doc["output_dir"].is_string()) config_error("output_dir", "missing");
  c.output_dir = resolve(doc["output_dir"].get<std::string>(), base);
  read(doc, "seed", c.seed, "");
  read(doc, "workers", c.workers, "");

  const json& ndvi = section("ndvi");
  check_keys(ndvi, "ndvi", {"prefilter"});
  read(ndvi, "prefilter", c.ndvi_prefilter, "ndvi");

  const json& mask = section("mask");
  check_keys(mask, "mask", {"n_trees", "max_depth", "min_leaf", "features_per_split", "texture_window"});
  read(mask, "n_trees", c.forest.n_trees, "mask");
  read(mask, "max_depth", c.forest.max_depth, "mask");
  read(mask, "min_leaf", c.forest.min_leaf, "mask");
  read(mask, "features_per_split", c.forest.features_per_split, "mask");
  read(mask, "texture_window", c.texture_window, "mask");

  const json& seg = section("segmentation");
  check_keys(seg, "segmentation", {"min_distance", "min_height", "sigma", "min_crown_area", "tile_size", "overlap"});
  read(seg, "min_distance", c.min_distance, "segmentation");
  read(seg, "min_height", c.min_height, "segmentation");
  read(seg, "sigma", c.smooth_sigma, "segmentation");
  read(seg, "min_crown_area", c.min_crown_area, "segmentation");
  read(seg, "tile_size", c.tile_size, "segmentation");
  read(seg, "overlap", c.overlap, "segmentation");

  const json& chm = section("chm");
  check_keys(chm, "chm", {"cell_size", "min_samples"});
  if (chm.contains("cell_size") && !chm["cell_size"].is_null()) {
    double v = 0;
    read(chm, "cell_size", v, "chm");
    c.chm_cell_size = v;
  }
  read(chm, "min_samples", c.min_samples, "chm");

  const json& allo = section("allometry");
  check_keys(allo, "allometry", {"n_min", "h_floor"});
  read(allo, "n_min", c.n_min, "allometry");
  read(allo, "h_floor", c.h_floor, "allometry");

  const json& carbon = section("carbon");
  check_keys(carbon, "carbon", {"form_factor", "density_cell"});
  read(carbon, "form_factor", c.form_factor, "carbon");
  read(carbon, "density_cell", c.density_cell, "carbon");
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    fail(ErrorKind::Configuration, fmt::format("config file '{}' does not exist", path.string()));
  }
  return parse_config(read_text_file(path), path.parent_path());
}

std::string config_to_json(const PipelineConfig& config) { return body(config, true).dump(2) + "\n"; }

std::uint64_t config_hash(const PipelineConfig& config) {
  const std::string text = body(config, false).dump();
  return fnv1a({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

}  // namespace treecarbon
