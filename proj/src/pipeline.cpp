#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>

#include <fmt/format.h>
#include <json.hpp>

#include "treecarbon/csv.hpp"
#include "treecarbon/geotiff.hpp"
#include "treecarbon/ndvi.hpp"
#include "treecarbon/pipeline.hpp"
#include "treecarbon/random.hpp"

namespace treecarbon {
namespace {

constexpr std::uint64_t kMaskStream = 11;

std::string hex(std::uint64_t v) { return fmt::format("{:016x}", v); }

std::uint64_t file_hash(const std::filesystem::path& path) { return fnv1a(read_file_bytes(path)); }

void write_mask(const TreeMask& mask, const std::filesystem::path& path) {
  RasterGrid g = cast_raster<float>(mask);
  g.set_band_names({"tree_mask"});
  GeoTiffWriteOptions opts;
  opts.sample_type = SampleType::UInt8;
  write_geotiff(g, path, opts);
}

void write_labels(const SegmentLabels& labels, const std::filesystem::path& path) {
  RasterGrid g = cast_raster<float>(labels);
  g.set_nodata(std::nullopt);
  g.set_band_names({"crown_id"});
  write_geotiff(g, path);
}

class Runner {
 public:
  explicit Runner(const PipelineConfig& config) : config_(config) {}

  template <typename Fn>
  void stage(const std::string& name, Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    try {
      fn();
    } catch (const Error& e) {
      mark_failed(name, e.what());
      throw Error(e.kind(), fmt::format("stage {}: {}", name, e.what()));
    } catch (const std::exception& e) {
      mark_failed(name, e.what());
      throw Error(ErrorKind::Stage, fmt::format("stage {}: {}", name, e.what()));
    }
    const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;
    timings.push_back({name, took.count()});
  }

  void artifact(const std::string& name) {
    artifacts[name] = hex(file_hash(config_.output_dir / name));
  }

  std::vector<StageTiming> timings;
  nlohmann::json artifacts = nlohmann::json::object();

 private:
  void mark_failed(const std::string& stage, const std::string& message) {
    std::error_code ec;
    std::filesystem::create_directories(config_.output_dir, ec);
    std::ofstream(config_.output_dir / kFailureMarker) << "stage " << stage << ": " << message << "\n";
  }

  const PipelineConfig& config_;
};

}  // namespace

RandomForestModel train_mask_model(const MultiSpectralImage& image, std::span<const TrainingLabel> labels,
                                   const ForestParams& params, int texture_window, std::uint64_t seed,
                                   int workers, std::size_t* skipped) {
  const FeatureStack stack = extract_features(image, texture_window);
  const LabeledSamples data = sample_features(stack, labels, {kTreeClass, kNotTreeClass}, skipped);
  RandomForestModel model = rf_train(data, params, derive_seed(seed, kMaskStream), workers);
  model.feature_window = texture_window;
  return model;
}

RasterGrid chm_for_image(const PointCloud& cloud, const MultiSpectralImage& image, std::optional<double> cell_size) {
  const GeoTransform& geo = image.geo();
  if (!cell_size || (*cell_size == geo.pixel_size_x && *cell_size == geo.pixel_size_y)) {
    return build_chm(cloud, GridSpec{geo, image.width(), image.height(), image.grid().crs_id()});
  }
  RasterGrid chm = build_chm(cloud, *cell_size);
  chm.set_crs_id(image.grid().crs_id());
  return chm;
}

SegmentInput segmentation_input(const MultiSpectralImage& image, const TreeMask& mask, const RasterGrid* chm,
                                double min_height, double sigma) {
  SegmentInput in{RasterGrid(), mask, ""};
  const bool aligned = chm && same_grid(*chm, mask);
  if (chm && aligned) {
    in.topography = *chm;
    in.source = "chm";
    for (Index k = 0; k < in.mask.values().size(); ++k) {
      const float h = chm->values().data()[k];
      if (!(h >= min_height)) in.mask.values().data()[k] = 0;
    }
  } else if (chm) {
    RasterGrid topo(image.width(), image.height(), 1, image.geo(), image.grid().crs_id(),
                    std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<float>::quiet_NaN());
    for (Index r = 0; r < topo.height(); ++r) {
      for (Index c = 0; c < topo.width(); ++c) {
        const Eigen::Vector2d p = image.geo().cell_center(c, r);
        const Eigen::Vector2d q = chm->geo().map_to_pixel(p.x(), p.y());
        const auto cr = static_cast<Index>(std::floor(q.y())), cc = static_cast<Index>(std::floor(q.x()));
        if (chm->contains(cr, cc)) topo.at(r, c) = chm->at(cr, cc);
        if (!(topo.at(r, c) >= min_height)) in.mask.at(r, c) = 0;
      }
    }
    in.topography = std::move(topo);
    in.source = "chm";
  } else {
    in.topography = gaussian_smooth(compute_ndvi(image), sigma);
    in.source = "ndvi";
  }
  return in;
}

Segmentation segment_scene(const MultiSpectralImage& image, const TreeMask& mask, const RasterGrid* chm,
                           const PipelineConfig& config, std::string* source) {
  const SegmentInput in = segmentation_input(image, mask, chm, config.min_height, config.smooth_sigma);
  SegmentParams p;
  p.min_distance = config.min_distance;
  p.min_height = in.source == "chm" ? config.min_height : 0.0;
  p.min_crown_area = config.min_crown_area;
  p.tile_size = config.tile_size;
  p.overlap = config.overlap;
  p.workers = config.workers;
  if (source) *source = in.source;
  return segment_crowns(in.topography, in.mask, p);
}

void assign_species(std::vector<CrownPolygon>& crowns, const SpeciesRaster& raster) {
  for (auto& c : crowns) c.species = assign_species_majority(c, raster);
}

void predict_species(std::vector<CrownPolygon>& crowns, const MultiSpectralImage& image,
                     const RandomForestModel& model) {
  require(model.n_features == kCrownFeatureCount, ErrorKind::Parameter,
          fmt::format("species model expects {} features, crowns have {}", model.n_features, kCrownFeatureCount));
  for (auto& c : crowns) {
    c.species.reset();
    Eigen::VectorXd f;
    try {
      f = crown_features(c, image);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::InsufficientCoverage) throw;
      continue;
    }
    c.species = rf_predict(model, {f.data(), static_cast<std::size_t>(f.size())}).label;
  }
}

LabeledSamples crown_training_set(std::span<const CrownPolygon> crowns, const MultiSpectralImage& image,
                                  std::span<const SurveyTree> survey, const SpeciesTable& table) {
  std::vector<Eigen::VectorXd> rows;
  LabeledSamples out;
  out.classes = table.names();
  for (const auto& t : survey) {
    for (const auto& c : crowns) {
      if (!point_in_ring({t.x, t.y}, c.ring)) continue;
      try {
        rows.push_back(crown_features(c, image));
        out.labels.push_back(t.species);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::InsufficientCoverage) throw;
      }
      break;
    }
  }
  require(!rows.empty(), ErrorKind::InsufficientData, "no survey tree falls inside a crown");
  out.features.resize(static_cast<Index>(rows.size()), kCrownFeatureCount);
  for (std::size_t i = 0; i < rows.size(); ++i) out.features.row(static_cast<Index>(i)) = rows[i].transpose();
  return out;
}

CalibrationResult calibration_samples(std::span<const CrownPolygon> crowns, const RasterGrid& chm,
                                      std::size_t min_samples) {
  CalibrationResult out;
  for (const auto& c : crowns) {
    if (!c.species) continue;
    try {
      out.samples.push_back({*c.species, c.diameter_m, sample_mean_height(chm, c.ring, min_samples)});
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::InsufficientCoverage) throw;
      ++out.insufficient;
    }
  }
  return out;
}

std::map<int, std::vector<std::string>> apply_allometry(std::vector<CrownPolygon>& crowns,
                                                        const AllometrySet& models, double h_floor) {
  std::map<int, std::vector<std::string>> flags;
  for (auto& c : crowns) {
    c.height_m.reset();
    if (!c.species) continue;
    bool fallback = false;
    const auto& model = models.model_for(*c.species, &fallback);
    const HeightEstimate h = estimate_height(model, c.diameter_m, h_floor);
    c.height_m = h.height;
    auto& f = flags[c.id];
    if (fallback) f.push_back("pooled-allometry");
    if (h.extrapolated) f.push_back("extrapolated");
    if (h.clamped) f.push_back("clamped");
  }
  return flags;
}

CarbonRun estimate_carbon(std::span<const CrownPolygon> crowns, const SpeciesTable& table, double form_factor,
                          const std::map<int, std::vector<std::string>>& flags) {
  CarbonRun run;
  for (const auto& c : crowns) {
    CrownOutcome o = estimate_crown(c, table, form_factor);
    if (auto* e = std::get_if<CarbonEstimate>(&o)) {
      if (const auto it = flags.find(c.id); it != flags.end()) e->flags = it->second;
      run.estimates.push_back(*e);
    } else {
      ++run.skipped;
    }
    run.outcomes.push_back(std::move(o));
  }
  return run;
}

void export_geojson(std::span<const CarbonEstimate> estimates, std::span<const CrownPolygon> crowns,
                    const SpeciesTable& table, int crs_id, const std::filesystem::path& path) {
  write_text_file(path, trees_geojson(estimates, crowns, table, crs_id));
}

RunReport run_pipeline(const PipelineConfig& config) {
  config.validate();
  const auto& out = config.output_dir;
  std::filesystem::create_directories(out);
  std::filesystem::remove(out / kFailureMarker);
  Runner run(config);

  SpeciesTable table;
  std::optional<MultiSpectralImage> image;
  TreeMask mask;
  std::optional<RasterGrid> chm;
  Segmentation seg;
  std::string topography;
  AllometrySet models;
  CalibrationResult calibration;
  std::size_t label_skipped = 0;
  std::map<int, std::vector<std::string>> flags;
  CarbonRun carbon;
  CarbonSummary summary;

  run.stage("inputs", [&] {
    table = load_species_table(config.inputs.species_table);
    image = read_multispectral(config.inputs.imagery);
  });

  run.stage("ndvi", [&] {
    write_geotiff(compute_ndvi(*image), out / "ndvi.tif");
    run.artifact("ndvi.tif");
  });

  run.stage("mask", [&] {
    RandomForestModel model;
    if (config.inputs.training_labels) {
      const auto labels = load_training_labels(*config.inputs.training_labels);
      model = train_mask_model(*image, labels, config.forest, config.texture_window, config.seed, config.workers,
                               &label_skipped);
      save_model(model, out / "mask_model.tcrf");
      run.artifact("mask_model.tcrf");
    } else {
      model = load_model(*config.inputs.mask_model);
    }
    mask = build_tree_mask(*image, model, config.ndvi_prefilter, config.workers);
    write_mask(mask, out / "tree_mask.tif");
    run.artifact("tree_mask.tif");
  });

  if (config.inputs.lidar) {
    run.stage("chm", [&] {
      chm = chm_for_image(read_las(*config.inputs.lidar), *image, config.chm_cell_size);
      write_geotiff(*chm, out / "chm.tif");
      run.artifact("chm.tif");
    });
  }

  run.stage("segment", [&] {
    seg = segment_scene(*image, mask, chm ? &*chm : nullptr, config, &topography);
    write_labels(seg.labels, out / "segments.tif");
    write_crowns(seg.crowns, image->grid().crs_id(), out / "crowns.geojson");
    run.artifact("segments.tif");
    run.artifact("crowns.geojson");
  });

  run.stage("species", [&] {
    if (config.inputs.species_raster) {
      assign_species(seg.crowns, read_species_raster(*config.inputs.species_raster, table));
    } else {
      const RandomForestModel model = load_model(*config.inputs.species_model);
      require(model.classes == table.names(), ErrorKind::Validation,
              "species model classes do not match the species table");
      predict_species(seg.crowns, *image, model);
    }
  });

  run.stage("allometry", [&] {
    if (chm) {
      calibration = calibration_samples(seg.crowns, *chm, config.min_samples);
      models = fit_all_species(calibration.samples, config.n_min);
      save_allometry(models, out / "allometry.json");
      run.artifact("allometry.json");
    } else {
      models = load_allometry(*config.inputs.allometry);
    }
  });

  run.stage("height", [&] {
    flags = apply_allometry(seg.crowns, models, config.h_floor);
    write_crowns(seg.crowns, image->grid().crs_id(), out / "crowns_attributed.geojson");
    run.artifact("crowns_attributed.geojson");
  });

  run.stage("carbon", [&] {
    carbon = estimate_carbon(seg.crowns, table, config.form_factor, flags);
    write_text_file(out / "trees.csv", trees_csv(carbon.outcomes, table));
    std::vector<Region> regions;
    if (config.inputs.regions) regions = load_regions(*config.inputs.regions);
    summary = aggregate(carbon.estimates, regions, carbon.skipped);
    write_text_file(out / "summary.json", summary_json(summary));
    write_geotiff(carbon_density_raster(carbon.estimates, seg.crowns, config.density_cell, image->grid().crs_id()),
                  out / "carbon_density.tif");
    run.artifact("trees.csv");
    run.artifact("summary.json");
    run.artifact("carbon_density.tif");
  });

  run.stage("export", [&] {
    export_geojson(carbon.estimates, seg.crowns, table, image->grid().crs_id(), out / "trees.geojson");
    run.artifact("trees.geojson");
  });

  std::map<std::string, std::size_t> skips;
  for (const auto& o : carbon.outcomes) {
    if (const auto* s = std::get_if<SkipRecord>(&o)) ++skips[s->reason];
  }
  nlohmann::json fallback = nlohmann::json::array();
  for (const auto& e : table.entries) {
    if (!models.per_species.count(e.label)) fallback.push_back(e.label);
  }
  const nlohmann::json deterministic = {
      {"tool", "treecarbon"},
      {"version", kVersion},
      {"config_hash", hex(config_hash(config))},
      {"seed", config.seed},
      {"topography", topography},
      {"counts",
       {{"crowns", seg.crowns.size()},
        {"estimated", carbon.estimates.size()},
        {"skipped", skips},
        {"mask_labels_skipped", label_skipped},
        {"calibration_samples", calibration.samples.size()},
        {"calibration_insufficient", calibration.insufficient},
        {"pooled_fallback_species", fallback}}},
      {"totals",
       {{"agb_kg", summary.total.agb_kg},
        {"carbon_kg", summary.total.carbon_kg},
        {"carbon_t", summary.total.carbon_t()}}},
      {"artifacts", run.artifacts},
  };
  const std::string det = deterministic.dump();
  RunReport report;
  report.hash = fnv1a({reinterpret_cast<const std::uint8_t*>(det.data()), det.size()});
  report.total_carbon_kg = summary.total.carbon_kg;
  report.crowns = seg.crowns.size();
  report.estimated = carbon.estimates.size();
  report.skipped = carbon.skipped;
  report.timings = run.timings;

  nlohmann::json timings = nlohmann::json::array();
  for (const auto& t : run.timings) timings.push_back({{"stage", t.name}, {"seconds", t.seconds}});
  const nlohmann::json doc = {
      {"report_hash", hex(report.hash)},
      {"deterministic", deterministic},
      {"run", {{"workers", config.workers}, {"timings", timings}}},
  };
  report.json = doc.dump(2) + "\n";
  write_text_file(out / "run_report.json", report.json);
  return report;
}

}  // namespace treecarbon
