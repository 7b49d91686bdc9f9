#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "treecarbon/csv.hpp"
#include "treecarbon/geotiff.hpp"
#include "treecarbon/ndvi.hpp"
#include "treecarbon/pipeline.hpp"

using namespace treecarbon;
namespace fs = std::filesystem;

namespace {

int log_level() {
  const char* v = std::getenv("TREECARBON_LOG");
  return v ? std::atoi(v) : 1;
}

template <typename... Args>
void info(fmt::format_string<Args...> f, Args&&... args) {
  if (log_level() >= 1) std::cerr << fmt::format(f, std::forward<Args>(args)...) << "\n";
}

struct Globals {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

// Tunables shared by the stage subcommands; unset values fall back to the
// config file, then to built-in defaults.
struct Overrides {
  std::optional<double> prefilter, min_distance, min_height, sigma, min_crown_area, cell, h_floor, form_factor,
      density_cell;
  std::optional<int> n_trees, max_depth, min_leaf, window;
  std::optional<std::size_t> min_samples, n_min;
  std::optional<Index> tile_size, overlap;
};

PipelineConfig effective(const Globals& g, const Overrides& o) {
  PipelineConfig c;
  if (g.config) {
    require(fs::is_regular_file(*g.config), ErrorKind::Configuration,
            fmt::format("config file '{}' does not exist", g.config->string()));
    c = parse_config(read_text_file(*g.config), g.config->parent_path());
  }
  if (g.seed) c.seed = *g.seed;
  if (g.workers) c.workers = *g.workers;
  auto set = [](auto& dst, const auto& src) {
    if (src) dst = *src;
  };
  set(c.ndvi_prefilter, o.prefilter);
  set(c.min_distance, o.min_distance);
  set(c.min_height, o.min_height);
  set(c.smooth_sigma, o.sigma);
  set(c.min_crown_area, o.min_crown_area);
  if (o.cell) c.chm_cell_size = *o.cell;
  set(c.h_floor, o.h_floor);
  set(c.form_factor, o.form_factor);
  set(c.density_cell, o.density_cell);
  set(c.forest.n_trees, o.n_trees);
  set(c.forest.max_depth, o.max_depth);
  set(c.forest.min_leaf, o.min_leaf);
  set(c.texture_window, o.window);
  set(c.min_samples, o.min_samples);
  set(c.n_min, o.n_min);
  set(c.tile_size, o.tile_size);
  set(c.overlap, o.overlap);
  require(c.workers >= 1, ErrorKind::Configuration, "--workers must be at least 1");
  return c;
}

void write_mask(const TreeMask& mask, const fs::path& path) {
  RasterGrid g = cast_raster<float>(mask);
  g.set_band_names({"tree_mask"});
  GeoTiffWriteOptions opts;
  opts.sample_type = SampleType::UInt8;
  write_geotiff(g, path, opts);
}

int crowns_epsg(const fs::path& path) {
  const auto doc = nlohmann::json::parse(read_text_file(path), nullptr, false);
  return doc.is_object() ? doc.value("epsg", 0) : 0;
}

TreeMask read_mask(const fs::path& path) {
  const RasterGrid g = read_geotiff(path);
  require(g.bands() == 1, ErrorKind::Validation, "tree mask must be single-band");
  TreeMask m(g.width(), g.height(), 1, g.geo(), g.crs_id());
  m.values() = (g.values() > 0.5f).cast<std::uint8_t>();
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Per-tree carbon estimation from multi-spectral imagery and LiDAR", "treecarbon"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Globals g;
  Overrides o;
  app.add_option("--config", g.config, "Pipeline config JSON")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Global random seed");
  app.add_option("--workers", g.workers, "Worker threads")->check(CLI::PositiveNumber);

  std::string stage;
  std::function<void()> action;
  auto command = [&](CLI::App* parent, const std::string& name, const std::string& help) {
    CLI::App* sub = parent->add_subcommand(name, help);
    sub->fallthrough();
    return sub;
  };
  auto bind = [&](CLI::App* sub, const std::string& name, std::function<void()> fn) {
    sub->callback([&, name, fn] {
      stage = name;
      action = fn;
    });
  };

  fs::path image, out, labels, model, mask, chm, lidar, crowns, raster, table, survey, models, trees, regions;
  fs::path out_crowns;

  // ndvi
  auto* ndvi = command(&app, "ndvi", "Compute NDVI from a 4-band image");
  ndvi->add_option("--image", image)->required();
  ndvi->add_option("--out", out)->required();
  bind(ndvi, "ndvi", [&] { write_geotiff(compute_ndvi(read_multispectral(image)), out); });

  // mask
  auto* mask_cmd = command(&app, "mask", "Tree / not-tree classification");
  mask_cmd->require_subcommand(1);
  auto* mask_train = command(mask_cmd, "train", "Train the pixel classifier from labelled points");
  mask_train->add_option("--image", image)->required();
  mask_train->add_option("--labels", labels, "CSV x,y,class")->required();
  mask_train->add_option("--out", out, "Model file")->required();
  mask_train->add_option("--n-trees", o.n_trees);
  mask_train->add_option("--max-depth", o.max_depth);
  mask_train->add_option("--min-leaf", o.min_leaf);
  mask_train->add_option("--window", o.window, "Texture window (odd)");
  bind(mask_train, "mask train", [&] {
    const auto c = effective(g, o);
    std::size_t skipped = 0;
    const auto m = train_mask_model(read_multispectral(image), load_training_labels(labels), c.forest,
                                    c.texture_window, c.seed, c.workers, &skipped);
    save_model(m, out);
    info("trained {} trees; {} labels skipped for missing features", m.trees.size(), skipped);
  });
  auto* mask_apply = command(mask_cmd, "apply", "Apply a trained model to an image");
  mask_apply->add_option("--image", image)->required();
  mask_apply->add_option("--model", model)->required();
  mask_apply->add_option("--out", out)->required();
  mask_apply->add_option("--prefilter", o.prefilter, "NDVI prefilter");
  bind(mask_apply, "mask apply", [&] {
    const auto c = effective(g, o);
    write_mask(build_tree_mask(read_multispectral(image), load_model(model), c.ndvi_prefilter, c.workers), out);
  });

  // chm
  auto* chm_cmd = command(&app, "chm", "Canopy height model from a LAS point cloud");
  chm_cmd->add_option("--lidar", lidar)->required();
  chm_cmd->add_option("--image", image, "Reference image whose grid the CHM follows")->required();
  chm_cmd->add_option("--out", out)->required();
  chm_cmd->add_option("--cell", o.cell, "Cell size in metres");
  bind(chm_cmd, "chm", [&] {
    const auto c = effective(g, o);
    write_geotiff(chm_for_image(read_las(lidar), read_multispectral(image), c.chm_cell_size), out);
  });

  // segment
  auto* seg = command(&app, "segment", "Watershed crown segmentation and polygonization");
  seg->add_option("--image", image)->required();
  seg->add_option("--mask", mask)->required();
  seg->add_option("--chm", chm, "CHM topography; smoothed NDVI when absent");
  seg->add_option("--out", out, "Crown GeoJSON")->required();
  seg->add_option("--labels-out", out_crowns, "Label raster GeoTIFF");
  seg->add_option("--min-distance", o.min_distance);
  seg->add_option("--min-height", o.min_height);
  seg->add_option("--sigma", o.sigma);
  seg->add_option("--min-crown-area", o.min_crown_area);
  seg->add_option("--tile-size", o.tile_size);
  seg->add_option("--overlap", o.overlap);
  bind(seg, "segment", [&] {
    const auto c = effective(g, o);
    const auto img = read_multispectral(image);
    std::optional<RasterGrid> topo;
    if (!chm.empty()) topo = read_geotiff(chm);
    std::string source;
    const Segmentation s = segment_scene(img, read_mask(mask), topo ? &*topo : nullptr, c, &source);
    write_crowns(s.crowns, img.grid().crs_id(), out);
    if (!out_crowns.empty()) {
      RasterGrid l = cast_raster<float>(s.labels);
      l.set_nodata(std::nullopt);
      l.set_band_names({"crown_id"});
      write_geotiff(l, out_crowns);
    }
    info("{} crowns from {} topography", s.crowns.size(), source);
  });

  // species
  auto* sp = command(&app, "species", "Species table and per-crown species");
  sp->require_subcommand(1);
  auto* sp_table = command(sp, "table", "Validate and print a species table");
  sp_table->add_option("--table", table)->required();
  bind(sp_table, "species table", [&] { std::cout << species_table_csv(load_species_table(table)); });
  auto* sp_assign = command(sp, "assign", "Majority vote from a species raster");
  sp_assign->add_option("--crowns", crowns)->required();
  sp_assign->add_option("--raster", raster, "Species GeoTIFF with its .json sidecar")->required();
  sp_assign->add_option("--table", table)->required();
  sp_assign->add_option("--out", out)->required();
  bind(sp_assign, "species assign", [&] {
    const auto t = load_species_table(table);
    const auto r = read_species_raster(raster, t);
    auto cs = read_crowns(crowns);
    assign_species(cs, r);
    write_crowns(cs, r.crs_id(), out);
  });
  auto* sp_train = command(sp, "train", "Train the crown classifier from a tree survey");
  sp_train->add_option("--crowns", crowns)->required();
  sp_train->add_option("--image", image)->required();
  sp_train->add_option("--survey", survey, "CSV x,y,species")->required();
  sp_train->add_option("--table", table)->required();
  sp_train->add_option("--out", out)->required();
  sp_train->add_option("--n-trees", o.n_trees);
  sp_train->add_option("--max-depth", o.max_depth);
  sp_train->add_option("--min-leaf", o.min_leaf);
  bind(sp_train, "species train", [&] {
    const auto c = effective(g, o);
    const auto t = load_species_table(table);
    const auto data =
        crown_training_set(read_crowns(crowns), read_multispectral(image), load_tree_survey(survey, t), t);
    save_model(species_train(data.features, data.labels, t, c.forest, c.seed, c.workers), out);
    info("trained on {} crowns", data.labels.size());
  });
  auto* sp_predict = command(sp, "predict", "Classify crowns with a trained model");
  sp_predict->add_option("--crowns", crowns)->required();
  sp_predict->add_option("--image", image)->required();
  sp_predict->add_option("--model", model)->required();
  sp_predict->add_option("--table", table)->required();
  sp_predict->add_option("--out", out)->required();
  bind(sp_predict, "species predict", [&] {
    const auto t = load_species_table(table);
    const auto m = load_model(model);
    require(m.classes == t.names(), ErrorKind::Validation, "species model classes do not match the species table");
    const auto img = read_multispectral(image);
    auto cs = read_crowns(crowns);
    predict_species(cs, img, m);
    write_crowns(cs, img.grid().crs_id(), out);
  });

  // allometry
  auto* al = command(&app, "allometry", "Crown diameter to height models");
  al->require_subcommand(1);
  auto* al_fit = command(al, "fit", "Fit per-species models against CHM heights");
  al_fit->add_option("--crowns", crowns, "Crowns with species")->required();
  al_fit->add_option("--chm", chm)->required();
  al_fit->add_option("--out", out)->required();
  al_fit->add_option("--min-samples", o.min_samples);
  al_fit->add_option("--n-min", o.n_min);
  bind(al_fit, "allometry fit", [&] {
    const auto c = effective(g, o);
    const auto cal = calibration_samples(read_crowns(crowns), read_geotiff(chm), c.min_samples);
    const auto set = fit_all_species(cal.samples, c.n_min);
    save_allometry(set, out);
    info("{} calibration crowns, {} with too few CHM cells, {} species models", cal.samples.size(),
         cal.insufficient, set.per_species.size());
  });
  auto* al_apply = command(al, "apply", "Estimate crown heights");
  al_apply->add_option("--crowns", crowns)->required();
  al_apply->add_option("--models", models)->required();
  al_apply->add_option("--out", out)->required();
  al_apply->add_option("--h-floor", o.h_floor);
  bind(al_apply, "allometry apply", [&] {
    const auto c = effective(g, o);
    auto cs = read_crowns(crowns);
    apply_allometry(cs, load_allometry(models), c.h_floor);
    write_crowns(cs, crowns_epsg(crowns), out);
  });

  // carbon
  auto* cb = command(&app, "carbon", "Biomass and carbon");
  cb->require_subcommand(1);
  auto* cb_est = command(cb, "estimate", "Per-tree carbon CSV from attributed crowns");
  cb_est->add_option("--crowns", crowns, "Crowns with species and height")->required();
  cb_est->add_option("--table", table)->required();
  cb_est->add_option("--models", models, "Allometry models, to flag fallback and extrapolation");
  cb_est->add_option("--out", out)->required();
  cb_est->add_option("--form-factor", o.form_factor);
  cb_est->add_option("--h-floor", o.h_floor);
  bind(cb_est, "carbon estimate", [&] {
    const auto c = effective(g, o);
    const auto t = load_species_table(table);
    auto cs = read_crowns(crowns);
    std::map<int, std::vector<std::string>> flags;
    if (!models.empty()) flags = apply_allometry(cs, load_allometry(models), c.h_floor);
    const auto run = estimate_carbon(cs, t, c.form_factor, flags);
    write_text_file(out, trees_csv(run.outcomes, t));
    info("{} trees estimated, {} skipped", run.estimates.size(), run.skipped);
  });
  auto* cb_agg = command(cb, "aggregate", "Totals per region");
  cb_agg->add_option("--trees", trees, "Per-tree CSV")->required();
  cb_agg->add_option("--table", table)->required();
  cb_agg->add_option("--regions", regions, "GeoJSON polygons with a name property");
  cb_agg->add_option("--out", out)->required();
  bind(cb_agg, "carbon aggregate", [&] {
    const auto t = load_species_table(table);
    std::vector<CarbonEstimate> est;
    std::size_t skipped = 0;
    for (auto& x : parse_trees_csv(read_text_file(trees), t)) {
      if (auto* e = std::get_if<CarbonEstimate>(&x)) {
        est.push_back(*e);
      } else {
        ++skipped;
      }
    }
    std::vector<Region> rs;
    if (!regions.empty()) rs = load_regions(regions);
    const auto s = aggregate(est, rs, skipped);
    write_text_file(out, summary_json(s));
    std::cout << fmt::format("total carbon {:.3f} t over {} trees ({} skipped)\n", s.total.carbon_t(),
                             s.total.count, s.skipped);
  });
  auto* cb_den = command(cb, "density", "Carbon density raster (kg/m^2)");
  cb_den->add_option("--trees", trees)->required();
  cb_den->add_option("--crowns", crowns)->required();
  cb_den->add_option("--table", table)->required();
  cb_den->add_option("--out", out)->required();
  cb_den->add_option("--cell", o.density_cell, "Cell size in metres");
  bind(cb_den, "carbon density", [&] {
    const auto c = effective(g, o);
    const auto t = load_species_table(table);
    std::vector<CarbonEstimate> est;
    for (auto& x : parse_trees_csv(read_text_file(trees), t)) {
      if (auto* e = std::get_if<CarbonEstimate>(&x)) est.push_back(*e);
    }
    write_geotiff(carbon_density_raster(est, read_crowns(crowns), c.density_cell, crowns_epsg(crowns)), out);
  });

  // synth
  std::size_t n_trees = 50;
  double extent = 150.0;
  auto* syn = command(&app, "synth", "Synthetic scenes");
  syn->require_subcommand(1);
  auto* syn_gen = command(syn, "generate", "Write a seeded synthetic scene and its config");
  syn_gen->add_option("--out", out, "Scene directory")->required();
  syn_gen->add_option("--trees", n_trees);
  syn_gen->add_option("--extent", extent, "Scene side in metres");
  bind(syn_gen, "synth generate", [&] {
    const std::uint64_t seed = g.seed.value_or(1);
    auto spec = SyntheticSceneSpec::standard(seed, n_trees);
    spec.extent_m = extent;
    const auto t = default_species_table();
    const auto scene = generate_synthetic_scene(spec, t);
    const auto path = write_synthetic_scene(scene, t, out, seed);
    std::cout << fmt::format("{} trees, true carbon {:.3f} t, config {}\n", scene.truth.size(),
                             scene.true_carbon_kg() / 1000.0, path.string());
  });

  // run
  auto* run = command(&app, "run", "Full pipeline from a config file");
  bind(run, "run", [&] {
    require(g.config.has_value(), ErrorKind::Configuration, "run needs --config");
    PipelineConfig c = load_config(*g.config);
    if (g.seed) c.seed = *g.seed;
    if (g.workers) c.workers = *g.workers;
    const RunReport r = run_pipeline(c);
    for (const auto& t : r.timings) info("{:<10} {:8.3f} s", t.name, t.seconds);
    std::cout << fmt::format("{} crowns, {} estimated, {} skipped, total carbon {:.3f} t, report {:016x}\n",
                             r.crowns, r.estimated, r.skipped, r.total_carbon_kg / 1000.0, r.hash);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    action();
  } catch (const Error& e) {
    std::cerr << fmt::format("treecarbon {}: {} error: {}\n", stage, to_string(e.kind()), e.what());
    return e.kind() == ErrorKind::Configuration ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << fmt::format("treecarbon {}: {}\n", stage, e.what());
    return 1;
  }
  return 0;
}
