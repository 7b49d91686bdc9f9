#include <doctest.h>

#include <cmath>

#include <json.hpp>

#include "support.hpp"
#include "treecarbon/csv.hpp"
#include "treecarbon/geotiff.hpp"
#include "treecarbon/pipeline.hpp"

using namespace treecarbon;

namespace {

PipelineConfig scene_config(const std::filesystem::path& dir, std::uint64_t seed, std::size_t trees = 20,
                            double extent = 90.0) {
  auto spec = SyntheticSceneSpec::standard(seed, trees);
  spec.extent_m = extent;
  const auto table = default_species_table();
  const auto scene = generate_synthetic_scene(spec, table);
  return load_config(write_synthetic_scene(scene, table, dir, seed));
}

}  // namespace

TEST_CASE("single tree scene has the hand-computed ground truth") {
  SyntheticSceneSpec spec = SyntheticSceneSpec::standard(3, 1);
  spec.species = {{3, 1.0, 1.5, 0.0, {0.06, 0.11, 0.03, 0.60}}};
  spec.d_min = spec.d_max = 10.0;
  spec.extent_m = 30;
  const auto scene = generate_synthetic_scene(spec, default_species_table());
  REQUIRE(scene.truth.size() == 1);
  CHECK(scene.truth[0].h_m == 15.0);
  CHECK(std::abs(scene.truth[0].carbon_kg - 539863.1) / 539863.1 < 1e-6);
  CHECK(scene.true_carbon_kg() == scene.truth[0].carbon_kg);
}

TEST_CASE("scene generation is deterministic and validated") {
  const auto table = default_species_table();
  const auto spec = SyntheticSceneSpec::standard(9, 10);
  const auto a = generate_synthetic_scene(spec, table);
  const auto b = generate_synthetic_scene(spec, table);
  CHECK(bit_equal(a.image.grid(), b.image.grid()));
  CHECK(encode_las(a.cloud) == encode_las(b.cloud));
  CHECK(truth_csv(a.truth, table) == truth_csv(b.truth, table));
  CHECK_FALSE(bit_equal(a.image.grid(), generate_synthetic_scene(SyntheticSceneSpec::standard(10, 10), table).image.grid()));

  auto bad = spec;
  bad.species[0].frequency = 0.5;
  CHECK_ERROR_KIND(generate_synthetic_scene(bad, table), ErrorKind::Validation);
  bad = spec;
  bad.d_min = 8;
  bad.d_max = 6;
  CHECK_ERROR_KIND(generate_synthetic_scene(bad, table), ErrorKind::Validation);
  bad = spec;
  bad.extent_m = 20;
  bad.tree_count = 40;
  bad.max_attempts = 200;
  CHECK_ERROR_KIND(generate_synthetic_scene(bad, table), ErrorKind::Placement);
}

TEST_CASE("synthetic crowns are disjoint and the CHM is exact") {
  const auto table = default_species_table();
  auto spec = SyntheticSceneSpec::standard(5, 15);
  spec.extent_m = 80;
  const auto scene = generate_synthetic_scene(spec, table);
  const RasterGrid chm = chm_for_image(scene.cloud, scene.image, std::nullopt);
  for (Index r = 0; r < chm.height(); ++r) {
    for (Index c = 0; c < chm.width(); ++c) {
      const std::int32_t s = scene.species.at(r, c);
      if (s < 0) {
        CHECK(chm.at(r, c) == 0.0f);
        continue;
      }
      const Eigen::Vector2d p = chm.geo().cell_center(c, r);
      double expected = -1;
      for (const auto& t : scene.truth) {
        if ((t.center - p).norm() <= t.d_m / 2 + 1e-9) expected = t.h_m;
      }
      CHECK(std::abs(chm.at(r, c) - expected) <= 1e-3);
    }
  }
}

TEST_CASE("config parsing and validation") {
  const auto dir = testing::temp_dir("pipeline_config");
  const PipelineConfig c = scene_config(dir, 2, 5, 40);
  CHECK(c.inputs.imagery == dir / "imagery.tif");
  CHECK(c.n_min == 5);
  CHECK(c.min_distance == 5.0);
  CHECK_NOTHROW(c.validate());

  const PipelineConfig back = parse_config(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));
  CHECK(config_hash(back) == config_hash(c));
  PipelineConfig w = c;
  w.workers = 8;
  w.output_dir = dir / "elsewhere";
  CHECK(config_hash(w) == config_hash(c));
  w.min_distance = 4;
  CHECK(config_hash(w) != config_hash(c));

  PipelineConfig no_height = c;
  no_height.inputs.lidar.reset();
  CHECK_ERROR_KIND(no_height.validate(), ErrorKind::Configuration);
  CHECK_ERROR_KIND(run_pipeline(no_height), ErrorKind::Configuration);
  CHECK_FALSE(std::filesystem::exists(no_height.output_dir / "ndvi.tif"));

  PipelineConfig missing = c;
  missing.inputs.imagery = dir / "nope.tif";
  CHECK_ERROR_KIND(missing.validate(), ErrorKind::Configuration);
  PipelineConfig bad = c;
  bad.form_factor = 1.5;
  CHECK_ERROR_KIND(bad.validate(), ErrorKind::Configuration);
  bad = c;
  bad.texture_window = 4;
  CHECK_ERROR_KIND(bad.validate(), ErrorKind::Configuration);

  CHECK_ERROR_KIND(parse_config("{\"inputs\": {}}"), ErrorKind::Configuration);
  CHECK_ERROR_KIND(parse_config("not json"), ErrorKind::Configuration);
  auto j = nlohmann::json::parse(config_to_json(c));
  j["segmentation"]["min_distanse"] = 3;
  CHECK_ERROR_KIND(parse_config(j.dump()), ErrorKind::Configuration);
  j = nlohmann::json::parse(config_to_json(c));
  j["segmentation"]["min_distance"] = "three";
  CHECK_ERROR_KIND(parse_config(j.dump()), ErrorKind::Configuration);
}

TEST_CASE("full run recovers scene carbon and is reproducible") {
  const auto dir = testing::temp_dir("pipeline_run");
  PipelineConfig c = scene_config(dir, 4);
  const auto truth = read_csv(dir / "truth.csv");
  std::vector<double> tc;
  for (const auto& row : truth.rows) tc.push_back(parse_number(row[truth.column("carbon_kg")], 0, "carbon_kg"));
  const double expected = compensated_sum(tc);

  const RunReport a = run_pipeline(c);
  MESSAGE("crowns ", a.crowns, " estimated ", a.estimated, " carbon ", a.total_carbon_kg, " truth ", expected);
  CHECK(a.crowns == truth.rows.size());
  CHECK(a.skipped == 0);
  CHECK(std::abs(a.total_carbon_kg - expected) / expected <= 0.15);
  for (const char* name : {"ndvi.tif", "tree_mask.tif", "chm.tif", "segments.tif", "crowns.geojson",
                           "allometry.json", "trees.csv", "summary.json", "carbon_density.tif", "trees.geojson",
                           "run_report.json", "mask_model.tcrf"}) {
    CHECK_MESSAGE(std::filesystem::exists(c.output_dir / name), name);
  }
  CHECK_FALSE(std::filesystem::exists(c.output_dir / kFailureMarker));
  const std::string csv = read_text_file(c.output_dir / "trees.csv");

  c.workers = 4;
  c.output_dir = dir / "out4";
  const RunReport b = run_pipeline(c);
  CHECK(b.hash == a.hash);
  CHECK(read_text_file(c.output_dir / "trees.csv") == csv);
  CHECK(b.total_carbon_kg == a.total_carbon_kg);

  const auto report = nlohmann::json::parse(a.json);
  CHECK(report["deterministic"]["topography"] == "chm");
  CHECK(report["report_hash"].get<std::string>().size() == 16);
}

TEST_CASE("stage failures name the stage and leave a marker") {
  const auto dir = testing::temp_dir("pipeline_fail");
  PipelineConfig c = scene_config(dir, 6, 5, 40);
  write_text_file(dir / "labels.csv", "x,y,class\n1,2,shrub\n");
  try {
    run_pipeline(c);
    FAIL("expected a failure");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).rfind("stage mask: ", 0) == 0);
  }
  CHECK(std::filesystem::exists(c.output_dir / kFailureMarker));
  CHECK(read_text_file(c.output_dir / kFailureMarker).rfind("stage mask", 0) == 0);
}

TEST_CASE("geojson export") {
  const auto dir = testing::temp_dir("pipeline_geojson");
  const auto table = default_species_table();
  SegmentLabels l(6, 6, 1, GeoTransform{10, 20, 1, 1});
  l.band(0).block(1, 1, 3, 3).setConstant(1);
  auto crowns = polygonize(l);
  crowns[0].species = 3;
  crowns[0].height_m = 5.0;
  const auto run = estimate_carbon(crowns, table, 1.0);
  export_geojson(run.estimates, crowns, table, 32618, dir / "t.geojson");
  const auto doc = nlohmann::json::parse(read_text_file(dir / "t.geojson"));
  REQUIRE(doc["features"].size() == 1);
  const auto& props = doc["features"][0]["properties"];
  CHECK(props["species"] == "Pin oak");
  CHECK(props["D_m"].get<double>() == run.estimates[0].d_m);
  CHECK(props["H_m"].get<double>() == 5.0);
  CHECK(props["carbon_kg"].get<double>() == run.estimates[0].carbon_kg);
  CHECK(props["id"] == 1);
  CHECK(doc["features"][0]["geometry"]["coordinates"][0][0][0].get<double>() > 10.0);

  export_geojson({}, {}, table, 0, dir / "e.geojson");
  const auto empty = nlohmann::json::parse(read_text_file(dir / "e.geojson"));
  CHECK(empty["type"] == "FeatureCollection");
  CHECK(empty["features"].empty());
}
