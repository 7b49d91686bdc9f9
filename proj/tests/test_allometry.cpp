#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>

#include "support.hpp"
#include "treecarbon/allometry.hpp"
#include "treecarbon/random.hpp"

using namespace treecarbon;

namespace {

bool close(double a, double b, double rel) { return std::abs(a - b) <= rel * std::max(1.0, std::abs(b)); }

}  // namespace

TEST_CASE("exact lines are recovered exactly") {
  const std::vector<HeightPair> a = {{2, 4}, {4, 8}, {6, 12}};
  const auto m = fit_allometry(a, 3);
  CHECK(m.slope == 2.0);
  CHECK(m.intercept == 0.0);
  CHECK(m.r2 == 1.0);
  CHECK(m.n == 3);
  CHECK(m.species == 3);
  CHECK(m.d_min == 2.0);
  CHECK(m.d_max == 6.0);

  const std::vector<HeightPair> b = {{1, 3}, {2, 5}};
  const auto two = fit_allometry(b, 0);
  CHECK(two.slope == 2.0);
  CHECK(two.intercept == 1.0);
}

TEST_CASE("fit errors") {
  const std::vector<HeightPair> same = {{2, 4}, {2, 6}};
  CHECK_ERROR_KIND(fit_allometry(same, 0), ErrorKind::SingularFit);
  const std::vector<HeightPair> one = {{2, 4}};
  CHECK_ERROR_KIND(fit_allometry(one, 0), ErrorKind::InsufficientData);
  CHECK_ERROR_KIND(fit_allometry(std::vector<HeightPair>{}, 0), ErrorKind::InsufficientData);
  const std::vector<HeightPair> neg = {{-1, 4}, {2, 6}};
  CHECK_ERROR_KIND(fit_allometry(neg, 0), ErrorKind::Parameter);
  const std::vector<HeightPair> negh = {{1, -4}, {2, 6}};
  CHECK_ERROR_KIND(fit_allometry(negh, 0), ErrorKind::Parameter);
}

TEST_CASE("least squares agrees with a QR solve and leaves orthogonal residuals") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + uniform_index(rng, 99);
    const double slope = uniform(rng, 0.2, 3), intercept = uniform(rng, -3, 5), noise = uniform(rng, 0, 3);
    std::vector<HeightPair> pairs;
    Eigen::MatrixXd a(static_cast<Eigen::Index>(n), 2);
    Eigen::VectorXd y(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const double d = uniform(rng, 1, 15);
      const double h = std::max(0.0, slope * d + intercept + noise * standard_normal(rng));
      pairs.push_back({d, h});
      a.row(static_cast<Eigen::Index>(i)) << d, 1.0;
      y[static_cast<Eigen::Index>(i)] = h;
    }
    const auto m = fit_allometry(pairs, 0);
    const Eigen::Vector2d ref = a.colPivHouseholderQr().solve(y);
    CHECK(close(m.slope, ref[0], 1e-9));
    CHECK(close(m.intercept, ref[1], 1e-9));
    double sr = 0, srd = 0, scale = 0;
    for (const auto& p : pairs) {
      const double r = p.h - (m.slope * p.d + m.intercept);
      sr += r;
      srd += r * p.d;
      scale += std::abs(p.h) * std::max(1.0, p.d);
    }
    CHECK(std::abs(sr) <= 1e-9 * scale);
    CHECK(std::abs(srd) <= 1e-9 * scale);
    CHECK(m.r2 >= 0.0);
    CHECK(m.r2 <= 1.0);
  }
}

TEST_CASE("height estimation") {
  AllometricModel m{0, 2.0, 0.0, 5, 1.0, 1.0, 8.0};
  auto e = estimate_height(m, 5);
  CHECK(e.height == 10.0);
  CHECK_FALSE(e.extrapolated);
  CHECK_FALSE(e.clamped);
  e = estimate_height(m, 9);
  CHECK(e.height == 18.0);
  CHECK(e.extrapolated);

  AllometricModel down{0, -1.0, 1.0, 5, 1.0, 1.0, 8.0};
  e = estimate_height(down, 5);
  CHECK(e.height == 0.0);
  CHECK(e.clamped);
  CHECK(estimate_height(down, 5, 2.5).height == 2.5);
  CHECK_ERROR_KIND(estimate_height(m, 0), ErrorKind::Parameter);
  CHECK_ERROR_KIND(estimate_height(m, -2), ErrorKind::Parameter);

  // Affine above the clamp.
  const double h1 = estimate_height(m, 2).height, h2 = estimate_height(m, 3).height, h3 = estimate_height(m, 4).height;
  CHECK(h3 - h2 == doctest::Approx(h2 - h1));
}

TEST_CASE("per-species fits with pooled fallback") {
  std::vector<CalibrationSample> s;
  for (int i = 1; i <= 25; ++i) {
    s.push_back({0, static_cast<double>(i), 1.5 * i});
    s.push_back({1, static_cast<double>(i), 0.5 * i + 4});
  }
  for (int i = 1; i <= 5; ++i) s.push_back({2, static_cast<double>(i), 2.0 * i});
  const AllometrySet set = fit_all_species(s, 20);
  REQUIRE(set.per_species.size() == 2);
  CHECK(set.per_species.at(0).slope == doctest::Approx(1.5));
  CHECK(set.per_species.at(0).r2 == 1.0);
  CHECK(set.per_species.at(1).intercept == doctest::Approx(4.0));
  CHECK(set.per_species.at(1).r2 == doctest::Approx(1.0));
  REQUIRE(set.pooled.has_value());
  CHECK(set.pooled->n == s.size());
  bool fallback = false;
  CHECK(&set.model_for(2, &fallback) == &*set.pooled);
  CHECK(fallback);
  set.model_for(0, &fallback);
  CHECK_FALSE(fallback);

  CHECK_ERROR_KIND(fit_all_species(std::vector<CalibrationSample>{}, 20), ErrorKind::Calibration);
  const std::vector<CalibrationSample> flat = {{0, 3, 4}, {1, 3, 5}};
  CHECK_ERROR_KIND(fit_all_species(flat, 20), ErrorKind::Calibration);
}

TEST_CASE("allometry JSON round-trips") {
  std::vector<CalibrationSample> s;
  Rng rng(4);
  for (int i = 0; i < 40; ++i) s.push_back({i % 2, uniform(rng, 2, 12), uniform(rng, 3, 20)});
  const AllometrySet set = fit_all_species(s, 10);
  const auto dir = testing::temp_dir("allometry_json");
  save_allometry(set, dir / "a.json");
  const AllometrySet back = load_allometry(dir / "a.json");
  CHECK(allometry_to_json(back) == allometry_to_json(set));
  CHECK(back.per_species.at(1).slope == set.per_species.at(1).slope);
  CHECK(back.pooled->d_max == set.pooled->d_max);
  CHECK_ERROR_KIND(allometry_from_json("{}"), ErrorKind::Deserialization);
  CHECK_ERROR_KIND(allometry_from_json("[1,2"), ErrorKind::Deserialization);
  auto text = allometry_to_json(set);
  text.replace(text.find("\"version\": 1"), 12, "\"version\": 7");
  CHECK_ERROR_KIND(allometry_from_json(text), ErrorKind::Deserialization);
}
