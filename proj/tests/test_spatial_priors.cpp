#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "msiprior/spatial_priors.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace msiprior;
using msiprior::testing::random_bag;

namespace {

double pd_oracle(const TileCoord& t, const SlideGeometry& g) { return oracle::peripheral_distance(t, g); }

std::vector<std::size_t> brute_neighbors(const SlideBag& bag, std::size_t i, double r) {
  return oracle::neighbors(bag, i, r);
}

double lin_oracle(const SlideBag& bag, std::size_t i, double r, double eps) {
  return oracle::lin_score(bag, i, r, eps);
}

}  // namespace

TEST_SUITE("spatial_priors") {

TEST_CASE("peripheral distance hand values") {
  const SlideGeometry g{1000, 1000};
  CHECK(peripheral_distance({0, 400}, g) == 1.0);
  CHECK(peripheral_distance({500, 500}, g) == 0.0);
  CHECK(peripheral_distance({200, 400}, g) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(peripheral_distance({1000, 1000}, g) == 1.0);
}

TEST_CASE("peripheral distance rejects out-of-bounds tiles") {
  const SlideGeometry g{100, 50};
  CHECK_THROWS_AS(peripheral_distance({101, 0}, g), Error);
  CHECK_THROWS_AS(peripheral_distance({0, 51}, g), Error);
  CHECK_THROWS_AS(peripheral_distance({0, 0}, SlideGeometry{0, 10}), Error);
}

TEST_CASE("peripheral distance matches oracle, symmetry and range") {
  CounterRng rng(11);
  double worst = 0.0;
  for (int k = 0; k < 10000; ++k) {
    const SlideGeometry g{1 + rng.below(200000), 1 + rng.below(200000)};
    const TileCoord t{rng.below(g.width_px + 1), rng.below(g.height_px + 1)};
    const double pd = peripheral_distance(t, g);
    worst = std::max(worst, std::abs(pd - pd_oracle(t, g)));
    CHECK(pd >= 0.0);
    CHECK(pd <= 1.0);
    const double mirrored = peripheral_distance({g.width_px - t.x_px, g.height_px - t.y_px}, g);
    CHECK(std::abs(pd - mirrored) < 1e-12);
    const double w = static_cast<double>(g.width_px), h = static_cast<double>(g.height_px);
    CHECK(std::abs(t.x_px / w + (w - t.x_px) / w - 1.0) < 1e-12);
    CHECK(std::abs(t.y_px / h + (h - t.y_px) / h - 1.0) < 1e-12);
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("lin score closed forms") {
  CHECK(lin_from_means(0.3, 0.3, 1e-6) == 0.0);
  CHECK(lin_from_means(0.5, 0.0, 1e-6) == doctest::Approx(std::log(500001.0)).epsilon(1e-14));
  CHECK(std::log(500001.0) == doctest::Approx(13.1224).epsilon(1e-5));
  CHECK(lin_from_means(0.1, 0.2, 1e-6) == doctest::Approx(-0.69314).epsilon(1e-5));
}

TEST_CASE("neighbor index small cases") {
  PriorConfig cfg;
  const SlideGeometry g{1000, 1000};
  SUBCASE("self inclusion") {
    const NeighborIndex idx({{300, 700}}, g, cfg);
    CHECK(idx.neighbors(0) == std::vector<std::size_t>{0});
  }
  SUBCASE("close pair") {
    const NeighborIndex idx({{0, 0}, {50, 0}}, g, cfg);
    CHECK(idx.neighbors(0) == std::vector<std::size_t>{0, 1});
    CHECK(idx.neighbors(1) == std::vector<std::size_t>{0, 1});
  }
  SUBCASE("far pair") {
    const NeighborIndex idx({{0, 0}, {500, 500}}, g, cfg);
    CHECK(idx.neighbors(0) == std::vector<std::size_t>{0});
    CHECK(idx.neighbors(1) == std::vector<std::size_t>{1});
  }
  SUBCASE("exactly at the radius") {
    const NeighborIndex idx({{0, 0}, {100, 0}, {1000, 1000}, {900, 1000}}, g, cfg);
    CHECK(idx.neighbors(0) == std::vector<std::size_t>{0, 1});
    CHECK(idx.neighbors(2) == std::vector<std::size_t>{2, 3});
  }
  CHECK_THROWS_AS(NeighborIndex({}, g, cfg), Error);
}

TEST_CASE("neighbor index equals brute force on random slides") {
  CounterRng rng(12);
  for (int s = 0; s < 60; ++s) {
    PriorConfig cfg;
    cfg.radius_norm = rng.uniform(0.02, 0.4);
    const auto bag = random_bag(1 + rng.below(400), 2, rng);
    const NeighborIndex idx(bag.coords, bag.geometry, cfg);
    for (std::size_t i = 0; i < bag.n_tiles(); ++i)
      REQUIRE(idx.neighbors(i) == brute_neighbors(bag, i, cfg.radius_norm));
  }
}

TEST_CASE("lin score matches oracle and is antisymmetric") {
  CounterRng rng(13);
  PriorConfig cfg;
  double worst = 0.0;
  for (int s = 0; s < 20; ++s) {
    auto bag = random_bag(50 + rng.below(150), 2, rng);
    const NeighborIndex idx(bag.coords, bag.geometry, cfg);
    Eigen::MatrixXd swapped = bag.probes;
    swapped.col(probe::kLYM).swap(swapped.col(probe::kTUM));
    for (std::size_t i = 0; i < bag.n_tiles(); ++i) {
      const double s_i = lin_score(i, idx, bag.probes, cfg);
      worst = std::max(worst, std::abs(s_i - lin_oracle(bag, i, cfg.radius_norm, cfg.epsilon)));
      CHECK(lin_score(i, idx, swapped, cfg) == -s_i);
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("lin score needs probes") {
  CounterRng rng(14);
  auto bag = random_bag(10, 3, rng);
  bag.probes.resize(0, 0);
  PriorConfig cfg;
  cfg.use_lin = true;
  CHECK_THROWS_AS(compute_priors(bag, cfg), Error);
  try {
    augment_features(bag, cfg);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfig);
  }
}

TEST_CASE("augment features") {
  CounterRng rng(15);
  PriorConfig cfg;
  SUBCASE("identity without priors") {
    const auto bag = random_bag(30, 16, rng);
    const auto out = augment_features(bag, cfg);
    CHECK(out.features == bag.features);
  }
  SUBCASE("pd only grows by one") {
    cfg.use_pd = true;
    const auto bag = random_bag(4, 1536, rng);
    CHECK(augment_features(bag, cfg).feature_dim() == 1537);
  }
  SUBCASE("both priors append pd then lin") {
    cfg.use_pd = cfg.use_lin = true;
    const auto bag = random_bag(40, 16, rng);
    const auto out = augment_features(bag, cfg);
    REQUIRE(out.feature_dim() == 18);
    CHECK(out.features.leftCols(16) == bag.features);
    const NeighborIndex idx(bag.coords, bag.geometry, cfg);
    for (std::size_t i = 0; i < bag.n_tiles(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      CHECK(out.features(r, 16) == peripheral_distance(bag.coords[i], bag.geometry));
      CHECK(out.features(r, 17) == lin_score(i, idx, bag.probes, cfg));
    }
  }
}

}  // TEST_SUITE
