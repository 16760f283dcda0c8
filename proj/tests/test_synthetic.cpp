#include <doctest.h>

#include <cmath>

#include "msiprior/error.hpp"
#include "msiprior/metrics.hpp"
#include "msiprior/spatial_priors.hpp"
#include "msiprior/synthetic.hpp"

using namespace msiprior;

namespace {

double oracle_auc(const SyntheticCohort& c) {
  std::vector<double> s;
  std::vector<int> y;
  for (const auto& slide : c.slides) {
    s.push_back(band_lym_fraction(slide));
    y.push_back(slide.slide.labels.msi);
  }
  return roc_auc(s, y);
}

}  // namespace

TEST_SUITE("synthetic_cohort") {

TEST_CASE("probes agree with planted types") {
  const SyntheticCohort c = generate_cohort(default_train_spec(1), "A");
  for (const auto& s : c.slides) {
    s.slide.bag.validate();
    for (std::size_t i = 0; i < s.types.size(); ++i) {
      const auto row = s.slide.bag.probes.row(static_cast<Eigen::Index>(i));
      Eigen::Index arg = 0;
      row.maxCoeff(&arg);
      CHECK(arg == probe_class(s.types[i]));
      CHECK(std::abs(row.sum() - 1.0) < 1e-12);
      const double pd = peripheral_distance(s.slide.bag.coords[i], s.slide.bag.geometry);
      CHECK(s.in_band[i] == (pd > 1.0 - 2.0 * c.spec.ring_width_norm));
    }
    CHECK(s.slide.bag.n_tiles() >= 80);
    CHECK(s.slide.bag.n_tiles() <= 440);
  }
}

TEST_CASE("cohort sizes and labels") {
  const SyntheticCohort train = generate_cohort(default_train_spec(2), "A");
  const SyntheticCohort ext = generate_cohort(default_external_spec(2), "B");
  CHECK(train.slides.size() == 120);
  CHECK(ext.slides.size() == 50);
  int msi = 0, flips = 0;
  for (const auto& s : train.slides) {
    msi += s.slide.labels.msi;
    flips += s.slide.labels.hypermut != s.slide.labels.msi;
    CHECK(s.slide.labels.site == "A");
  }
  CHECK(msi == 24);
  CHECK(flips > 5);
  CHECK(flips < 35);
  int ext_msi = 0;
  for (const auto& s : ext.slides) ext_msi += s.slide.labels.msi;
  CHECK(ext_msi == 2);
}

TEST_CASE("generation is a pure function of spec and site") {
  const SyntheticCohort a = generate_cohort(default_train_spec(3), "A");
  const SyntheticCohort b = generate_cohort(default_train_spec(3), "A");
  const SyntheticCohort other_site = generate_cohort(default_train_spec(3), "B");
  REQUIRE(a.slides.size() == b.slides.size());
  for (std::size_t i = 0; i < a.slides.size(); ++i) {
    CHECK(a.slides[i].slide.bag.features == b.slides[i].slide.bag.features);
    CHECK(a.slides[i].slide.bag.probes == b.slides[i].slide.bag.probes);
  }
  CHECK(a.slides[0].slide.bag.features != other_site.slides[0].slide.bag.features);
  CHECK(verify_cohort(a).checks == verify_cohort(b).checks);
}

TEST_CASE("planted signal statistics") {
  const SyntheticCohort c = generate_cohort(default_train_spec(4), "A");
  const CohortDiagnostics d = verify_cohort(c);
  CHECK(d.msi_band_lym_rate > d.mss_band_lym_rate);
  CHECK(std::abs(d.enrichment_ratio / c.spec.lym_enrichment - 1.0) < 0.10);
  CHECK(d.offset_rate_msi > d.offset_rate_mss);
  CHECK(std::abs(d.offset_magnitude_on - c.spec.site_offset_scale) < 0.05);
}

TEST_CASE("oracle on band lym fraction transfers across sites") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    CHECK(oracle_auc(generate_cohort(default_train_spec(seed), "A")) > 0.95);
    CHECK(oracle_auc(generate_cohort(default_external_spec(seed), "B")) > 0.95);
  }
}

TEST_CASE("null cohort has no class difference") {
  const SyntheticCohort c = generate_cohort(null_spec(5), "A");
  const CohortDiagnostics d = verify_cohort(c);
  CHECK(std::abs(d.msi_band_lym_rate - d.mss_band_lym_rate) < 0.03);
  CHECK(std::abs(d.msi_interior_lym_rate - d.mss_interior_lym_rate) < 0.03);
  CHECK(std::abs(d.offset_rate_msi - d.offset_rate_mss) < 0.35);
}

TEST_CASE("zero offset scale leaves texture unshifted") {
  CohortSpec s = default_train_spec(6);
  s.site_offset_scale = 0.0;
  const CohortDiagnostics d = verify_cohort(generate_cohort(s, "A"));
  CHECK(std::abs(d.offset_magnitude_on) < 0.05);
}

TEST_CASE("lym conservation equalizes expected totals") {
  CohortSpec s = default_train_spec(7);
  s.lym_conservation = 1.0;
  s.n_slides = 400;
  const SyntheticCohort c = generate_cohort(s, "A");
  verify_cohort(c);
  double lym[2] = {0, 0}, tiles[2] = {0, 0};
  for (const auto& slide : c.slides) {
    const int k = slide.slide.labels.msi;
    for (auto t : slide.types) lym[k] += t == TileType::kLYM;
    tiles[k] += static_cast<double>(slide.types.size());
  }
  CHECK(std::abs(lym[1] / tiles[1] - lym[0] / tiles[0]) < 0.01);
  CHECK(s.msi_interior_lym_rate(0.0) == s.lym_base_rate);
}

TEST_CASE("invalid specs are rejected") {
  CohortSpec s;
  s.msi_fraction = 1.0;
  CHECK_THROWS_AS(generate_cohort(s, "A"), Error);
  s = CohortSpec{};
  s.feature_dim = 7;
  CHECK_THROWS_AS(generate_cohort(s, "A"), Error);
  s = CohortSpec{};
  s.ring_width_norm = 0.5;
  CHECK_THROWS_AS(generate_cohort(s, "A"), Error);
}

TEST_CASE("verify flags a corrupted cohort") {
  SyntheticCohort c = generate_cohort(default_train_spec(8), "A");
  for (auto& s : c.slides)
    for (auto& t : s.types) t = TileType::kLYM;
  try {
    verify_cohort(c);
    FAIL("expected a generation-bug error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNumeric);
  }
}

}  // TEST_SUITE
