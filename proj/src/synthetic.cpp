#include "msiprior/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "msiprior/error.hpp"
#include "msiprior/rng.hpp"
#include "msiprior/spatial_priors.hpp"

namespace msiprior {

int probe_class(TileType t) {
  switch (t) {
    case TileType::kLYM: return probe::kLYM;
    case TileType::kTUM: return probe::kTUM;
    case TileType::kSTR: return probe::kSTR;
    case TileType::kOther: return probe::kNORM;
  }
  return probe::kNORM;
}

void CohortSpec::validate() const {
  require(n_slides >= 2, ErrorKind::kConfig, "n_slides must be >= 2");
  require(msi_fraction > 0.0 && msi_fraction < 1.0, ErrorKind::kConfig,
          "msi_fraction must lie in (0, 1)");
  require(tiles_min >= 4 && tiles_max >= tiles_min, ErrorKind::kConfig,
          "need 4 <= tiles_min <= tiles_max");
  require(feature_dim >= 8, ErrorKind::kConfig, "feature_dim must be >= 8");
  require(grid_pitch_px >= 1, ErrorKind::kConfig, "grid_pitch_px must be >= 1");
  require(ring_width_norm > 0.0 && ring_width_norm < 0.5, ErrorKind::kConfig,
          "ring_width_norm must lie in (0, 0.5)");
  require(lym_base_rate > 0.0 && tum_rate >= 0.0 && str_rate >= 0.0 &&
              lym_base_rate + tum_rate + str_rate <= 1.0,
          ErrorKind::kConfig, "tile type rates must be non-negative and sum to at most 1");
  require(lym_enrichment >= 1.0, ErrorKind::kConfig, "lym_enrichment must be >= 1");
  require(site_offset_scale >= 0.0 && noise_scale >= 0.0 && prototype_scale > 0.0,
          ErrorKind::kConfig, "scales must be non-negative");
  require(offset_label_coupling >= 0.0 && offset_label_coupling <= 1.0, ErrorKind::kConfig,
          "offset_label_coupling must lie in [0, 1]");
  require(probe_softening >= 0.0 && probe_softening < 0.5, ErrorKind::kConfig,
          "probe_softening must lie in [0, 0.5)");
  require(lym_conservation >= 0.0 && lym_conservation <= 1.0, ErrorKind::kConfig,
          "lym_conservation must lie in [0, 1]");
  require(hypermut_flip >= 0.0 && hypermut_flip <= 1.0, ErrorKind::kConfig,
          "hypermut_flip must lie in [0, 1]");
}

int CohortSpec::n_msi() const {
  const int n = static_cast<int>(std::lround(msi_fraction * n_slides));
  return std::clamp(n, 1, n_slides - 1);
}

double CohortSpec::msi_band_lym_rate() const {
  return std::min(0.9, lym_base_rate * lym_enrichment);
}

double CohortSpec::msi_interior_lym_rate(double band_fraction) const {
  if (band_fraction >= 1.0) return lym_base_rate;
  const double excess = lym_conservation * band_fraction * (msi_band_lym_rate() - lym_base_rate);
  return std::max(0.0, lym_base_rate - excess / (1.0 - band_fraction));
}

CohortSpec default_train_spec(std::uint64_t seed) {
  CohortSpec s;
  s.seed = seed;
  return s;
}

CohortSpec default_external_spec(std::uint64_t seed) {
  CohortSpec s;
  s.n_slides = 50;
  s.msi_fraction = 0.04;
  s.offset_label_coupling = 0.0;
  s.seed = seed;
  return s;
}

CohortSpec null_spec(std::uint64_t seed) {
  CohortSpec s;
  s.lym_enrichment = 1.0;
  s.offset_label_coupling = 0.0;
  s.seed = seed;
  return s;
}

Eigen::MatrixXd tile_prototypes(int feature_dim, double scale) {
  CounterRng rng = CounterRng(0x70726f746f747970ULL).derive({static_cast<std::uint64_t>(feature_dim)});
  Eigen::MatrixXd protos(kNumTileTypes, feature_dim);
  for (Eigen::Index t = 0; t < protos.rows(); ++t)
    for (Eigen::Index d = 0; d < protos.cols(); ++d) protos(t, d) = scale * rng.normal();
  return protos;
}

namespace {

struct TypeRates {
  double lym, tum, str, other;
};

TypeRates rates_for(const CohortSpec& spec, bool msi, bool in_band, double band_fraction) {
  const double other = 1.0 - spec.lym_base_rate - spec.tum_rate - spec.str_rate;
  double lym = spec.lym_base_rate;
  if (msi) lym = in_band ? spec.msi_band_lym_rate() : spec.msi_interior_lym_rate(band_fraction);
  const double rest = (1.0 - lym) / (1.0 - spec.lym_base_rate);
  return {lym, spec.tum_rate * rest, spec.str_rate * rest, other * rest};
}

TileType draw_type(const TypeRates& r, CounterRng& rng) {
  const double u = rng.uniform();
  if (u < r.lym) return TileType::kLYM;
  if (u < r.lym + r.tum) return TileType::kTUM;
  if (u < r.lym + r.tum + r.str) return TileType::kSTR;
  return TileType::kOther;
}

SyntheticSlide make_slide(const CohortSpec& spec, const std::string& site, int index, bool msi,
                          const Eigen::MatrixXd& protos, CounterRng rng) {
  SyntheticSlide out;
  const double target = static_cast<double>(
      spec.tiles_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.tiles_max - spec.tiles_min + 1))));
  const double aspect = rng.uniform(0.75, 1.33);
  const auto cols = std::max<long>(2, std::lround(std::sqrt(target * aspect)));
  const auto rows = std::max<long>(2, std::lround(target / static_cast<double>(cols)));
  const auto pitch = static_cast<std::uint64_t>(spec.grid_pitch_px);

  LabeledSlide& ls = out.slide;
  ls.bag.slide_id = fmt::format("{}-{:04d}", site, index);
  ls.bag.geometry = {static_cast<std::uint64_t>(cols) * pitch, static_cast<std::uint64_t>(rows) * pitch};
  ls.labels.msi = msi ? 1 : 0;
  ls.labels.site = site;
  const bool flip = rng.bernoulli(spec.hypermut_flip);
  ls.labels.hypermut = flip ? 1 - ls.labels.msi : ls.labels.msi;
  const double p_offset = msi ? 0.5 * (1.0 + spec.offset_label_coupling)
                              : 0.5 * (1.0 - spec.offset_label_coupling);
  out.offset_on = rng.bernoulli(p_offset);

  const auto n = static_cast<Eigen::Index>(rows * cols);
  ls.bag.features.resize(n, spec.feature_dim);
  ls.bag.probes.resize(n, probe::kNumClasses);
  const double band_threshold = 1.0 - 2.0 * spec.ring_width_norm;
  const int tex = spec.texture_begin();
  auto coord_at = [&](long r, long c) {
    return TileCoord{static_cast<std::uint64_t>(c) * pitch, static_cast<std::uint64_t>(r) * pitch};
  };
  long n_band = 0;
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c)
      n_band += peripheral_distance(coord_at(r, c), ls.bag.geometry) > band_threshold;
  const double band_fraction = static_cast<double>(n_band) / static_cast<double>(n);
  Eigen::Index i = 0;
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c, ++i) {
      const TileCoord coord = coord_at(r, c);
      ls.bag.coords.push_back(coord);
      const bool band = peripheral_distance(coord, ls.bag.geometry) > band_threshold;
      out.in_band.push_back(band);
      const TileType type = draw_type(rates_for(spec, msi, band, band_fraction), rng);
      out.types.push_back(type);

      for (int d = 0; d < spec.feature_dim; ++d) {
        double v = protos(static_cast<Eigen::Index>(type), d) + spec.noise_scale * rng.normal();
        if (!band && out.offset_on && d >= tex) v += spec.site_offset_scale;
        ls.bag.features(i, d) = v;
      }

      Eigen::RowVectorXd soft(probe::kNumClasses);
      for (int k = 0; k < probe::kNumClasses; ++k) soft(k) = rng.uniform(0.0, 1.0) + 1e-3;
      soft /= soft.sum();
      Eigen::RowVectorXd p = spec.probe_softening * soft;
      p(probe_class(type)) += 1.0 - spec.probe_softening;
      ls.bag.probes.row(i) = p;
    }
  }
  return out;
}

}  // namespace

SyntheticCohort generate_cohort(const CohortSpec& spec, const std::string& site) {
  spec.validate();
  SyntheticCohort out;
  out.spec = spec;
  out.site = site;
  const CounterRng root = CounterRng(spec.seed).derive(site);
  std::vector<int> is_msi(static_cast<std::size_t>(spec.n_slides), 0);
  std::fill_n(is_msi.begin(), spec.n_msi(), 1);
  CounterRng label_rng = root.derive("labels");
  label_rng.shuffle(is_msi);
  const Eigen::MatrixXd protos = tile_prototypes(spec.feature_dim, spec.prototype_scale);
  for (int i = 0; i < spec.n_slides; ++i) {
    out.slides.push_back(make_slide(spec, site, i, is_msi[static_cast<std::size_t>(i)] == 1, protos,
                                    root.derive({static_cast<std::uint64_t>(i)})));
  }
  return out;
}

Cohort SyntheticCohort::cohort() const {
  Cohort c;
  c.reserve(slides.size());
  for (const auto& s : slides) c.push_back(s.slide);
  return c;
}

double band_lym_fraction(const SyntheticSlide& slide) {
  std::size_t band = 0, lym = 0;
  for (std::size_t i = 0; i < slide.types.size(); ++i) {
    if (!slide.in_band[i]) continue;
    ++band;
    if (slide.types[i] == TileType::kLYM) ++lym;
  }
  return band == 0 ? 0.0 : static_cast<double>(lym) / static_cast<double>(band);
}

namespace {

void check_within(CohortDiagnostics& d, const std::string& what, double observed, double expected,
                  double se) {
  const double z = std::abs(observed - expected) / std::max(se, 1e-9);
  d.checks.push_back(fmt::format("{}: observed {:.4f} expected {:.4f} ({:.2f} se)", what, observed,
                                 expected, z));
  require(z <= 5.0, ErrorKind::kNumeric,
          fmt::format("generation bug: {} = {:.4f}, expected {:.4f} (z = {:.1f})", what, observed,
                      expected, z));
}

double binomial_se(double p, double n) { return n > 0 ? std::sqrt(p * (1.0 - p) / n) : 0.0; }

}  // namespace

CohortDiagnostics verify_cohort(const SyntheticCohort& cohort) {
  const CohortSpec& spec = cohort.spec;
  CohortDiagnostics d;
  double band[2] = {0, 0}, band_lym[2] = {0, 0}, inner[2] = {0, 0}, inner_lym[2] = {0, 0};
  double off_on[2] = {0, 0}, slides[2] = {0, 0};
  double shift_sum[2] = {0, 0}, shift_n[2] = {0, 0};
  double msi_inner_expected = 0, msi_inner_var = 0;
  const Eigen::MatrixXd protos = tile_prototypes(spec.feature_dim, spec.prototype_scale);
  const int tex = spec.texture_begin();

  for (const auto& s : cohort.slides) {
    const int c = s.slide.labels.msi;
    slides[c] += 1;
    off_on[c] += s.offset_on ? 1 : 0;
    if (c == 1) {
      const double n_tiles = static_cast<double>(s.types.size());
      const double n_band = static_cast<double>(std::count(s.in_band.begin(), s.in_band.end(), true));
      const double q = spec.msi_interior_lym_rate(n_band / n_tiles);
      msi_inner_expected += q * (n_tiles - n_band);
      msi_inner_var += q * (1.0 - q) * (n_tiles - n_band);
    }
    for (std::size_t i = 0; i < s.types.size(); ++i) {
      const bool lym = s.types[i] == TileType::kLYM;
      if (s.in_band[i]) {
        band[c] += 1;
        band_lym[c] += lym;
      } else {
        inner[c] += 1;
        inner_lym[c] += lym;
        const int o = s.offset_on ? 1 : 0;
        const auto row = static_cast<Eigen::Index>(i);
        for (int k = tex; k < spec.feature_dim; ++k) {
          shift_sum[o] += s.slide.bag.features(row, k) -
                          protos(static_cast<Eigen::Index>(s.types[i]), k);
          shift_n[o] += 1;
        }
      }
    }
  }
  d.n_mss = static_cast<std::size_t>(slides[0]);
  d.n_msi = static_cast<std::size_t>(slides[1]);
  d.mss_band_lym_rate = band_lym[0] / band[0];
  d.msi_band_lym_rate = band_lym[1] / band[1];
  d.mss_interior_lym_rate = inner_lym[0] / inner[0];
  d.msi_interior_lym_rate = inner_lym[1] / inner[1];
  d.enrichment_ratio = d.msi_band_lym_rate / d.mss_band_lym_rate;
  const double p_band_msi = spec.msi_band_lym_rate();
  const double p_base = spec.lym_base_rate;
  d.expected_enrichment = p_band_msi / p_base;
  d.offset_rate_msi = off_on[1] / slides[1];
  d.offset_rate_mss = off_on[0] / slides[0];
  d.offset_magnitude_on = shift_n[1] > 0 ? shift_sum[1] / shift_n[1] : 0.0;
  d.offset_magnitude_off = shift_n[0] > 0 ? shift_sum[0] / shift_n[0] : 0.0;

  check_within(d, "MSI-H band LYM rate", d.msi_band_lym_rate, p_band_msi,
               binomial_se(p_band_msi, band[1]));
  check_within(d, "MSS band LYM rate", d.mss_band_lym_rate, p_base, binomial_se(p_base, band[0]));
  check_within(d, "MSI-H interior LYM rate", d.msi_interior_lym_rate,
               msi_inner_expected / inner[1], std::sqrt(msi_inner_var) / inner[1]);
  check_within(d, "MSS interior LYM rate", d.mss_interior_lym_rate, p_base,
               binomial_se(p_base, inner[0]));
  const double q_msi = 0.5 * (1.0 + spec.offset_label_coupling);
  const double q_mss = 0.5 * (1.0 - spec.offset_label_coupling);
  check_within(d, "offset rate (MSI-H)", d.offset_rate_msi, q_msi, binomial_se(q_msi, slides[1]));
  check_within(d, "offset rate (MSS)", d.offset_rate_mss, q_mss, binomial_se(q_mss, slides[0]));
  if (shift_n[1] > 0) {
    check_within(d, "interior texture shift (offset slides)", d.offset_magnitude_on,
                 spec.site_offset_scale, spec.noise_scale / std::sqrt(shift_n[1]));
  }
  if (shift_n[0] > 0) {
    check_within(d, "interior texture shift (other slides)", d.offset_magnitude_off, 0.0,
                 spec.noise_scale / std::sqrt(shift_n[0]));
  }
  return d;
}

}  // namespace msiprior
