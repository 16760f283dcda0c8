#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msiprior/bag.hpp"

namespace msiprior {

/// Planted tile types. Each maps to one probe class.
enum class TileType : std::uint8_t { kLYM = 0, kTUM = 1, kSTR = 2, kOther = 3 };
inline constexpr int kNumTileTypes = 4;

int probe_class(TileType t);

/// Parameters of a synthetic cohort from one site.
///
/// Slides are full rectangular tile grids. MSI-H slides multiply the LYM
/// rate by `lym_enrichment` inside the peripheral band (tiles with peripheral
/// distance above 1 - 2 * ring_width_norm). A per-slide "site offset" shifts
/// the texture dims of interior tiles; its presence is coupled to the MSI
/// label with strength `offset_label_coupling`:
///   P(offset | MSI-H) = (1 + coupling) / 2,  P(offset | MSS) = (1 - coupling) / 2.
/// `lym_conservation` in [0, 1] depletes MSI-H interiors by that fraction of
/// the band excess: 0 leaves interiors at the base rate, 1 makes the expected
/// LYM count per slide equal to MSS so the enrichment is visible only through
/// tile position.
struct CohortSpec {
  int n_slides = 120;
  double msi_fraction = 0.2;
  int tiles_min = 100;
  int tiles_max = 400;
  int feature_dim = 32;
  int grid_pitch_px = 256;
  double ring_width_norm = 0.10;
  double lym_base_rate = 0.15;
  double tum_rate = 0.40;
  double str_rate = 0.20;
  double lym_enrichment = 2.5;
  double lym_conservation = 0.0;
  double site_offset_scale = 1.0;
  double offset_label_coupling = 0.6;
  double noise_scale = 1.0;
  double prototype_scale = 1.0;
  double probe_softening = 0.3;
  double hypermut_flip = 0.15;
  std::uint64_t seed = 0;

  void validate() const;
  int n_msi() const;
  /// Texture dims receiving the site offset: the last quarter of the features.
  int texture_begin() const { return feature_dim - feature_dim / 4; }
  /// LYM rates for an MSI-H slide whose band holds `band_fraction` of tiles.
  double msi_band_lym_rate() const;
  double msi_interior_lym_rate(double band_fraction) const;
};

/// Training-site cohort: ~20% MSI-H, site offset coupled to the label.
CohortSpec default_train_spec(std::uint64_t seed = 0);
/// External-site cohort: 50 slides, 2 MSI-H, offset independent of the label.
CohortSpec default_external_spec(std::uint64_t seed = 0);
/// No planted signal: no enrichment and no label-coupled offset.
CohortSpec null_spec(std::uint64_t seed = 0);

struct SyntheticSlide {
  LabeledSlide slide;
  std::vector<TileType> types;
  std::vector<bool> in_band;
  bool offset_on = false;
};

struct SyntheticCohort {
  CohortSpec spec;
  std::string site;
  std::vector<SyntheticSlide> slides;

  Cohort cohort() const;
};

/// Pure function of (spec, site); per-slide streams keyed by (seed, site, index).
SyntheticCohort generate_cohort(const CohortSpec& spec, const std::string& site);

/// Fixed feature prototypes shared by every cohort and site.
Eigen::MatrixXd tile_prototypes(int feature_dim, double scale);

struct CohortDiagnostics {
  double msi_band_lym_rate = 0.0;   // pooled over MSI-H slides
  double mss_band_lym_rate = 0.0;   // pooled over MSS slides
  double msi_interior_lym_rate = 0.0;
  double mss_interior_lym_rate = 0.0;
  double enrichment_ratio = 0.0;    // msi band / mss band
  double expected_enrichment = 0.0;
  double offset_magnitude_on = 0.0;   // mean texture shift, offset slides
  double offset_magnitude_off = 0.0;  // same for slides without offset
  double offset_rate_msi = 0.0;
  double offset_rate_mss = 0.0;
  std::size_t n_msi = 0;
  std::size_t n_mss = 0;
  std::vector<std::string> checks;  // one line per verified statistic
};

/// Measures planted-signal statistics from the ground truth and checks them
/// against the spec. Throws kNumeric ("generation bug") when a statistic lies
/// more than 5 standard errors from its expected value.
CohortDiagnostics verify_cohort(const SyntheticCohort& cohort);

/// Fraction of band tiles planted LYM, per slide. Reads ground truth only.
double band_lym_fraction(const SyntheticSlide& slide);

}  // namespace msiprior
