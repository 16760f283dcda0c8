#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace msiprior {

/// Slide dimensions in pixels.
struct SlideGeometry {
  std::uint64_t width_px = 0;
  std::uint64_t height_px = 0;
};

/// Top-left pixel coordinate of a tile.
struct TileCoord {
  std::uint64_t x_px = 0;
  std::uint64_t y_px = 0;

  friend bool operator==(const TileCoord&, const TileCoord&) = default;
};

/// Nine-class tissue probe output, fixed class order.
namespace probe {
inline constexpr int kNumClasses = 9;
inline constexpr int kADI = 0;
inline constexpr int kBACK = 1;
inline constexpr int kDEB = 2;
inline constexpr int kLYM = 3;
inline constexpr int kMUC = 4;
inline constexpr int kMUS = 5;
inline constexpr int kNORM = 6;
inline constexpr int kSTR = 7;
inline constexpr int kTUM = 8;
}  // namespace probe

/// One slide: tile coordinates, per-tile features (rows) and optional probe
/// probabilities (n x 9, or empty).
struct SlideBag {
  std::string slide_id;
  SlideGeometry geometry;
  std::vector<TileCoord> coords;
  Eigen::MatrixXd features;
  Eigen::MatrixXd probes;

  std::size_t n_tiles() const { return coords.size(); }
  Eigen::Index feature_dim() const { return features.cols(); }
  bool has_probes() const { return probes.size() > 0; }

  /// Throws kInvalidInput if geometry, coordinate bounds, row counts or probe
  /// vectors are inconsistent.
  void validate() const;

  /// Bag restricted to the given tile indices, in that order.
  SlideBag select(const std::vector<std::size_t>& rows) const;
};

}  // namespace msiprior

namespace msiprior {

/// Slide-level labels. MSS is always the complement of MSI.
struct LabelSet {
  int msi = 0;
  int hypermut = 0;
  std::string site;

  int mss() const { return 1 - msi; }
};

struct LabeledSlide {
  SlideBag bag;
  LabelSet labels;
};

using Cohort = std::vector<LabeledSlide>;

}  // namespace msiprior
