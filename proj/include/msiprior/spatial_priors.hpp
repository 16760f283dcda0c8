#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "msiprior/bag.hpp"
#include "msiprior/error.hpp"

namespace msiprior {

struct PriorConfig {
  double radius_norm = 0.10;
  double epsilon = 1e-6;
  bool use_pd = false;
  bool use_lin = false;

  void validate() const;
  int extra_dims() const { return int(use_pd) + int(use_lin); }
};

/// Per-tile prior scalars; each field is present iff enabled in PriorConfig.
struct PriorVector {
  std::optional<double> pd;
  std::optional<double> lin;
};

inline void check_in_bounds(const TileCoord& tile, const SlideGeometry& geom) {
  require(geom.width_px > 0 && geom.height_px > 0, ErrorKind::kInvalidInput,
          "slide geometry must have positive width and height");
  require(tile.x_px <= geom.width_px && tile.y_px <= geom.height_px,
          ErrorKind::kInvalidInput,
          "tile (" + std::to_string(tile.x_px) + ", " + std::to_string(tile.y_px) +
              ") outside slide " + std::to_string(geom.width_px) + "x" +
              std::to_string(geom.height_px));
}

/// 1 at the slide boundary, 0 at the exact centre. Uses the top-left
/// coordinate of the tile.
template <typename Scalar = double>
Scalar peripheral_distance(const TileCoord& tile, const SlideGeometry& geom) {
  check_in_bounds(tile, geom);
  const Scalar w = static_cast<Scalar>(geom.width_px);
  const Scalar h = static_cast<Scalar>(geom.height_px);
  const Scalar x = static_cast<Scalar>(tile.x_px);
  const Scalar y = static_cast<Scalar>(tile.y_px);
  const Scalar d_left = x / w;
  const Scalar d_right = (w - x) / w;
  const Scalar d_top = y / h;
  const Scalar d_bottom = (h - y) / h;
  return Scalar(1) - Scalar(2) * std::min({d_left, d_right, d_top, d_bottom});
}

/// log((lym + eps) / (tum + eps)), written as a difference of logs so that
/// swapping the two channels negates the result exactly.
template <typename Scalar = double>
Scalar lin_from_means(Scalar lym_mean, Scalar tum_mean, Scalar epsilon) {
  return std::log(lym_mean + epsilon) - std::log(tum_mean + epsilon);
}

/// Uniform grid over the normalized unit square with cell size equal to the
/// query radius. Answers radius queries by scanning the 3x3 block of cells
/// around the query cell and filtering by exact distance. Immutable after
/// construction.
class NeighborIndex {
 public:
  NeighborIndex(const std::vector<TileCoord>& tiles, const SlideGeometry& geom,
                const PriorConfig& cfg);

  std::size_t size() const { return u_.size(); }
  double radius() const { return radius_; }

  /// Indices of all tiles within the radius of tile i (including i), ascending.
  std::vector<std::size_t> neighbors(std::size_t i) const;

  template <typename Fn>
  void for_each_neighbor(std::size_t i, Fn&& fn) const;

  double u(std::size_t i) const { return u_[i]; }
  double v(std::size_t i) const { return v_[i]; }

 private:
  std::size_t cell_of(double t) const;

  double radius_;
  double cell_;
  std::size_t cells_per_axis_;
  std::vector<double> u_, v_;
  // CSR layout: cell_start_[c]..cell_start_[c+1] indexes into cell_items_.
  std::vector<std::size_t> cell_start_;
  std::vector<std::size_t> cell_items_;
};

template <typename Fn>
void NeighborIndex::for_each_neighbor(std::size_t i, Fn&& fn) const {
  const std::size_t ci = cell_of(u_[i]);
  const std::size_t cj = cell_of(v_[i]);
  const double r2 = radius_ * radius_;
  const std::size_t i0 = ci == 0 ? 0 : ci - 1;
  const std::size_t j0 = cj == 0 ? 0 : cj - 1;
  const std::size_t i1 = std::min(ci + 1, cells_per_axis_ - 1);
  const std::size_t j1 = std::min(cj + 1, cells_per_axis_ - 1);
  for (std::size_t cy = j0; cy <= j1; ++cy) {
    for (std::size_t cx = i0; cx <= i1; ++cx) {
      const std::size_t c = cy * cells_per_axis_ + cx;
      for (std::size_t k = cell_start_[c]; k < cell_start_[c + 1]; ++k) {
        const std::size_t j = cell_items_[k];
        const double du = u_[j] - u_[i];
        const double dv = v_[j] - v_[i];
        if (du * du + dv * dv <= r2) fn(j);
      }
    }
  }
}

/// Local immune neighbourhood score of tile i: log ratio of the mean LYM and
/// mean TUM probe probabilities over the tile's neighbourhood.
double lin_score(std::size_t i, const NeighborIndex& index,
                 const Eigen::MatrixXd& probes, const PriorConfig& cfg);

std::vector<PriorVector> compute_priors(const SlideBag& bag, const PriorConfig& cfg);

/// Appends PD then LIN columns to the features. The original columns are
/// copied unchanged.
SlideBag augment_features(const SlideBag& bag, const PriorConfig& cfg);

}  // namespace msiprior
