#include "msiprior/spatial_priors.hpp"

#include <algorithm>
#include <cmath>

namespace msiprior {

void PriorConfig::validate() const {
  require(radius_norm > 0.0 && radius_norm < 1.0, ErrorKind::kConfig,
          "radius must lie in (0, 1)");
  require(epsilon > 0.0, ErrorKind::kConfig, "epsilon must be positive");
}

NeighborIndex::NeighborIndex(const std::vector<TileCoord>& tiles,
                             const SlideGeometry& geom, const PriorConfig& cfg)
    : radius_(cfg.radius_norm) {
  cfg.validate();
  require(!tiles.empty(), ErrorKind::kInvalidInput, "neighbor index needs at least one tile");
  // Slightly oversized cells so rounding in t / cell never separates two
  // points within the radius by more than one cell.
  cell_ = radius_ * (1.0 + 1e-9);
  cells_per_axis_ = static_cast<std::size_t>(std::floor(1.0 / cell_)) + 1;

  u_.reserve(tiles.size());
  v_.reserve(tiles.size());
  const double w = static_cast<double>(geom.width_px);
  const double h = static_cast<double>(geom.height_px);
  for (const auto& t : tiles) {
    check_in_bounds(t, geom);
    u_.push_back(static_cast<double>(t.x_px) / w);
    v_.push_back(static_cast<double>(t.y_px) / h);
  }

  const std::size_t n_cells = cells_per_axis_ * cells_per_axis_;
  std::vector<std::size_t> cell_id(tiles.size());
  cell_start_.assign(n_cells + 1, 0);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    cell_id[i] = cell_of(v_[i]) * cells_per_axis_ + cell_of(u_[i]);
    ++cell_start_[cell_id[i] + 1];
  }
  for (std::size_t c = 0; c < n_cells; ++c) cell_start_[c + 1] += cell_start_[c];
  cell_items_.resize(tiles.size());
  std::vector<std::size_t> fill(cell_start_.begin(), cell_start_.end() - 1);
  for (std::size_t i = 0; i < tiles.size(); ++i) cell_items_[fill[cell_id[i]]++] = i;
}

std::size_t NeighborIndex::cell_of(double t) const {
  const auto c = static_cast<std::size_t>(std::floor(t / cell_));
  return std::min(c, cells_per_axis_ - 1);
}

std::vector<std::size_t> NeighborIndex::neighbors(std::size_t i) const {
  require(i < size(), ErrorKind::kInvalidInput, "tile index out of range");
  std::vector<std::size_t> out;
  for_each_neighbor(i, [&](std::size_t j) { out.push_back(j); });
  std::sort(out.begin(), out.end());
  return out;
}

double lin_score(std::size_t i, const NeighborIndex& index, const Eigen::MatrixXd& probes,
                 const PriorConfig& cfg) {
  require(probes.size() > 0, ErrorKind::kConfig,
          "local immune neighbourhood prior requires probe probabilities");
  require(static_cast<std::size_t>(probes.rows()) == index.size() &&
              probes.cols() == probe::kNumClasses,
          ErrorKind::kInvalidInput, "probe matrix must be n_tiles x 9");
  require(i < index.size(), ErrorKind::kInvalidInput, "tile index out of range");
  double lym = 0.0;
  double tum = 0.0;
  std::size_t count = 0;
  index.for_each_neighbor(i, [&](std::size_t j) {
    const auto r = static_cast<Eigen::Index>(j);
    lym += probes(r, probe::kLYM);
    tum += probes(r, probe::kTUM);
    ++count;
  });
  const double n = static_cast<double>(count);
  return lin_from_means(lym / n, tum / n, cfg.epsilon);
}

std::vector<PriorVector> compute_priors(const SlideBag& bag, const PriorConfig& cfg) {
  cfg.validate();
  require(!cfg.use_lin || bag.has_probes(), ErrorKind::kConfig,
          "slide '" + bag.slide_id + "': use_lin requires probe probabilities");
  std::vector<PriorVector> out(bag.n_tiles());
  if (cfg.use_pd) {
    for (std::size_t i = 0; i < bag.n_tiles(); ++i)
      out[i].pd = peripheral_distance(bag.coords[i], bag.geometry);
  }
  if (cfg.use_lin) {
    const NeighborIndex index(bag.coords, bag.geometry, cfg);
    for (std::size_t i = 0; i < bag.n_tiles(); ++i)
      out[i].lin = lin_score(i, index, bag.probes, cfg);
  }
  return out;
}

SlideBag augment_features(const SlideBag& bag, const PriorConfig& cfg) {
  cfg.validate();
  if (cfg.extra_dims() == 0) return bag;
  const auto priors = compute_priors(bag, cfg);
  SlideBag out = bag;
  const Eigen::Index d = bag.feature_dim();
  out.features.resize(bag.features.rows(), d + cfg.extra_dims());
  out.features.leftCols(d) = bag.features;
  for (std::size_t i = 0; i < priors.size(); ++i) {
    Eigen::Index col = d;
    const auto r = static_cast<Eigen::Index>(i);
    if (cfg.use_pd) out.features(r, col++) = *priors[i].pd;
    if (cfg.use_lin) out.features(r, col++) = *priors[i].lin;
  }
  return out;
}

}  // namespace msiprior
