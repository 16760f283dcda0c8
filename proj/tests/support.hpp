#pragma once

#include <cmath>
#include <vector>

#include "msiprior/bag.hpp"
#include "msiprior/error.hpp"
#include "msiprior/rng.hpp"

namespace msiprior::testing {

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, CounterRng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal();
  return m;
}

inline Eigen::MatrixXd random_probes(Eigen::Index rows, CounterRng& rng) {
  Eigen::MatrixXd p(rows, probe::kNumClasses);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (int k = 0; k < probe::kNumClasses; ++k) p(i, k) = rng.uniform() + 1e-3;
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

/// Random tiles scattered over a random slide, with features and probes.
inline SlideBag random_bag(std::size_t n, Eigen::Index dim, CounterRng& rng) {
  SlideBag bag;
  bag.slide_id = "rand";
  bag.geometry = {1000 + rng.below(9000), 1000 + rng.below(9000)};
  for (std::size_t i = 0; i < n; ++i)
    bag.coords.push_back({rng.below(bag.geometry.width_px + 1), rng.below(bag.geometry.height_px + 1)});
  bag.features = random_matrix(static_cast<Eigen::Index>(n), dim, rng);
  bag.probes = random_probes(static_cast<Eigen::Index>(n), rng);
  return bag;
}

inline double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace msiprior::testing
