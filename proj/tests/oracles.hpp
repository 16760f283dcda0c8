#pragma once

// Reference implementations used by the unit tests and the acceptance binary.
// Each one evaluates its formula directly, in a different order or precision
// from the library code.

#include <algorithm>
#include <cmath>
#include <vector>

#include "msiprior/bag.hpp"

namespace msiprior::oracle {

// Integer min on each axis, ratio compared by cross multiplication, one
// division at the end.
inline double peripheral_distance(const TileCoord& t, const SlideGeometry& g) {
  const auto mx = std::min(t.x_px, g.width_px - t.x_px);
  const auto my = std::min(t.y_px, g.height_px - t.y_px);
  const bool x_closer = static_cast<unsigned __int128>(mx) * g.height_px <=
                        static_cast<unsigned __int128>(my) * g.width_px;
  const long double m = x_closer ? static_cast<long double>(mx) / g.width_px
                                 : static_cast<long double>(my) / g.height_px;
  return static_cast<double>(1.0L - 2.0L * m);
}

inline std::vector<std::size_t> neighbors(const SlideBag& bag, std::size_t i, double r) {
  std::vector<std::size_t> out;
  const long double w = bag.geometry.width_px, h = bag.geometry.height_px;
  for (std::size_t j = 0; j < bag.n_tiles(); ++j) {
    const long double du = bag.coords[j].x_px / w - bag.coords[i].x_px / w;
    const long double dv = bag.coords[j].y_px / h - bag.coords[i].y_px / h;
    if (std::sqrt(du * du + dv * dv) <= r) out.push_back(j);
  }
  return out;
}

inline double lin_score(const SlideBag& bag, std::size_t i, double r, double eps) {
  long double lym = 0, tum = 0;
  const auto nb = neighbors(bag, i, r);
  for (auto j : nb) {
    lym += bag.probes(static_cast<Eigen::Index>(j), probe::kLYM);
    tum += bag.probes(static_cast<Eigen::Index>(j), probe::kTUM);
  }
  return static_cast<double>(std::log((lym / nb.size() + eps) / (tum / nb.size() + eps)));
}

// Pairwise counting over every (positive, negative) pair; ties count 1/2.
inline double auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      den += 1.0;
      num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return num / den;
}

}  // namespace msiprior::oracle
