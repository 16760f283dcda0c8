#include "msiprior/bag.hpp"

#include <cmath>

#include "msiprior/error.hpp"

namespace msiprior {

void SlideBag::validate() const {
  require(geometry.width_px > 0 && geometry.height_px > 0, ErrorKind::kInvalidInput,
          "slide '" + slide_id + "': geometry must be positive");
  require(static_cast<std::size_t>(features.rows()) == coords.size(),
          ErrorKind::kInvalidInput,
          "slide '" + slide_id + "': feature rows do not match tile count");
  for (const auto& c : coords) {
    require(c.x_px <= geometry.width_px && c.y_px <= geometry.height_px,
            ErrorKind::kInvalidInput, "slide '" + slide_id + "': tile outside slide bounds");
  }
  if (!has_probes()) return;
  require(static_cast<std::size_t>(probes.rows()) == coords.size() &&
              probes.cols() == probe::kNumClasses,
          ErrorKind::kInvalidInput, "slide '" + slide_id + "': probe matrix must be n x 9");
  for (Eigen::Index i = 0; i < probes.rows(); ++i) {
    const auto row = probes.row(i);
    require(row.minCoeff() >= 0.0 && row.maxCoeff() <= 1.0, ErrorKind::kInvalidInput,
            "slide '" + slide_id + "': probe probability outside [0,1]");
    // f32 storage on disk limits the achievable sum precision.
    require(std::abs(row.sum() - 1.0) <= 1e-5, ErrorKind::kInvalidInput,
            "slide '" + slide_id + "': probe vector does not sum to 1");
  }
}

SlideBag SlideBag::select(const std::vector<std::size_t>& rows) const {
  SlideBag out;
  out.slide_id = slide_id;
  out.geometry = geometry;
  out.coords.reserve(rows.size());
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  if (has_probes()) out.probes.resize(static_cast<Eigen::Index>(rows.size()), probes.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(rows[k]);
    out.coords.push_back(coords.at(rows[k]));
    out.features.row(static_cast<Eigen::Index>(k)) = features.row(r);
    if (has_probes()) out.probes.row(static_cast<Eigen::Index>(k)) = probes.row(r);
  }
  return out;
}

}  // namespace msiprior
