#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <vector>

#include "msiprior/bag.hpp"

namespace msiprior {

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB

  std::array<std::uint8_t, 3> at(std::size_t x, std::size_t y) const {
    const std::size_t o = 3 * (y * width + x);
    return {pixels[o], pixels[o + 1], pixels[o + 2]};
  }
};

/// Min-max scaling to [0, 1]; a constant vector maps to 0.5 everywhere.
Eigen::VectorXd normalize_attention(const Eigen::VectorXd& attention);

/// One pixel per tile at (x / tile_px, y / tile_px) on a black canvas of
/// ceil(W / tile_px) x ceil(H / tile_px); colour R = G = round(255 v), B = 0.
RgbImage render_attention(const SlideBag& bag, const Eigen::VectorXd& attention, int tile_px);

/// Binary PPM (P6, maxval 255).
void write_ppm(std::ostream& os, const RgbImage& image);
void write_ppm_file(const std::filesystem::path& path, const RgbImage& image);

}  // namespace msiprior
