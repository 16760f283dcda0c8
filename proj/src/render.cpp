#include "msiprior/render.hpp"

#include <cmath>
#include <fstream>

#include "msiprior/error.hpp"

namespace msiprior {

Eigen::VectorXd normalize_attention(const Eigen::VectorXd& attention) {
  require(attention.size() > 0, ErrorKind::kInvalidInput, "attention map has no tiles");
  const double lo = attention.minCoeff();
  const double hi = attention.maxCoeff();
  if (!(hi > lo)) return Eigen::VectorXd::Constant(attention.size(), 0.5);
  return (attention.array() - lo) / (hi - lo);
}

RgbImage render_attention(const SlideBag& bag, const Eigen::VectorXd& attention, int tile_px) {
  require(bag.n_tiles() > 0, ErrorKind::kInvalidInput, "cannot render a bag with zero tiles");
  require(static_cast<std::size_t>(attention.size()) == bag.n_tiles(), ErrorKind::kInvalidInput,
          "attention length does not match tile count");
  require(tile_px >= 1, ErrorKind::kInvalidInput, "tile_px must be >= 1");
  const auto step = static_cast<std::uint64_t>(tile_px);
  RgbImage img;
  img.width = static_cast<std::size_t>((bag.geometry.width_px + step - 1) / step);
  img.height = static_cast<std::size_t>((bag.geometry.height_px + step - 1) / step);
  require(img.width > 0 && img.height > 0, ErrorKind::kInvalidInput, "empty slide geometry");
  img.pixels.assign(3 * img.width * img.height, 0);
  const Eigen::VectorXd v = normalize_attention(attention);
  for (std::size_t i = 0; i < bag.n_tiles(); ++i) {
    const std::size_t x = std::min<std::size_t>(bag.coords[i].x_px / step, img.width - 1);
    const std::size_t y = std::min<std::size_t>(bag.coords[i].y_px / step, img.height - 1);
    const auto level = static_cast<std::uint8_t>(std::lround(255.0 * v(static_cast<Eigen::Index>(i))));
    const std::size_t o = 3 * (y * img.width + x);
    img.pixels[o] = level;
    img.pixels[o + 1] = level;
    img.pixels[o + 2] = 0;
  }
  return img;
}

void write_ppm(std::ostream& os, const RgbImage& image) {
  os << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.pixels.data()),
           static_cast<std::streamsize>(image.pixels.size()));
}

void write_ppm_file(const std::filesystem::path& path, const RgbImage& image) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot open '" + path.string() + "' for writing");
  write_ppm(out, image);
}

}  // namespace msiprior
