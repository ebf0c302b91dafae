#include "kwmlp/interp_demo.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "kwmlp/scene.h"

namespace kwmlp::demo {
namespace {

Matrix reduce_rows(const Matrix& m, int target, DownsampleMode mode) {
  return mode == DownsampleMode::kDirect ? scene::linear_interp_time(m, target)
                                         : scene::iterative_downsample(m, target);
}

}  // namespace

DownsampleMode parse_mode(const std::string& name) {
  if (name == "direct") return DownsampleMode::kDirect;
  if (name == "iterative") return DownsampleMode::kIterative;
  throw std::invalid_argument("unknown downsample mode: " + name);
}

Matrix render_circle(int size) {
  if (size < 1) throw std::invalid_argument("render_circle: size must be >= 1");
  Matrix img(static_cast<std::size_t>(size), static_cast<std::size_t>(size));
  const double centre = size / 2.0;
  const double radius = size / 2.0 - 0.5;
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const double dist = std::hypot(r + 0.5 - centre, c + 0.5 - centre);
      if (std::abs(dist - radius) < 0.5) img(r, c) = 1.0;
    }
  }
  return img;
}

Matrix downsample_image(const Matrix& image, int target, DownsampleMode mode) {
  const Matrix rows_done = reduce_rows(image, target, mode);
  return reduce_rows(rows_done.transposed(), target, mode).transposed();
}

std::size_t count_nonzero(const Matrix& image, double threshold) {
  return static_cast<std::size_t>(std::count_if(image.flat().begin(), image.flat().end(),
                                                [&](double v) { return v > threshold; }));
}

std::vector<std::uint8_t> encode_pgm(const Matrix& image) {
  const std::string header = "P5\n" + std::to_string(image.cols()) + " " +
                             std::to_string(image.rows()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (double v : image.flat()) {
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  return out;
}

}  // namespace kwmlp::demo
