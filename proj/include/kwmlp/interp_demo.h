#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kwmlp/matrix.h"

// Large-factor image downsampling with the scene module's interpolation:
// one direct pass versus repeated halving.
namespace kwmlp::demo {

enum class DownsampleMode { kDirect, kIterative };

DownsampleMode parse_mode(const std::string& name);

// size x size image of a one-pixel-thick ring of diameter `size`.
Matrix render_circle(int size);

// Separable: rows first, then columns, each by linear_interp_time.
Matrix downsample_image(const Matrix& image, int target, DownsampleMode mode);

// Pixels strictly above threshold.
std::size_t count_nonzero(const Matrix& image, double threshold = 0.0);

// Binary PGM (P5), 8-bit; values clamped to [0, 1] and scaled to 255.
std::vector<std::uint8_t> encode_pgm(const Matrix& image);

}  // namespace kwmlp::demo
