#pragma once

#include <span>
#include <vector>

#include "kwmlp/matrix.h"

// Elementwise and normalization primitives shared by the forward pass and
// the analytic backward pass.
namespace kwmlp::nn {

inline constexpr double kLayerNormEps = 1e-5;

// Exact erf-based GELU and its derivative.
double gelu(double x);
double gelu_grad(double x);

struct LayerNormCache {
  Matrix normalized;         // (x - mean) * rstd, per row
  std::vector<double> rstd;  // 1 / sqrt(var + eps), per row
};

// Normalizes each row of x over its columns, then applies scale and shift.
Matrix layer_norm(const Matrix& x, std::span<const double> scale,
                  std::span<const double> shift, LayerNormCache* cache = nullptr);

// Given dy, returns dx and accumulates into dscale / dshift.
Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& cache,
                           std::span<const double> scale, std::span<double> dscale,
                           std::span<double> dshift);

// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

}  // namespace kwmlp::nn
