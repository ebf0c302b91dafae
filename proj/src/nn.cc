#include "kwmlp/nn.h"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace kwmlp::nn {

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Matrix layer_norm(const Matrix& x, std::span<const double> scale,
                  std::span<const double> shift, LayerNormCache* cache) {
  const std::size_t n = x.cols();
  if (scale.size() != n || shift.size() != n) throw ShapeError("layer_norm: parameter length");
  Matrix y(x.rows(), n);
  if (cache != nullptr) {
    cache->normalized = Matrix(x.rows(), n);
    cache->rstd.assign(x.rows(), 0.0);
  }
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    auto out = y.row(r);
    for (std::size_t c = 0; c < n; ++c) {
      const double xhat = (row[c] - mean) * rstd;
      out[c] = xhat * scale[c] + shift[c];
      if (cache != nullptr) cache->normalized(r, c) = xhat;
    }
    if (cache != nullptr) cache->rstd[r] = rstd;
  }
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& cache,
                           std::span<const double> scale, std::span<double> dscale,
                           std::span<double> dshift) {
  const std::size_t n = dy.cols();
  require_shape(dy, cache.normalized.rows(), cache.normalized.cols(), "layer_norm_backward dy");
  Matrix dx(dy.rows(), n);
  std::vector<double> dxhat(n);
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    auto g = dy.row(r);
    auto xhat = cache.normalized.row(r);
    double mean_g = 0.0, mean_gx = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      dscale[c] += g[c] * xhat[c];
      dshift[c] += g[c];
      dxhat[c] = g[c] * scale[c];
      mean_g += dxhat[c];
      mean_gx += dxhat[c] * xhat[c];
    }
    mean_g /= static_cast<double>(n);
    mean_gx /= static_cast<double>(n);
    auto out = dx.row(r);
    for (std::size_t c = 0; c < n; ++c) {
      out[c] = cache.rstd[r] * (dxhat[c] - mean_g - xhat[c] * mean_gx);
    }
  }
  return dx;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  const double mx = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

}  // namespace kwmlp::nn
