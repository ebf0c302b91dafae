#include "kwmlp/scene.h"

#include <algorithm>
#include <cmath>

namespace kwmlp::scene {
namespace {

std::vector<double> flatten(const Matrix& m) { return m.values(); }

void check_input(const Matrix& x, const SceneConfig& config) {
  if (x.rows() == 0 || x.cols() == 0) throw SceneError("scene: empty timestamp embeddings");
  if (config.target_steps < 1) throw SceneError("scene: target_steps must be >= 1");
}

}  // namespace

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kIterative:
      return "iterative";
    case Algorithm::kSingle:
      return "single";
    case Algorithm::kMean:
      return "mean";
  }
  return "unknown";
}

Algorithm parse_algorithm(const std::string& name) {
  if (name == "iterative") return Algorithm::kIterative;
  if (name == "single") return Algorithm::kSingle;
  if (name == "mean") return Algorithm::kMean;
  throw SceneError("unknown scene algorithm: " + name);
}

Matrix linear_interp_time(const Matrix& x, int target) {
  if (x.rows() == 0) throw SceneError("linear_interp_time: empty input");
  if (target < 1) throw SceneError("linear_interp_time: target must be >= 1");
  const auto n = static_cast<long>(x.rows());
  const auto m = static_cast<std::size_t>(target);
  const double ratio = static_cast<double>(n) / static_cast<double>(target);
  Matrix out(m, x.cols());
  for (std::size_t j = 0; j < m; ++j) {
    double c = (static_cast<double>(j) + 0.5) * ratio - 0.5;
    c = std::clamp(c, 0.0, static_cast<double>(n - 1));
    const long i0 = static_cast<long>(std::floor(c));
    const long i1 = std::min(i0 + 1, n - 1);
    const double lambda = c - static_cast<double>(i0);
    auto a = x.row(static_cast<std::size_t>(i0));
    auto b = x.row(static_cast<std::size_t>(i1));
    auto o = out.row(j);
    for (std::size_t k = 0; k < o.size(); ++k) o[k] = a[k] + lambda * (b[k] - a[k]);
  }
  return out;
}

int num_interp_steps(int n_timestamps, int n_scene) {
  if (n_timestamps < 1 || n_scene < 1) throw SceneError("num_interp_steps: sizes must be >= 1");
  int k = 0;
  long long reach = n_scene;
  while (reach < n_timestamps) {
    reach *= 2;
    ++k;
  }
  return k;
}

std::vector<int> iterative_schedule(int n_timestamps, int n_scene) {
  std::vector<int> sizes{n_timestamps};
  if (n_timestamps < n_scene) {
    sizes.push_back(n_scene);
    return sizes;
  }
  const int steps = num_interp_steps(n_timestamps, n_scene);
  int current = n_timestamps;
  for (int i = 0; i < steps; ++i) {
    current = (i == steps - 1) ? n_scene : std::max(n_scene, (current + 1) / 2);
    sizes.push_back(current);
  }
  return sizes;
}

Matrix iterative_downsample(const Matrix& x, int target) {
  const auto sizes = iterative_schedule(static_cast<int>(x.rows()), target);
  Matrix current = x;
  for (std::size_t i = 1; i < sizes.size(); ++i) current = linear_interp_time(current, sizes[i]);
  return current;
}

std::vector<double> scene_iterative(const Matrix& timestamps, const SceneConfig& config) {
  check_input(timestamps, config);
  return flatten(iterative_downsample(timestamps, config.target_steps));
}

std::vector<double> scene_single(const Matrix& timestamps, const SceneConfig& config) {
  check_input(timestamps, config);
  return flatten(linear_interp_time(timestamps, config.target_steps));
}

std::vector<double> scene_mean(const Matrix& timestamps, const SceneConfig& config) {
  check_input(timestamps, config);
  const std::size_t n = timestamps.rows();
  const auto groups = static_cast<std::size_t>(config.target_steps);
  if (n < groups) {
    throw SceneError("scene_mean: " + std::to_string(n) + " timestamps cannot fill " +
                     std::to_string(groups) + " groups");
  }
  Matrix out(groups, timestamps.cols());
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t begin = g * n / groups;
    const std::size_t end = (g + 1) * n / groups;
    // Mean of deviations from the group's first row, clamped to the group's
    // range: constants come out bit-exact and values stay in bounds.
    auto o = out.row(g);
    const auto first = timestamps.row(begin);
    for (std::size_t k = 0; k < o.size(); ++k) {
      double dev = 0.0, lo = first[k], hi = first[k];
      for (std::size_t r = begin; r < end; ++r) {
        const double v = timestamps(r, k);
        dev += v - first[k];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      o[k] = std::clamp(first[k] + dev / static_cast<double>(end - begin), lo, hi);
    }
  }
  return flatten(out);
}

std::vector<double> scene_embedding(const Matrix& timestamps, const SceneConfig& config) {
  switch (config.algorithm) {
    case Algorithm::kIterative:
      return scene_iterative(timestamps, config);
    case Algorithm::kSingle:
      return scene_single(timestamps, config);
    case Algorithm::kMean:
      return scene_mean(timestamps, config);
  }
  throw SceneError("scene_embedding: bad algorithm");
}

}  // namespace kwmlp::scene
