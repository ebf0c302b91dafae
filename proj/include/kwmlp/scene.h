#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "kwmlp/encoder.h"
#include "kwmlp/matrix.h"

namespace kwmlp::scene {

enum class Algorithm { kIterative, kSingle, kMean };

std::string to_string(Algorithm a);
// Accepts "iterative", "single", "mean".
Algorithm parse_algorithm(const std::string& name);

struct SceneConfig {
  int target_steps = 16;  // N_S
  Algorithm algorithm = Algorithm::kIterative;
};

class SceneError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Linear resampling of rows (the time axis). Output row j reads input
// coordinate (j + 0.5) * N / M - 0.5, clamped to [0, N - 1]; channels are
// independent.
Matrix linear_interp_time(const Matrix& x, int target);

// Smallest k >= 0 with N_S * 2^k >= N_T, i.e. ceil(log2(N_T / N_S)).
int num_interp_steps(int n_timestamps, int n_scene);

// Row counts visited by the iterative schedule, starting with N_T.
std::vector<int> iterative_schedule(int n_timestamps, int n_scene);

// Repeated ~2x reductions ending at exactly target rows. Falls back to one
// pass when upsampling.
Matrix iterative_downsample(const Matrix& x, int target);

// Row-major (time-major) flattening of the reduced matrix.
std::vector<double> scene_iterative(const Matrix& timestamps, const SceneConfig& config = {});
std::vector<double> scene_single(const Matrix& timestamps, const SceneConfig& config = {});
// Contiguous groups [floor(g N / N_S), floor((g + 1) N / N_S)), averaged.
// Throws SceneError when N_T < N_S.
std::vector<double> scene_mean(const Matrix& timestamps, const SceneConfig& config = {});

// Dispatches on config.algorithm.
std::vector<double> scene_embedding(const Matrix& timestamps, const SceneConfig& config = {});

}  // namespace kwmlp::scene
