#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kwmlp/matrix.h"

// Shallow classifier trained on frozen embeddings.
namespace kwmlp::probe {

struct ProbeConfig {
  int hidden_units = 0;  // 0 = linear probe
  int epochs = 300;
  double lr = 0.01;
  double weight_decay = 0.0;
  bool standardize = true;  // z-score features with training statistics
  std::uint64_t seed = 0;
};

class ProbeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ProbeWeights {
  int input_dim = 0;
  int hidden_units = 0;
  int n_classes = 0;
  std::vector<double> feature_mean;   // empty when not standardizing
  std::vector<double> feature_scale;  // 1 / std
  Matrix W1;  // input_dim x hidden (hidden probes only)
  std::vector<double> b1;
  Matrix W2;  // (hidden or input_dim) x n_classes
  std::vector<double> b2;
};

struct ProbeResult {
  ProbeWeights weights;
  double accuracy = 0.0;  // on the training data
  std::vector<double> loss_history;
};

// Full-batch cross-entropy training with AdamW. Needs >= 2 rows and >= 2
// distinct labels.
ProbeResult fit_probe(const Matrix& embeddings, std::span<const int> labels,
                      const ProbeConfig& config = {});

Matrix probe_logits(const ProbeWeights& weights, const Matrix& embeddings);
std::vector<int> predict(const ProbeWeights& weights, const Matrix& embeddings);
// Exact-match fraction.
double evaluate_probe(const ProbeWeights& weights, const Matrix& embeddings,
                      std::span<const int> labels);

// {"task":..,"algorithm":..,"depth":..,"accuracy":..} on one line.
std::string result_json_line(const std::string& task, const std::string& algorithm, int depth,
                             double accuracy);

}  // namespace kwmlp::probe
