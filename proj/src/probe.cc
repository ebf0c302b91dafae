#include "kwmlp/probe.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <json.hpp>

#include "kwmlp/kernels.h"
#include "kwmlp/nn.h"
#include "kwmlp/trainer.h"

namespace kwmlp::probe {
namespace {

void glorot(Matrix& m, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : m.flat()) v = dist(rng);
}

Matrix standardized(const ProbeWeights& w, const Matrix& x) {
  if (static_cast<int>(x.cols()) != w.input_dim) {
    throw ShapeError("probe: expected " + std::to_string(w.input_dim) + " features, got " +
                     std::to_string(x.cols()));
  }
  Matrix out = x;
  if (w.feature_mean.empty()) return out;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      row[c] = (row[c] - w.feature_mean[c]) * w.feature_scale[c];
    }
  }
  return out;
}

struct Activations {
  Matrix input;
  Matrix pre_hidden;
  Matrix hidden;
  Matrix logits;
};

Activations run(const ProbeWeights& w, const Matrix& x) {
  Activations a;
  a.input = standardized(w, x);
  const Matrix* top = &a.input;
  if (w.hidden_units > 0) {
    kernels::matmul(a.input, w.W1, a.pre_hidden);
    kernels::add_row_bias(a.pre_hidden, w.b1);
    a.hidden = a.pre_hidden;
    for (double& v : a.hidden.flat()) v = nn::gelu(v);
    top = &a.hidden;
  }
  kernels::matmul(*top, w.W2, a.logits);
  kernels::add_row_bias(a.logits, w.b2);
  return a;
}

}  // namespace

ProbeResult fit_probe(const Matrix& embeddings, std::span<const int> labels,
                      const ProbeConfig& config) {
  const std::size_t n = embeddings.rows();
  const std::size_t e = embeddings.cols();
  if (labels.size() != n) throw ShapeError("fit_probe: label count does not match rows");
  if (n < 2 || e == 0) throw ProbeError("fit_probe: need at least two examples");
  if (config.hidden_units < 0 || config.epochs < 1 || !(config.lr > 0.0)) {
    throw ProbeError("fit_probe: invalid configuration");
  }
  for (int l : labels) {
    if (l < 0) throw ProbeError("fit_probe: negative label");
  }
  const std::set<int> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2) throw ProbeError("fit_probe: labels contain a single class");

  ProbeWeights w;
  w.input_dim = static_cast<int>(e);
  w.hidden_units = config.hidden_units;
  w.n_classes = *distinct.rbegin() + 1;
  if (config.standardize) {
    w.feature_mean.assign(e, 0.0);
    w.feature_scale.assign(e, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < e; ++c) w.feature_mean[c] += embeddings(r, c);
    }
    for (double& m : w.feature_mean) m /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < e; ++c) {
        const double dv = embeddings(r, c) - w.feature_mean[c];
        w.feature_scale[c] += dv * dv;
      }
    }
    for (double& s : w.feature_scale) {
      const double sd = std::sqrt(s / static_cast<double>(n));
      s = sd > 1e-12 ? 1.0 / sd : 1.0;
    }
  }

  std::mt19937_64 rng(config.seed);
  const auto k = static_cast<std::size_t>(w.n_classes);
  const std::size_t top_dim = w.hidden_units > 0 ? static_cast<std::size_t>(w.hidden_units) : e;
  if (w.hidden_units > 0) {
    w.W1 = Matrix(e, top_dim);
    glorot(w.W1, rng);
    w.b1.assign(top_dim, 0.0);
  }
  w.W2 = Matrix(top_dim, k);
  glorot(w.W2, rng);
  w.b2.assign(k, 0.0);

  struct Slot {
    std::span<double> w;
    std::vector<double> g, m, v;
    bool decay;
  };
  std::vector<Slot> slots;
  auto add_slot = [&](std::span<double> values, bool decay) {
    slots.push_back({values, std::vector<double>(values.size()), std::vector<double>(values.size()),
                     std::vector<double>(values.size()), decay});
  };
  if (w.hidden_units > 0) {
    add_slot(w.W1.flat(), true);
    add_slot(w.b1, false);
  }
  add_slot(w.W2.flat(), true);
  add_slot(w.b2, false);

  const train::AdamHyper hyper{0.9, 0.999, 1e-8, config.weight_decay};
  ProbeResult result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const Activations a = run(w, embeddings);
    Matrix dlogits(n, k);
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const auto lg = train::loss_label_smoothed_ce(a.logits.row(r), labels[r], 0.0);
      loss += lg.loss;
      for (std::size_t j = 0; j < k; ++j) dlogits(r, j) = lg.grad[j] / static_cast<double>(n);
    }
    result.loss_history.push_back(loss / static_cast<double>(n));

    for (auto& s : slots) std::fill(s.g.begin(), s.g.end(), 0.0);
    Slot& gW2 = slots[slots.size() - 2];
    Slot& gb2 = slots[slots.size() - 1];
    const Matrix& top = w.hidden_units > 0 ? a.hidden : a.input;
    Matrix dW2;
    kernels::matmul_tn(top, dlogits, dW2);
    std::copy(dW2.flat().begin(), dW2.flat().end(), gW2.g.begin());
    kernels::accumulate_col_sums(dlogits, gb2.g);
    if (w.hidden_units > 0) {
      Matrix dhidden;
      kernels::matmul_nt(dlogits, w.W2, dhidden);
      for (std::size_t i = 0; i < dhidden.size(); ++i) {
        dhidden.data()[i] *= nn::gelu_grad(a.pre_hidden.data()[i]);
      }
      Matrix dW1;
      kernels::matmul_tn(a.input, dhidden, dW1);
      std::copy(dW1.flat().begin(), dW1.flat().end(), slots[0].g.begin());
      kernels::accumulate_col_sums(dhidden, slots[1].g);
    }
    for (auto& s : slots) {
      train::adamw_update(s.w, s.g, s.m, s.v, static_cast<std::uint64_t>(epoch + 1), config.lr,
                          hyper, s.decay);
    }
  }
  result.accuracy = evaluate_probe(w, embeddings, labels);
  result.weights = std::move(w);
  return result;
}

Matrix probe_logits(const ProbeWeights& weights, const Matrix& embeddings) {
  return run(weights, embeddings).logits;
}

std::vector<int> predict(const ProbeWeights& weights, const Matrix& embeddings) {
  const Matrix logits = probe_logits(weights, embeddings);
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

double evaluate_probe(const ProbeWeights& weights, const Matrix& embeddings,
                      std::span<const int> labels) {
  if (labels.size() != embeddings.rows()) {
    throw ShapeError("evaluate_probe: label count does not match rows");
  }
  if (labels.empty()) return 0.0;
  const auto pred = predict(weights, embeddings);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::string result_json_line(const std::string& task, const std::string& algorithm, int depth,
                             double accuracy) {
  nlohmann::ordered_json j;
  j["task"] = task;
  j["algorithm"] = algorithm;
  j["depth"] = depth;
  j["accuracy"] = accuracy;
  return j.dump();
}

}  // namespace kwmlp::probe
