#include "kwmlp/ablation.h"

#include <algorithm>
#include <stdexcept>

namespace kwmlp::ablation {

nlohmann::ordered_json run_ablation(const AblationOptions& options,
                                    const std::optional<ModelWeights>& weights) {
  const ModelWeights model =
      weights ? *weights : init_weights(options.encoder, options.encoder_seed);
  for (int depth : options.depths) {
    if (depth < 1 || depth > model.config.L) throw std::out_of_range("ablation: depth out of range");
  }
  if (!(options.train_fraction > 0.0 && options.train_fraction < 1.0)) {
    throw std::invalid_argument("ablation: train_fraction must be in (0, 1)");
  }

  const auto clips = synth::make_task(options.task);
  const std::size_t n = clips.size();
  const std::size_t n_depths = options.depths.size();
  const std::size_t n_algs = options.algorithms.size();
  const std::size_t d = static_cast<std::size_t>(model.config.d);
  const std::size_t T = static_cast<std::size_t>(model.config.T);
  const scene::SceneConfig base{};
  const std::size_t width = static_cast<std::size_t>(base.target_steps) * d;

  // scene[a][k] holds one row per clip.
  std::vector<std::vector<Matrix>> scenes(n_algs, std::vector<Matrix>(n_depths, Matrix(n, width)));
  const long clip_count = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < clip_count; ++i) {
    const auto mfccs = dsp::audio_to_mfccs(clips[static_cast<std::size_t>(i)].audio);
    std::vector<Matrix> stamps(n_depths, Matrix(T * mfccs.size(), d));
    for (std::size_t s = 0; s < mfccs.size(); ++s) {
      const auto outs = encode_segment_depths(mfccs[s], model, options.depths);
      for (std::size_t k = 0; k < n_depths; ++k) {
        std::copy(outs[k].data(), outs[k].data() + outs[k].size(), stamps[k].data() + s * T * d);
      }
    }
    for (std::size_t a = 0; a < n_algs; ++a) {
      for (std::size_t k = 0; k < n_depths; ++k) {
        const auto v = scene::scene_embedding(stamps[k], {base.target_steps, options.algorithms[a]});
        std::copy(v.begin(), v.end(), scenes[a][k].row(static_cast<std::size_t>(i)).begin());
      }
    }
  }

  const std::size_t n_train =
      std::clamp<std::size_t>(static_cast<std::size_t>(options.train_fraction * n), 2, n - 1);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = clips[i].label;
  const std::vector<int> train_labels(labels.begin(), labels.begin() + static_cast<long>(n_train));
  const std::vector<int> test_labels(labels.begin() + static_cast<long>(n_train), labels.end());
  auto slice = [&](const Matrix& m, std::size_t begin, std::size_t end) {
    Matrix out(end - begin, m.cols());
    std::copy(m.row(begin).data(), m.row(begin).data() + out.size(), out.data());
    return out;
  };

  nlohmann::ordered_json grid = nlohmann::ordered_json::array();
  std::vector<std::vector<double>> test_acc(n_algs, std::vector<double>(n_depths));
  for (std::size_t a = 0; a < n_algs; ++a) {
    for (std::size_t k = 0; k < n_depths; ++k) {
      const Matrix train_x = slice(scenes[a][k], 0, n_train);
      const Matrix test_x = slice(scenes[a][k], n_train, n);
      const auto fit = probe::fit_probe(train_x, train_labels, options.probe);
      test_acc[a][k] = probe::evaluate_probe(fit.weights, test_x, test_labels);
      grid.push_back({{"algorithm", scene::to_string(options.algorithms[a])},
                      {"depth", options.depths[k]},
                      {"train_accuracy", fit.accuracy},
                      {"test_accuracy", test_acc[a][k]}});
    }
  }

  const auto deepest_it = std::max_element(options.depths.begin(), options.depths.end());
  const std::size_t deepest = static_cast<std::size_t>(deepest_it - options.depths.begin());
  nlohmann::ordered_json by_alg = nlohmann::ordered_json::array();
  for (std::size_t a = 0; a < n_algs; ++a) {
    by_alg.push_back({{"algorithm", scene::to_string(options.algorithms[a])},
                      {"accuracy", test_acc[a][deepest]}});
  }
  nlohmann::ordered_json by_depth = nlohmann::ordered_json::array();
  const auto iter = std::find(options.algorithms.begin(), options.algorithms.end(),
                              scene::Algorithm::kIterative);
  if (iter != options.algorithms.end()) {
    const std::size_t a = static_cast<std::size_t>(iter - options.algorithms.begin());
    for (std::size_t k = 0; k < n_depths; ++k) {
      by_depth.push_back({{"depth", options.depths[k]}, {"accuracy", test_acc[a][k]}});
    }
  }

  nlohmann::ordered_json kinds = nlohmann::ordered_json::array();
  for (auto kind : options.task.kinds) kinds.push_back(synth::to_string(kind));
  nlohmann::ordered_json report;
  report["task"] = "synthetic";
  report["classes"] = kinds;
  report["clips"] = n;
  report["train_clips"] = n_train;
  report["test_clips"] = n - n_train;
  report["encoder"] = {{"F", model.config.F}, {"T", model.config.T}, {"d", model.config.d},
                       {"D", model.config.D}, {"L", model.config.L},
                       {"parameters", parameter_count(model)}};
  report["metric"] = "accuracy";
  report["scene_algorithms"] = {{"depth", options.depths[deepest]}, {"rows", by_alg}};
  report["encoder_depths"] = {{"algorithm", "iterative"}, {"rows", by_depth}};
  report["grid"] = grid;
  return report;
}

}  // namespace kwmlp::ablation
