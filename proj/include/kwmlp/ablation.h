#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>

#include "kwmlp/encoder.h"
#include "kwmlp/probe.h"
#include "kwmlp/scene.h"
#include "kwmlp/synthetic.h"

namespace kwmlp::ablation {

struct AblationOptions {
  synth::TaskSpec task{{synth::Kind::kSine, synth::Kind::kNoise, synth::Kind::kChirp},
                       24, 1.0, 4.0, 0};
  EncoderConfig encoder{};
  std::uint64_t encoder_seed = 0;
  std::vector<int> depths{4, 8, 12};
  std::vector<scene::Algorithm> algorithms{scene::Algorithm::kMean, scene::Algorithm::kSingle,
                                           scene::Algorithm::kIterative};
  probe::ProbeConfig probe{};
  double train_fraction = 0.5;  // leading share of clips used to fit the probe
};

// Scene-algorithm x depth grid on a synthetic task. Returns a report with the
// full grid plus two views: algorithms at full depth, and depths under
// iterative interpolation. Uses `weights` when given, else a seeded random
// encoder.
nlohmann::ordered_json run_ablation(const AblationOptions& options,
                                    const std::optional<ModelWeights>& weights = std::nullopt);

}  // namespace kwmlp::ablation
