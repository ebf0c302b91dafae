#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kwmlp/dsp.h"
#include "kwmlp/encoder.h"

namespace kwmlp::train {

// Defaults are the pretraining recipe of the KW-MLP encoder.
struct TrainConfig {
  int epochs = 140;
  int batch_size = 256;
  double peak_lr = 0.001;
  double warmup_epochs = 10.0;
  double weight_decay = 0.1;
  double label_smoothing = 0.1;
  double survival_prob = 0.9;
  int time_masks = 2;
  int time_mask_max_width = 25;
  int freq_masks = 2;
  int freq_mask_max_width = 7;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Example {
  dsp::Mfcc x;
  int label = 0;
};

// Zeroes columns [start, start + width) / rows [start, start + width).
void apply_time_mask(dsp::Mfcc& x, int start, int width);
void apply_freq_mask(dsp::Mfcc& x, int start, int width);

// time_masks column masks of width U{0..max} then freq_masks row masks, each
// at a uniformly drawn valid start.
dsp::Mfcc augment(const dsp::Mfcc& x, const TrainConfig& config, std::mt19937_64& rng);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d logits
};

// Cross-entropy against (1 - s) one-hot + s / K.
LossAndGrad loss_label_smoothed_ce(std::span<const double> logits, int target, double smoothing);

// Gradient buffers with the exact layout of the model.
struct GradientTape {
  ModelWeights grad;

  static GradientTape zeros_like(const ModelWeights& weights);
  void add(const GradientTape& other);
  void scale(double factor);
  bool all_finite() const;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(std::size_t index, double value);
  std::size_t batch_index() const { return index_; }

 private:
  std::size_t index_;
};

// One stochastic-depth decision per block, drawn in block order.
std::vector<BranchGate> draw_gates(const EncoderConfig& config, double survival,
                                   std::mt19937_64* rng);

// Loss of one example under fixed branch decisions. Used for finite
// differences and evaluation.
double example_loss(const dsp::Mfcc& x, int label, const ModelWeights& weights,
                    double smoothing, std::span<const BranchGate> gates);

// Forward plus analytic reverse pass for one example. Gradients of
// `weight * loss` are added into tape. Returns the unweighted loss.
double example_backward(const dsp::Mfcc& x, int label, const ModelWeights& weights,
                        double smoothing, std::span<const BranchGate> gates, double weight,
                        GradientTape& tape);

struct BackwardResult {
  double loss = 0.0;  // mean over the batch
  GradientTape tape;  // gradient of the mean loss
};

// Mean loss and gradient over a batch. Example i draws its branch decisions
// from a stream seeded by (stream_seed, i); per-example work runs in
// parallel and is summed in index order, so the result does not depend on
// thread count.
BackwardResult backward(std::span<const Example> batch, const ModelWeights& weights,
                        const TrainConfig& config, std::uint64_t stream_seed);

struct AdamState {
  ModelWeights m;
  ModelWeights v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ModelWeights& weights);
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Decoupled-weight-decay Adam on one tensor. step is 1-based.
void adamw_update(std::span<double> w, std::span<const double> g, std::span<double> m,
                  std::span<double> v, std::uint64_t step, double lr, const AdamHyper& hyper,
                  bool decay);

// Advances state.step and updates every tensor; decay skips biases and norms.
void adamw_step(ModelWeights& weights, const GradientTape& tape, AdamState& state, double lr,
                const TrainConfig& config);

// OPT1 sidecar: tensor table of m.* and v.* moments plus a step counter.
std::vector<std::uint8_t> serialize_optimizer(const AdamState& state);
AdamState deserialize_optimizer(std::span<const std::uint8_t> bytes, const EncoderConfig& config);

// Linear warmup to peak_lr, then half-cosine to zero at `epochs`.
double lr_at(double epoch, const TrainConfig& config);

struct LogRow {
  int epoch = 0;
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

std::string log_to_csv(std::span<const LogRow> rows);

struct TrainResult {
  ModelWeights weights;
  AdamState optimizer;
  std::vector<double> epoch_loss;
  std::vector<LogRow> log;
};

using ProgressFn = std::function<void(const LogRow&)>;

// Seeded shuffling, augmentation, stochastic depth, AdamW and the schedule.
TrainResult train(std::span<const Example> dataset, const EncoderConfig& encoder,
                  const TrainConfig& config, const ProgressFn& progress = {});

// Fraction of examples whose argmax logit equals the label.
double accuracy(std::span<const Example> dataset, const ModelWeights& weights);

}  // namespace kwmlp::train
