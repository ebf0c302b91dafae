#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "kwmlp/io.h"
#include "kwmlp/kernels.h"
#include "kwmlp/trainer.h"
#include "test_util.h"

namespace kwmlp::train {
namespace {

using testing::random_matrix;

const EncoderConfig kToy{4, 6, 4, 8, 2, 3};

ModelWeights random_weights(const EncoderConfig& c, std::uint64_t seed) {
  ModelWeights w = ModelWeights::zeros(c);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  for (auto& t : w.tensors())
    for (double& v : t.values) v = u(rng);
  for (auto& b : w.blocks) {
    for (double& s : b.pre_norm.scale) s += 1.0;
    for (double& s : b.gate_norm.scale) s += 1.0;
  }
  for (double& s : w.final_norm.scale) s += 1.0;
  return w;
}

// Central differences over every scalar parameter.
void check_gradients(const ModelWeights& w0, const dsp::Mfcc& x, int label, double smoothing,
                     const std::vector<BranchGate>& gates) {
  GradientTape tape = GradientTape::zeros_like(w0);
  example_backward(x, label, w0, smoothing, gates, 1.0, tape);
  ModelWeights w = w0;
  auto params = w.tensors();
  const auto grads = std::as_const(tape.grad).tensors();
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t].values.size(); ++i) {
      double& p = params[t].values[i];
      const double saved = p;
      p = saved + h;
      const double up = example_loss(x, label, w, smoothing, gates);
      p = saved - h;
      const double down = example_loss(x, label, w, smoothing, gates);
      p = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads[t].values[i];
      const double rel = std::abs(analytic - numeric) / (std::abs(analytic) + 1e-8);
      worst = std::max(worst, rel);
      EXPECT_LT(rel, 1e-4) << params[t].name << "[" << i << "] analytic " << analytic
                           << " numeric " << numeric;
    }
  }
  ::testing::Test::RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(Gradients, ToyModelAllKept) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto w = random_weights(kToy, seed);
    std::mt19937_64 rng(seed);
    const dsp::Mfcc x{random_matrix(4, 6, rng, -2, 2)};
    check_gradients(w, x, static_cast<int>(seed % 3), 0.1, {{true, 1.0}, {true, 1.0}});
  }
}

TEST(Gradients, ToyModelStochasticDepth) {
  const auto w = random_weights(kToy, 4);
  std::mt19937_64 rng(4);
  const dsp::Mfcc x{random_matrix(4, 6, rng, -2, 2)};
  check_gradients(w, x, 1, 0.1, {{false, 0.0}, {true, 1.0 / 0.9}});
  check_gradients(w, x, 2, 0.0, {{true, 1.0 / 0.9}, {false, 0.0}});
}

TEST(Gradients, DroppedBlockGetsNoGradient) {
  const auto w = random_weights(kToy, 5);
  std::mt19937_64 rng(5);
  const dsp::Mfcc x{random_matrix(4, 6, rng)};
  GradientTape tape = GradientTape::zeros_like(w);
  example_backward(x, 0, w, 0.1, std::vector<BranchGate>{{false, 0.0}, {true, 1.0}}, 1.0, tape);
  for (const auto& t : std::as_const(tape.grad).tensors()) {
    if (t.name.rfind("block.0.", 0) != 0) continue;
    for (double g : t.values) EXPECT_EQ(g, 0.0) << t.name;
  }
}

TEST(Gradients, ZeroHeadCutsBodySignal) {
  auto w = random_weights(kToy, 6);
  w.head.fill(0.0);
  std::mt19937_64 rng(6);
  const dsp::Mfcc x{random_matrix(4, 6, rng)};
  GradientTape tape = GradientTape::zeros_like(w);
  example_backward(x, 0, w, 0.1, std::vector<BranchGate>(2), 1.0, tape);
  double head_mass = 0.0;
  for (const auto& t : std::as_const(tape.grad).tensors()) {
    const bool head = t.name.rfind("head.", 0) == 0;
    for (double g : t.values) {
      if (head) head_mass += std::abs(g);
      else EXPECT_EQ(g, 0.0) << t.name;
    }
  }
  EXPECT_GT(head_mass, 0.0);
}

TEST(Loss, UniformLogits) {
  for (double s : {0.0, 0.1, 0.5}) {
    const auto r = loss_label_smoothed_ce(std::vector<double>(35, 0.25), 4, s);
    EXPECT_NEAR(r.loss, std::log(35.0), 1e-12);
  }
}

TEST(Loss, ConfidentCorrectIsZero) {
  const auto r = loss_label_smoothed_ce(std::vector<double>{200.0, 0.0, 0.0}, 0, 0.0);
  EXPECT_LT(r.loss, 1e-80);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  std::vector<double> z{1.0, 0.0, 0.0};
  const auto r = loss_label_smoothed_ce(z, 0, 0.1);
  const double h = 1e-6;
  for (int i = 0; i < 3; ++i) {
    auto up = z, down = z;
    up[i] += h;
    down[i] -= h;
    const double numeric = (loss_label_smoothed_ce(up, 0, 0.1).loss -
                            loss_label_smoothed_ce(down, 0, 0.1).loss) / (2 * h);
    EXPECT_NEAR(r.grad[i], numeric, 1e-8);
  }
  // softmax - q by hand.
  const double e = std::exp(1.0), zsum = e + 2.0;
  EXPECT_NEAR(r.grad[0], e / zsum - (0.9 + 0.1 / 3), 1e-15);
  EXPECT_NEAR(r.loss, -(0.9 + 0.1 / 3) * std::log(e / zsum) - 2 * (0.1 / 3) * std::log(1 / zsum),
              1e-14);
}

TEST(Augment, ZeroWidthIsIdentity) {
  TrainConfig c;
  c.time_mask_max_width = 0;
  c.freq_mask_max_width = 0;
  std::mt19937_64 rng(1), mrng(1);
  const dsp::Mfcc x{random_matrix(40, 98, mrng)};
  for (int i = 0; i < 20; ++i) EXPECT_EQ(augment(x, c, rng).values, x.values);
}

TEST(Augment, MaskSemantics) {
  std::mt19937_64 rng(2);
  const dsp::Mfcc x{random_matrix(40, 98, rng, 1, 2)};
  dsp::Mfcc y = x;
  apply_time_mask(y, 10, 5);
  for (int f = 0; f < 40; ++f)
    for (int t = 0; t < 98; ++t) EXPECT_EQ(y.values(f, t), t >= 10 && t < 15 ? 0.0 : x.values(f, t));
  y = x;
  apply_freq_mask(y, 38, 2);
  for (int f = 0; f < 40; ++f)
    for (int t = 0; t < 98; ++t) EXPECT_EQ(y.values(f, t), f >= 38 ? 0.0 : x.values(f, t));
  // Spans running past the edge are clipped.
  y = x;
  apply_time_mask(y, 95, 5);
  for (int t = 0; t < 98; ++t) EXPECT_EQ(y.values(0, t) == 0.0, t >= 95);
}

TEST(Augment, MaskedFractionMatchesExactExpectation) {
  // P(one mask covers column c): width w ~ U{0..25}, start ~ U{0..98-w}.
  const int T = 98, W = 25;
  double expect = 0.0;
  for (int col = 0; col < T; ++col) {
    double p = 0.0;
    for (int w = 0; w <= W; ++w) {
      int covering = 0;
      for (int s = 0; s <= T - w; ++s) covering += col >= s && col < s + w;
      p += static_cast<double>(covering) / (T - w + 1) / (W + 1);
    }
    expect += 1.0 - (1.0 - p) * (1.0 - p);
  }
  expect /= T;

  TrainConfig c;
  c.freq_masks = 0;
  std::mt19937_64 rng(3);
  const dsp::Mfcc ones{Matrix(1, T, 1.0)};
  const int draws = 100000;
  long zeros = 0;
  for (int i = 0; i < draws; ++i) {
    const auto y = augment(ones, c, rng);
    for (double v : y.values.flat()) zeros += v == 0.0;
  }
  EXPECT_NEAR(static_cast<double>(zeros) / draws / T, expect, 0.002);
  EXPECT_LT(expect, 2 * 12.5 / T);
}

TEST(Backward, MeanOfExampleGradients) {
  const auto w = random_weights(kToy, 7);
  std::mt19937_64 rng(7);
  std::vector<Example> batch;
  for (int i = 0; i < 5; ++i) batch.push_back({{random_matrix(4, 6, rng)}, i % 3});
  TrainConfig c;
  c.survival_prob = 1.0;
  const auto r = backward(batch, w, c, 99);
  GradientTape sum = GradientTape::zeros_like(w);
  double loss = 0.0;
  for (const auto& e : batch)
    loss += example_backward(e.x, e.label, w, c.label_smoothing, std::vector<BranchGate>(2), 0.2, sum);
  EXPECT_NEAR(r.loss, loss / 5, 1e-14);
  const auto a = std::as_const(r.tape.grad).tensors();
  const auto b = std::as_const(sum.grad).tensors();
  for (std::size_t t = 0; t < a.size(); ++t)
    for (std::size_t i = 0; i < a[t].values.size(); ++i)
      EXPECT_NEAR(a[t].values[i], b[t].values[i], 1e-14);
}

TEST(Backward, DeterministicAcrossThreadCounts) {
  const EncoderConfig c{40, 98, 16, 32, 2, 5};
  const auto w = init_weights(c, 8);
  std::mt19937_64 rng(8);
  std::vector<Example> batch;
  for (int i = 0; i < 40; ++i) batch.push_back({{random_matrix(40, 98, rng)}, i % 5});
  TrainConfig tc;
  kernels::set_num_threads(1);
  const auto one = backward(batch, w, tc, 5);
  kernels::set_num_threads(3);
  const auto three = backward(batch, w, tc, 5);
  const auto again = backward(batch, w, tc, 5);
  kernels::set_num_threads(0);
  EXPECT_EQ(one.loss, three.loss);
  EXPECT_EQ(io::serialize_weights(one.tape.grad), io::serialize_weights(three.tape.grad));
  for (std::size_t t = 0; t < one.tape.grad.blocks.size(); ++t)
    EXPECT_EQ(one.tape.grad.blocks[t].U, again.tape.grad.blocks[t].U);
}

TEST(Backward, NonFiniteLossNamesExample) {
  const auto w = random_weights(kToy, 9);
  std::mt19937_64 rng(9);
  std::vector<Example> batch;
  for (int i = 0; i < 4; ++i) batch.push_back({{random_matrix(4, 6, rng)}, 0});
  batch[2].x.values(1, 1) = std::numeric_limits<double>::infinity();
  try {
    backward(batch, w, TrainConfig{}, 0);
    FAIL() << "expected NonFiniteLoss";
  } catch (const NonFiniteLoss& e) {
    EXPECT_EQ(e.batch_index(), 2u);
  }
}

TEST(AdamW, SingleStepByHand) {
  std::vector<double> w{1.0}, g{1.0}, m{0.0}, v{0.0};
  adamw_update(w, g, m, v, 1, 0.001, AdamHyper{}, true);
  EXPECT_NEAR(w[0], 1.0 - 0.001 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(w[0], 0.999, 1e-10);
  EXPECT_NEAR(m[0], 0.1, 1e-15);
  EXPECT_NEAR(v[0], 0.001, 1e-15);
}

TEST(AdamW, PureDecay) {
  std::vector<double> w{1.0}, g{0.0}, m{0.0}, v{0.0};
  AdamHyper h;
  h.weight_decay = 0.1;
  adamw_update(w, g, m, v, 1, 0.001, h, true);
  EXPECT_NEAR(w[0], 0.9999, 1e-15);
  std::vector<double> z{1.0};
  adamw_update(z, g, m, v, 1, 0.001, AdamHyper{}, true);
  EXPECT_EQ(z[0], 1.0);
}

TEST(AdamW, DecaySkipsNormsAndBiases) {
  auto w = random_weights(kToy, 10);
  const auto before = w;
  AdamState state = AdamState::zeros_like(w);
  TrainConfig c;
  c.weight_decay = 0.1;
  adamw_step(w, GradientTape::zeros_like(w), state, 0.01, c);
  EXPECT_EQ(state.step, 1u);
  const auto a = std::as_const(w).tensors();
  const auto b = before.tensors();
  for (std::size_t t = 0; t < a.size(); ++t) {
    const bool same = std::equal(a[t].values.begin(), a[t].values.end(), b[t].values.begin());
    EXPECT_EQ(same, !a[t].decay) << a[t].name;
  }
  EXPECT_TRUE(a[0].decay);  // patch.P0
}

TEST(Optimizer, Opt1RoundTrip) {
  auto w = random_weights(kToy, 11);
  AdamState s = AdamState::zeros_like(w);
  TrainConfig c;
  GradientTape g = GradientTape::zeros_like(w);
  g.grad = random_weights(kToy, 12);
  for (int i = 0; i < 3; ++i) adamw_step(w, g, s, 0.01, c);
  const auto bytes = serialize_optimizer(s);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "OPT1");
  const auto back = deserialize_optimizer(bytes, kToy);
  EXPECT_EQ(back.step, 3u);
  EXPECT_EQ(serialize_optimizer(back), bytes);
}

TEST(Schedule, Endpoints) {
  const TrainConfig c;
  EXPECT_EQ(lr_at(0, c), 0.0);
  EXPECT_NEAR(lr_at(5, c), 0.0005, 1e-15);
  EXPECT_NEAR(lr_at(10, c), 0.001, 1e-15);
  EXPECT_NEAR(lr_at(75, c), 0.0005, 1e-15);
  EXPECT_NEAR(lr_at(140, c), 0.0, 1e-15);
}

TEST(Schedule, ContinuousAndDecaying) {
  const TrainConfig c;
  EXPECT_NEAR(lr_at(10 - 1e-9, c), lr_at(10 + 1e-9, c), 1e-12);
  double prev = lr_at(10, c);
  for (double e = 10.1; e <= 140.0; e += 0.1) {
    const double cur = lr_at(e, c);
    EXPECT_LE(cur, prev);
    prev = cur;
  }
}

TEST(Config, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.warmup_epochs = 140;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.survival_prob = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.label_smoothing = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

std::vector<Example> toy_dataset(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Example> out;
  for (int i = 0; i < n; ++i) {
    Matrix x = random_matrix(40, 98, rng, -0.5, 0.5);
    if (i % 2) for (int t = 0; t < 98; ++t) x(3, t) += 2.0;
    out.push_back({{std::move(x)}, i % 2});
  }
  return out;
}

TEST(Train, SameSeedSameBits) {
  const EncoderConfig ec{40, 98, 8, 16, 1, 2};
  TrainConfig tc;
  tc.epochs = 3;
  tc.warmup_epochs = 1;
  tc.batch_size = 4;
  tc.seed = 21;
  const auto data = toy_dataset(10, 1);
  const auto a = train(data, ec, tc);
  const auto b = train(data, ec, tc);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  EXPECT_EQ(log_to_csv(a.log), log_to_csv(b.log));
  EXPECT_EQ(io::serialize_weights(a.weights), io::serialize_weights(b.weights));
  EXPECT_EQ(a.log.size(), 9u);  // 3 epochs x ceil(10 / 4) steps
  EXPECT_EQ(log_to_csv(a.log).rfind("epoch,step,lr,loss\n", 0), 0u);
  tc.seed = 22;
  EXPECT_NE(train(data, ec, tc).epoch_loss, a.epoch_loss);
}

TEST(Train, RejectsBadLabels) {
  const EncoderConfig ec{40, 98, 8, 16, 1, 2};
  auto data = toy_dataset(4, 2);
  data[1].label = 2;
  TrainConfig tc;
  tc.epochs = 1;
  tc.warmup_epochs = 0;
  EXPECT_THROW(train(data, ec, tc), std::invalid_argument);
  EXPECT_THROW(train({}, ec, tc), std::invalid_argument);
}

}  // namespace
}  // namespace kwmlp::train
