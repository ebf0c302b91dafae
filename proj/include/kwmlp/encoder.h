#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "kwmlp/dsp.h"
#include "kwmlp/matrix.h"
#include "kwmlp/nn.h"

namespace kwmlp {

struct EncoderConfig {
  int F = 40;          // MFCC coefficients per frame
  int T = 98;          // frames per 1 s segment
  int d = 64;          // embedding width
  int D = 256;         // projection width, split in half for gating
  int L = 12;          // gMLP blocks
  int n_classes = 35;  // classifier outputs

  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct NormParams {
  std::vector<double> scale;
  std::vector<double> shift;
};

// One gated-MLP block. G is stored as [output frame, input frame] and applied
// as G * Z_g along time, followed by a per-output-frame bias.
struct GmlpBlockWeights {
  NormParams pre_norm;  // over d
  Matrix U;             // d x D
  std::vector<double> U_bias;
  NormParams gate_norm;  // over D/2
  Matrix G;              // T x T
  std::vector<double> G_bias;
  Matrix V;  // D/2 x d
  std::vector<double> V_bias;
};

// Mutable view of one parameter tensor. Vectors have a single dim.
struct TensorRef {
  std::string name;
  std::span<double> values;
  std::vector<std::uint32_t> dims;
  bool decay = false;  // weight decay applies (projection matrices only)
};

struct ConstTensorRef {
  std::string name;
  std::span<const double> values;
  std::vector<std::uint32_t> dims;
  bool decay = false;
};

struct ModelWeights {
  EncoderConfig config;
  Matrix P0;  // F x d
  std::vector<double> P0_bias;
  std::vector<GmlpBlockWeights> blocks;
  NormParams final_norm;
  Matrix head;  // d x n_classes
  std::vector<double> head_bias;

  // Every parameter tensor in file order.
  std::vector<TensorRef> tensors();
  std::vector<ConstTensorRef> tensors() const;

  // All-zero parameters with the shapes implied by config.
  static ModelWeights zeros(const EncoderConfig& config);
};

// Glorot-uniform projections, G = 0 with unit gate bias, identity norms.
ModelWeights init_weights(const EncoderConfig& config, std::uint64_t seed);

// Scalar parameter count, from shapes alone.
std::size_t parameter_count(const EncoderConfig& config);
std::size_t parameter_count(const ModelWeights& weights);

// 64-bit FNV-1a over the parameter bytes, for immutability checks.
std::uint64_t checksum(const ModelWeights& weights);

// X0 P0 + b with X0 = transpose(mfcc): F x T in, T x d out.
Matrix patch_embed(const dsp::Mfcc& x, const ModelWeights& weights);

// Whether the residual branch of a block runs, and its multiplier.
struct BranchGate {
  bool kept = true;
  double scale = 1.0;
};

// Intermediates of one block forward, kept for the backward pass.
struct BlockCache {
  Matrix input;       // T x d
  nn::LayerNormCache pre;
  Matrix normed;      // T x d
  Matrix pre_act;     // T x D, before GELU
  Matrix activated;   // T x D, [Z_r | Z_g]
  nn::LayerNormCache gate;
  Matrix gate_normed;  // T x D/2
  Matrix spatial;      // T x D/2, G * norm(Z_g) + bias
  Matrix gated;        // T x D/2, Z_r (.) spatial
  BranchGate branch;
};

// Block forward with an explicit branch decision.
Matrix gmlp_block_forward(const Matrix& x_in, const GmlpBlockWeights& w, BranchGate branch,
                          BlockCache* cache = nullptr);

// Draws the stochastic-depth decision. survival == 1 or rng == nullptr means
// inference: always kept, unscaled.
BranchGate draw_branch(double survival, std::mt19937_64* rng);

// Block forward. In training mode (rng given, survival < 1) the branch is
// skipped with probability 1 - survival and otherwise scaled by 1/survival.
Matrix gmlp_block(const Matrix& x_in, const GmlpBlockWeights& w, double survival = 1.0,
                  std::mt19937_64* rng = nullptr);

// Patch embedding, the first `depth` blocks in inference mode, final norm.
Matrix encode_segment(const dsp::Mfcc& x, const ModelWeights& weights, int depth);
Matrix encode_segment(const dsp::Mfcc& x, const ModelWeights& weights);

// One forward pass yielding final_norm(activation after block k) for each
// requested k, in the order given.
std::vector<Matrix> encode_segment_depths(const dsp::Mfcc& x, const ModelWeights& weights,
                                          std::span<const int> depths);

struct TimestampEmbeddings {
  Matrix values;             // N_T x d
  double frame_rate = 100.0;  // embeddings per second
};

// Concatenates per-segment encodings along time. Segments run in parallel.
TimestampEmbeddings encode_mfccs(std::span<const dsp::Mfcc> mfccs, const ModelWeights& weights,
                                 int depth);
TimestampEmbeddings encode_audio(const dsp::AudioBuffer& audio, const ModelWeights& weights,
                                 int depth, const dsp::MfccConfig& mfcc_config = {});

// Mean over time of the full-depth encoding, then the linear head.
std::vector<double> classify(const dsp::Mfcc& x, const ModelWeights& weights);

// 1 - mean per-diagonal variance / total variance. Constant matrices give 1.
double toeplitzness(const Matrix& m);

struct TemporalWeights {
  Matrix G;
  double toeplitzness = 0.0;
};

std::vector<TemporalWeights> export_temporal_weights(const ModelWeights& weights);

}  // namespace kwmlp
