#include "kwmlp/encoder.h"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "kwmlp/kernels.h"

namespace kwmlp {
namespace {

std::uint32_t u32(int v) { return static_cast<std::uint32_t>(v); }

template <typename Ref, typename Mat>
void push_matrix(std::vector<Ref>& out, std::string name, Mat& m, bool decay) {
  out.push_back(Ref{std::move(name), m.flat(),
                    {u32(static_cast<int>(m.rows())), u32(static_cast<int>(m.cols()))}, decay});
}

template <typename Ref, typename Vec>
void push_vector(std::vector<Ref>& out, std::string name, Vec& v) {
  out.push_back(Ref{std::move(name), std::span(v), {u32(static_cast<int>(v.size()))}, false});
}

template <typename Ref, typename Weights>
std::vector<Ref> collect(Weights& w) {
  std::vector<Ref> out;
  push_matrix<Ref>(out, "patch.P0", w.P0, true);
  push_vector<Ref>(out, "patch.bias", w.P0_bias);
  for (std::size_t i = 0; i < w.blocks.size(); ++i) {
    auto& b = w.blocks[i];
    const std::string p = "block." + std::to_string(i) + ".";
    push_vector<Ref>(out, p + "pre_norm.scale", b.pre_norm.scale);
    push_vector<Ref>(out, p + "pre_norm.shift", b.pre_norm.shift);
    push_matrix<Ref>(out, p + "U", b.U, true);
    push_vector<Ref>(out, p + "U.bias", b.U_bias);
    push_vector<Ref>(out, p + "gate_norm.scale", b.gate_norm.scale);
    push_vector<Ref>(out, p + "gate_norm.shift", b.gate_norm.shift);
    push_matrix<Ref>(out, p + "G", b.G, true);
    push_vector<Ref>(out, p + "G.bias", b.G_bias);
    push_matrix<Ref>(out, p + "V", b.V, true);
    push_vector<Ref>(out, p + "V.bias", b.V_bias);
  }
  push_vector<Ref>(out, "final_norm.scale", w.final_norm.scale);
  push_vector<Ref>(out, "final_norm.shift", w.final_norm.shift);
  push_matrix<Ref>(out, "head.W", w.head, true);
  push_vector<Ref>(out, "head.bias", w.head_bias);
  return out;
}

NormParams identity_norm(int n) {
  return {std::vector<double>(static_cast<std::size_t>(n), 1.0),
          std::vector<double>(static_cast<std::size_t>(n), 0.0)};
}

void glorot(Matrix& m, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : m.flat()) v = dist(rng);
}

void check_depth(int depth, const EncoderConfig& config) {
  if (depth < 1 || depth > config.L) {
    throw std::out_of_range("depth " + std::to_string(depth) + " outside [1, " +
                            std::to_string(config.L) + "]");
  }
}

}  // namespace

void EncoderConfig::validate() const {
  if (F <= 0 || T <= 0 || d <= 0 || D <= 0 || n_classes <= 0) {
    throw std::invalid_argument("EncoderConfig: dimensions must be positive");
  }
  if (D % 2 != 0) throw std::invalid_argument("EncoderConfig: D must be even");
  if (L < 1) throw std::invalid_argument("EncoderConfig: L must be >= 1");
}

std::vector<TensorRef> ModelWeights::tensors() { return collect<TensorRef>(*this); }

std::vector<ConstTensorRef> ModelWeights::tensors() const {
  return collect<ConstTensorRef>(*this);
}

ModelWeights ModelWeights::zeros(const EncoderConfig& c) {
  c.validate();
  const auto F = static_cast<std::size_t>(c.F), T = static_cast<std::size_t>(c.T),
             d = static_cast<std::size_t>(c.d), D = static_cast<std::size_t>(c.D),
             K = static_cast<std::size_t>(c.n_classes);
  ModelWeights w;
  w.config = c;
  w.P0 = Matrix(F, d);
  w.P0_bias.assign(d, 0.0);
  w.blocks.resize(static_cast<std::size_t>(c.L));
  for (auto& b : w.blocks) {
    b.pre_norm = {std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    b.U = Matrix(d, D);
    b.U_bias.assign(D, 0.0);
    b.gate_norm = {std::vector<double>(D / 2, 0.0), std::vector<double>(D / 2, 0.0)};
    b.G = Matrix(T, T);
    b.G_bias.assign(T, 0.0);
    b.V = Matrix(D / 2, d);
    b.V_bias.assign(d, 0.0);
  }
  w.final_norm = {std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  w.head = Matrix(d, K);
  w.head_bias.assign(K, 0.0);
  return w;
}

ModelWeights init_weights(const EncoderConfig& config, std::uint64_t seed) {
  ModelWeights w = ModelWeights::zeros(config);
  std::mt19937_64 rng(seed);
  glorot(w.P0, rng);
  for (auto& b : w.blocks) {
    b.pre_norm = identity_norm(config.d);
    glorot(b.U, rng);
    b.gate_norm = identity_norm(config.D / 2);
    b.G.fill(0.0);
    std::fill(b.G_bias.begin(), b.G_bias.end(), 1.0);
    glorot(b.V, rng);
  }
  w.final_norm = identity_norm(config.d);
  glorot(w.head, rng);
  return w;
}

std::size_t parameter_count(const EncoderConfig& c) {
  c.validate();
  const std::size_t F = c.F, T = c.T, d = c.d, D = c.D, K = c.n_classes, L = c.L;
  const std::size_t block = 2 * d            // pre_norm
                            + d * D + D      // U
                            + 2 * (D / 2)    // gate_norm
                            + T * T + T      // G
                            + (D / 2) * d + d;  // V
  return F * d + d + L * block + 2 * d + d * K + K;
}

std::size_t parameter_count(const ModelWeights& weights) {
  std::size_t n = 0;
  for (const auto& t : weights.tensors()) n += t.values.size();
  return n;
}

std::uint64_t checksum(const ModelWeights& weights) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& t : weights.tensors()) {
    for (double v : t.values) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xFF;
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

Matrix patch_embed(const dsp::Mfcc& x, const ModelWeights& weights) {
  const auto& c = weights.config;
  require_shape(x.values, static_cast<std::size_t>(c.F), static_cast<std::size_t>(c.T),
                "patch_embed input");
  Matrix out;
  kernels::matmul_tn(x.values, weights.P0, out);
  kernels::add_row_bias(out, weights.P0_bias);
  return out;
}

BranchGate draw_branch(double survival, std::mt19937_64* rng) {
  if (!(survival > 0.0 && survival <= 1.0)) {
    throw std::invalid_argument("survival probability must be in (0, 1]");
  }
  if (rng == nullptr || survival == 1.0) return {};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const bool kept = u(*rng) < survival;
  return {kept, 1.0 / survival};
}

Matrix gmlp_block_forward(const Matrix& x_in, const GmlpBlockWeights& w, BranchGate branch,
                          BlockCache* cache) {
  const std::size_t T = w.G.rows(), d = w.U.rows(), D = w.U.cols(), half = D / 2;
  require_shape(x_in, T, d, "gmlp_block input");
  if (cache != nullptr) {
    cache->input = x_in;
    cache->branch = branch;
  }
  if (!branch.kept) return x_in;

  nn::LayerNormCache pre_cache;
  Matrix normed = nn::layer_norm(x_in, w.pre_norm.scale, w.pre_norm.shift, &pre_cache);

  Matrix pre_act;
  kernels::matmul(normed, w.U, pre_act);
  kernels::add_row_bias(pre_act, w.U_bias);
  Matrix act(T, D);
  for (std::size_t i = 0; i < act.size(); ++i) act.data()[i] = nn::gelu(pre_act.data()[i]);

  Matrix gate_in(T, half);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < half; ++c) gate_in(t, c) = act(t, half + c);
  }
  nn::LayerNormCache gate_cache;
  Matrix gate_normed =
      nn::layer_norm(gate_in, w.gate_norm.scale, w.gate_norm.shift, &gate_cache);

  Matrix spatial;
  kernels::matmul(w.G, gate_normed, spatial);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < half; ++c) spatial(t, c) += w.G_bias[t];
  }

  Matrix gated(T, half);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < half; ++c) gated(t, c) = act(t, c) * spatial(t, c);
  }

  Matrix branch_out;
  kernels::matmul(gated, w.V, branch_out);
  kernels::add_row_bias(branch_out, w.V_bias);

  Matrix out = x_in;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] += branch.scale * branch_out.data()[i];
  }

  if (cache != nullptr) {
    cache->pre = std::move(pre_cache);
    cache->normed = std::move(normed);
    cache->pre_act = std::move(pre_act);
    cache->activated = std::move(act);
    cache->gate = std::move(gate_cache);
    cache->gate_normed = std::move(gate_normed);
    cache->spatial = std::move(spatial);
    cache->gated = std::move(gated);
  }
  return out;
}

Matrix gmlp_block(const Matrix& x_in, const GmlpBlockWeights& w, double survival,
                  std::mt19937_64* rng) {
  return gmlp_block_forward(x_in, w, draw_branch(survival, rng));
}

std::vector<Matrix> encode_segment_depths(const dsp::Mfcc& x, const ModelWeights& weights,
                                          std::span<const int> depths) {
  int deepest = 0;
  for (int depth : depths) {
    check_depth(depth, weights.config);
    deepest = std::max(deepest, depth);
  }
  std::vector<Matrix> out(depths.size());
  Matrix h = patch_embed(x, weights);
  for (int k = 1; k <= deepest; ++k) {
    h = gmlp_block_forward(h, weights.blocks[static_cast<std::size_t>(k - 1)], BranchGate{});
    for (std::size_t i = 0; i < depths.size(); ++i) {
      if (depths[i] == k) {
        out[i] = nn::layer_norm(h, weights.final_norm.scale, weights.final_norm.shift);
      }
    }
  }
  return out;
}

Matrix encode_segment(const dsp::Mfcc& x, const ModelWeights& weights, int depth) {
  const int depths[] = {depth};
  return std::move(encode_segment_depths(x, weights, depths).front());
}

Matrix encode_segment(const dsp::Mfcc& x, const ModelWeights& weights) {
  return encode_segment(x, weights, weights.config.L);
}

TimestampEmbeddings encode_mfccs(std::span<const dsp::Mfcc> mfccs, const ModelWeights& weights,
                                 int depth) {
  check_depth(depth, weights.config);
  const auto T = static_cast<std::size_t>(weights.config.T);
  const auto d = static_cast<std::size_t>(weights.config.d);
  for (const auto& m : mfccs) {
    require_shape(m.values, static_cast<std::size_t>(weights.config.F), T, "encode input");
  }
  TimestampEmbeddings out;
  out.values = Matrix(T * mfccs.size(), d);
  const long n = static_cast<long>(mfccs.size());
#pragma omp parallel for schedule(dynamic)
  for (long s = 0; s < n; ++s) {
    const Matrix seg = encode_segment(mfccs[static_cast<std::size_t>(s)], weights, depth);
    std::copy(seg.data(), seg.data() + seg.size(),
              out.values.data() + static_cast<std::size_t>(s) * T * d);
  }
  return out;
}

TimestampEmbeddings encode_audio(const dsp::AudioBuffer& audio, const ModelWeights& weights,
                                 int depth, const dsp::MfccConfig& mfcc_config) {
  check_depth(depth, weights.config);
  const auto mfccs = dsp::audio_to_mfccs(audio, mfcc_config);
  auto out = encode_mfccs(mfccs, weights, depth);
  out.frame_rate = 1.0 / mfcc_config.hop_length;
  return out;
}

std::vector<double> classify(const dsp::Mfcc& x, const ModelWeights& weights) {
  const Matrix h = encode_segment(x, weights, weights.config.L);
  std::vector<double> pooled(h.cols(), 0.0);
  kernels::accumulate_col_sums(h, pooled);
  for (double& v : pooled) v /= static_cast<double>(h.rows());
  std::vector<double> logits(weights.head_bias);
  for (std::size_t j = 0; j < logits.size(); ++j) {
    for (std::size_t i = 0; i < pooled.size(); ++i) logits[j] += pooled[i] * weights.head(i, j);
  }
  return logits;
}

double toeplitzness(const Matrix& m) {
  if (m.empty()) return 1.0;
  double mean = 0.0;
  for (double v : m.flat()) mean += v;
  mean /= static_cast<double>(m.size());
  double total = 0.0;
  for (double v : m.flat()) total += (v - mean) * (v - mean);
  total /= static_cast<double>(m.size());
  if (total == 0.0) return 1.0;

  const long rows = static_cast<long>(m.rows()), cols = static_cast<long>(m.cols());
  double diag_var_sum = 0.0;
  long diagonals = 0;
  for (long offset = -(rows - 1); offset <= cols - 1; ++offset) {
    const long r0 = std::max(0L, -offset);
    const long r1 = std::min(rows, cols - offset);
    const long n = r1 - r0;
    double dm = 0.0;
    for (long r = r0; r < r1; ++r) dm += m(r, r + offset);
    dm /= static_cast<double>(n);
    double dv = 0.0;
    for (long r = r0; r < r1; ++r) dv += (m(r, r + offset) - dm) * (m(r, r + offset) - dm);
    diag_var_sum += dv / static_cast<double>(n);
    ++diagonals;
  }
  return 1.0 - (diag_var_sum / static_cast<double>(diagonals)) / total;
}

std::vector<TemporalWeights> export_temporal_weights(const ModelWeights& weights) {
  std::vector<TemporalWeights> out;
  out.reserve(weights.blocks.size());
  for (const auto& b : weights.blocks) out.push_back({b.G, toeplitzness(b.G)});
  return out;
}

}  // namespace kwmlp
