#include "kwmlp/trainer.h"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <numeric>
#include <sstream>

#include "kwmlp/io.h"
#include "kwmlp/kernels.h"
#include "kwmlp/nn.h"

namespace kwmlp::train {
namespace {

// Examples processed together before their gradients are folded into the
// batch total. Fixed so the reduction order never depends on thread count.
constexpr std::size_t kReduceChunk = 16;

std::mt19937_64 make_stream(std::initializer_list<std::uint64_t> keys) {
  std::vector<std::uint32_t> words;
  for (auto k : keys) {
    words.push_back(static_cast<std::uint32_t>(k & 0xFFFFFFFFu));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

struct ForwardState {
  Matrix embedded;  // T x d
  std::vector<BlockCache> blocks;
  nn::LayerNormCache final_cache;
  std::vector<double> pooled;
  std::vector<double> logits;
};

void forward(const dsp::Mfcc& x, const ModelWeights& w, std::span<const BranchGate> gates,
             ForwardState& st, bool keep_cache) {
  const auto& c = w.config;
  if (gates.size() != static_cast<std::size_t>(c.L)) {
    throw std::invalid_argument("forward: need one branch gate per block");
  }
  st.embedded = patch_embed(x, w);
  st.blocks.assign(static_cast<std::size_t>(c.L), BlockCache{});
  Matrix h = st.embedded;
  for (std::size_t k = 0; k < w.blocks.size(); ++k) {
    h = gmlp_block_forward(h, w.blocks[k], gates[k], keep_cache ? &st.blocks[k] : nullptr);
  }
  const Matrix y = nn::layer_norm(h, w.final_norm.scale, w.final_norm.shift,
                                  keep_cache ? &st.final_cache : nullptr);
  st.pooled.assign(y.cols(), 0.0);
  kernels::accumulate_col_sums(y, st.pooled);
  for (double& v : st.pooled) v /= static_cast<double>(y.rows());
  st.logits = w.head_bias;
  for (std::size_t j = 0; j < st.logits.size(); ++j) {
    for (std::size_t i = 0; i < st.pooled.size(); ++i) st.logits[j] += st.pooled[i] * w.head(i, j);
  }
}

std::span<double> span_of(std::vector<double>& v) { return v; }

Matrix block_backward(const Matrix& dout, const GmlpBlockWeights& w, const BlockCache& cache,
                      GmlpBlockWeights& g) {
  Matrix dx = dout;
  if (!cache.branch.kept) return dx;
  const std::size_t T = w.G.rows(), D = w.U.cols(), half = D / 2;

  Matrix dy = dout;
  for (double& v : dy.flat()) v *= cache.branch.scale;

  kernels::matmul_tn(cache.gated, dy, g.V, true);
  kernels::accumulate_col_sums(dy, g.V_bias);
  Matrix dgated;
  kernels::matmul_nt(dy, w.V, dgated);

  Matrix dact(T, D);
  Matrix dspatial(T, half);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < half; ++c) {
      dact(t, c) = dgated(t, c) * cache.spatial(t, c);
      dspatial(t, c) = dgated(t, c) * cache.activated(t, c);
    }
  }

  kernels::matmul_nt(dspatial, cache.gate_normed, g.G, true);
  for (std::size_t t = 0; t < T; ++t) {
    double s = 0.0;
    for (std::size_t c = 0; c < half; ++c) s += dspatial(t, c);
    g.G_bias[t] += s;
  }
  Matrix dgate_normed;
  kernels::matmul_tn(w.G, dspatial, dgate_normed);
  const Matrix dgate_in = nn::layer_norm_backward(dgate_normed, cache.gate, w.gate_norm.scale,
                                                  g.gate_norm.scale, g.gate_norm.shift);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < half; ++c) dact(t, half + c) = dgate_in(t, c);
  }

  Matrix dpre(T, D);
  for (std::size_t i = 0; i < dpre.size(); ++i) {
    dpre.data()[i] = dact.data()[i] * nn::gelu_grad(cache.pre_act.data()[i]);
  }
  kernels::matmul_tn(cache.normed, dpre, g.U, true);
  kernels::accumulate_col_sums(dpre, g.U_bias);
  Matrix dnormed;
  kernels::matmul_nt(dpre, w.U, dnormed);
  const Matrix dpre_in = nn::layer_norm_backward(dnormed, cache.pre, w.pre_norm.scale,
                                                 g.pre_norm.scale, g.pre_norm.shift);
  for (std::size_t i = 0; i < dx.size(); ++i) dx.data()[i] += dpre_in.data()[i];
  return dx;
}

template <typename Tensors>
void zip_tensors(Tensors& a, const Tensors& b, const char* what) {
  if (a.size() != b.size()) throw ShapeError(what);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].dims != b[i].dims) throw ShapeError(std::string(what) + ": " + a[i].name);
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(peak_lr > 0.0)) throw std::invalid_argument("peak_lr must be > 0");
  if (warmup_epochs < 0.0 || warmup_epochs >= epochs) {
    throw std::invalid_argument("warmup_epochs must be in [0, epochs)");
  }
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
    throw std::invalid_argument("label_smoothing must be in [0, 1)");
  }
  if (!(survival_prob > 0.0 && survival_prob <= 1.0)) {
    throw std::invalid_argument("survival_prob must be in (0, 1]");
  }
  if (time_masks < 0 || freq_masks < 0 || time_mask_max_width < 0 || freq_mask_max_width < 0) {
    throw std::invalid_argument("mask counts and widths must be >= 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0)) {
    throw std::invalid_argument("Adam constants out of range");
  }
}

void apply_time_mask(dsp::Mfcc& x, int start, int width) {
  auto& m = x.values;
  const auto b = static_cast<std::size_t>(std::max(0, start));
  const auto e = std::min(m.cols(), static_cast<std::size_t>(std::max(0, start + width)));
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = b; c < e; ++c) m(r, c) = 0.0;
  }
}

void apply_freq_mask(dsp::Mfcc& x, int start, int width) {
  auto& m = x.values;
  const auto b = static_cast<std::size_t>(std::max(0, start));
  const auto e = std::min(m.rows(), static_cast<std::size_t>(std::max(0, start + width)));
  for (std::size_t r = b; r < e; ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) = 0.0;
  }
}

dsp::Mfcc augment(const dsp::Mfcc& x, const TrainConfig& config, std::mt19937_64& rng) {
  dsp::Mfcc out = x;
  const int frames = static_cast<int>(x.frames());
  const int bins = static_cast<int>(x.coefficients());
  auto draw = [&](int max_width, int extent, auto apply) {
    const int width = std::uniform_int_distribution<int>(0, std::min(max_width, extent))(rng);
    const int start = std::uniform_int_distribution<int>(0, extent - width)(rng);
    apply(out, start, width);
  };
  for (int i = 0; i < config.time_masks; ++i) draw(config.time_mask_max_width, frames, apply_time_mask);
  for (int i = 0; i < config.freq_masks; ++i) draw(config.freq_mask_max_width, bins, apply_freq_mask);
  return out;
}

LossAndGrad loss_label_smoothed_ce(std::span<const double> logits, int target, double smoothing) {
  const std::size_t k = logits.size();
  if (k < 2) throw std::invalid_argument("loss: need at least two classes");
  if (target < 0 || static_cast<std::size_t>(target) >= k) {
    throw std::invalid_argument("loss: target out of range");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - mx);
  const double log_z = mx + std::log(sum);
  const double off = smoothing / static_cast<double>(k);
  LossAndGrad out;
  out.grad.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double q = (static_cast<int>(i) == target) ? 1.0 - smoothing + off : off;
    const double log_p = logits[i] - log_z;
    out.loss -= q * log_p;
    out.grad[i] = std::exp(log_p) - q;
  }
  return out;
}

GradientTape GradientTape::zeros_like(const ModelWeights& weights) {
  return GradientTape{ModelWeights::zeros(weights.config)};
}

void GradientTape::add(const GradientTape& other) {
  auto dst = grad.tensors();
  const auto src = other.grad.tensors();
  if (dst.size() != src.size()) throw ShapeError("GradientTape::add: layout mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].values.size() != src[i].values.size()) throw ShapeError("GradientTape::add");
    for (std::size_t k = 0; k < dst[i].values.size(); ++k) dst[i].values[k] += src[i].values[k];
  }
}

void GradientTape::scale(double factor) {
  for (auto& t : grad.tensors()) {
    for (double& v : t.values) v *= factor;
  }
}

bool GradientTape::all_finite() const {
  for (const auto& t : grad.tensors()) {
    for (double v : t.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

NonFiniteLoss::NonFiniteLoss(std::size_t index, double value)
    : std::runtime_error("non-finite loss (" + std::to_string(value) + ") at batch index " +
                         std::to_string(index)),
      index_(index) {}

std::vector<BranchGate> draw_gates(const EncoderConfig& config, double survival,
                                   std::mt19937_64* rng) {
  std::vector<BranchGate> gates;
  gates.reserve(static_cast<std::size_t>(config.L));
  for (int k = 0; k < config.L; ++k) gates.push_back(draw_branch(survival, rng));
  return gates;
}

double example_loss(const dsp::Mfcc& x, int label, const ModelWeights& weights,
                    double smoothing, std::span<const BranchGate> gates) {
  ForwardState st;
  forward(x, weights, gates, st, false);
  return loss_label_smoothed_ce(st.logits, label, smoothing).loss;
}

double example_backward(const dsp::Mfcc& x, int label, const ModelWeights& weights,
                        double smoothing, std::span<const BranchGate> gates, double weight,
                        GradientTape& tape) {
  ForwardState st;
  forward(x, weights, gates, st, true);
  const auto lg = loss_label_smoothed_ce(st.logits, label, smoothing);
  if (!std::isfinite(lg.loss)) return lg.loss;

  ModelWeights& g = tape.grad;
  const std::size_t d = st.pooled.size();
  const std::size_t k = st.logits.size();
  std::vector<double> dlogits(lg.grad);
  for (double& v : dlogits) v *= weight;
  std::vector<double> dpooled(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      g.head(i, j) += st.pooled[i] * dlogits[j];
      dpooled[i] += weights.head(i, j) * dlogits[j];
    }
  }
  for (std::size_t j = 0; j < k; ++j) g.head_bias[j] += dlogits[j];

  const std::size_t T = st.embedded.rows();
  Matrix dy(T, d);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < d; ++i) dy(t, i) = dpooled[i] / static_cast<double>(T);
  }
  Matrix dh = nn::layer_norm_backward(dy, st.final_cache, weights.final_norm.scale,
                                      span_of(g.final_norm.scale), span_of(g.final_norm.shift));
  for (std::size_t b = weights.blocks.size(); b-- > 0;) {
    dh = block_backward(dh, weights.blocks[b], st.blocks[b], g.blocks[b]);
  }
  // embedded = x^T P0 + b, so dP0 = x * dh.
  kernels::matmul(x.values, dh, g.P0, true);
  kernels::accumulate_col_sums(dh, g.P0_bias);
  return lg.loss;
}

BackwardResult backward(std::span<const Example> batch, const ModelWeights& weights,
                        const TrainConfig& config, std::uint64_t stream_seed) {
  if (batch.empty()) throw std::invalid_argument("backward: empty batch");
  const double weight = 1.0 / static_cast<double>(batch.size());
  BackwardResult result{0.0, GradientTape::zeros_like(weights)};
  std::vector<double> losses(batch.size(), 0.0);

  for (std::size_t begin = 0; begin < batch.size(); begin += kReduceChunk) {
    const std::size_t end = std::min(batch.size(), begin + kReduceChunk);
    std::vector<GradientTape> local(end - begin);
    std::exception_ptr error;
    const long n = static_cast<long>(end - begin);
#pragma omp parallel for schedule(dynamic)
    for (long j = 0; j < n; ++j) {
      try {
        const std::size_t i = begin + static_cast<std::size_t>(j);
        local[j] = GradientTape::zeros_like(weights);
        auto rng = make_stream({stream_seed, i});
        const auto gates = draw_gates(weights.config, config.survival_prob, &rng);
        losses[i] = example_backward(batch[i].x, batch[i].label, weights,
                                     config.label_smoothing, gates, weight, local[j]);
      } catch (...) {
#pragma omp critical
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
    for (std::size_t i = begin; i < end; ++i) {
      if (!std::isfinite(losses[i])) throw NonFiniteLoss(i, losses[i]);
    }
    for (auto& t : local) result.tape.add(t);
  }
  for (double l : losses) result.loss += l;
  result.loss *= weight;
  return result;
}

AdamState AdamState::zeros_like(const ModelWeights& weights) {
  return AdamState{ModelWeights::zeros(weights.config), ModelWeights::zeros(weights.config), 0};
}

void adamw_update(std::span<double> w, std::span<const double> g, std::span<double> m,
                  std::span<double> v, std::uint64_t step, double lr, const AdamHyper& hyper,
                  bool decay) {
  if (g.size() != w.size() || m.size() != w.size() || v.size() != w.size()) {
    throw ShapeError("adamw_update: length mismatch");
  }
  if (step == 0) throw std::invalid_argument("adamw_update: step is 1-based");
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
  const double wd = decay ? hyper.weight_decay : 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
    v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    const double update = m_hat / (std::sqrt(v_hat) + hyper.eps);
    w[i] = w[i] - lr * update - lr * wd * w[i];
  }
}

void adamw_step(ModelWeights& weights, const GradientTape& tape, AdamState& state, double lr,
                const TrainConfig& config) {
  auto w = weights.tensors();
  const auto g = tape.grad.tensors();
  auto m = state.m.tensors();
  auto v = state.v.tensors();
  zip_tensors(w, m, "adamw_step: first moment layout");
  zip_tensors(w, v, "adamw_step: second moment layout");
  if (g.size() != w.size()) throw ShapeError("adamw_step: gradient layout");
  ++state.step;
  const AdamHyper hyper{config.beta1, config.beta2, config.adam_eps, config.weight_decay};
  for (std::size_t i = 0; i < w.size(); ++i) {
    adamw_update(w[i].values, g[i].values, m[i].values, v[i].values, state.step, lr, hyper,
                 w[i].decay);
  }
}

std::vector<std::uint8_t> serialize_optimizer(const AdamState& state) {
  std::vector<io::TensorRecord> records;
  io::TensorRecord meta;
  meta.name = "meta";
  meta.dtype = io::DType::kU32;
  meta.dims = {2};
  meta.u32 = {static_cast<std::uint32_t>(state.step & 0xFFFFFFFFu),
              static_cast<std::uint32_t>(state.step >> 32)};
  records.push_back(std::move(meta));
  for (const auto* src : {&state.m, &state.v}) {
    const std::string prefix = src == &state.m ? "m." : "v.";
    for (const auto& t : src->tensors()) {
      io::TensorRecord rec;
      rec.name = prefix + t.name;
      rec.dims = t.dims;
      for (double x : t.values) rec.f32.push_back(static_cast<float>(x));
      records.push_back(std::move(rec));
    }
  }
  return io::write_tensor_table("OPT1", records);
}

AdamState deserialize_optimizer(std::span<const std::uint8_t> bytes, const EncoderConfig& config) {
  const auto records = io::read_tensor_table(bytes, "OPT1");
  AdamState state{ModelWeights::zeros(config), ModelWeights::zeros(config), 0};
  if (records.empty() || records[0].name != "meta" || records[0].u32.size() != 2) {
    throw io::FormatError("OPT1: missing meta tensor");
  }
  state.step = records[0].u32[0] | (static_cast<std::uint64_t>(records[0].u32[1]) << 32);
  auto m = state.m.tensors();
  auto v = state.v.tensors();
  if (records.size() != 1 + m.size() + v.size()) throw io::FormatError("OPT1: tensor count");
  std::size_t idx = 1;
  for (auto* refs : {&m, &v}) {
    const std::string prefix = refs == &m ? "m." : "v.";
    for (auto& t : *refs) {
      const auto& rec = records[idx++];
      if (rec.name != prefix + t.name || rec.dims != t.dims || rec.dtype != io::DType::kF32) {
        throw io::FormatError("OPT1: unexpected tensor " + rec.name);
      }
      for (std::size_t k = 0; k < rec.f32.size(); ++k) t.values[k] = rec.f32[k];
    }
  }
  return state;
}

double lr_at(double epoch, const TrainConfig& config) {
  const double total = config.epochs;
  const double warm = config.warmup_epochs;
  const double e = std::clamp(epoch, 0.0, total);
  if (e < warm) return config.peak_lr * e / warm;
  return 0.5 * config.peak_lr * (1.0 + std::cos(std::numbers::pi * (e - warm) / (total - warm)));
}

std::string log_to_csv(std::span<const LogRow> rows) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,step,lr,loss\n";
  for (const auto& r : rows) out << r.epoch << ',' << r.step << ',' << r.lr << ',' << r.loss << '\n';
  return out.str();
}

TrainResult train(std::span<const Example> dataset, const EncoderConfig& encoder,
                  const TrainConfig& config, const ProgressFn& progress) {
  config.validate();
  encoder.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  for (const auto& ex : dataset) {
    if (ex.label < 0 || ex.label >= encoder.n_classes) {
      throw std::invalid_argument("train: label " + std::to_string(ex.label) + " out of range");
    }
  }

  TrainResult result;
  result.weights = init_weights(encoder, config.seed);
  result.optimizer = AdamState::zeros_like(result.weights);

  const std::size_t n = dataset.size();
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  const std::size_t batches = (n + batch - 1) / batch;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto shuffle_rng = make_stream({config.seed, 1});

  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * batch;
      const std::size_t end = std::min(n, begin + batch);
      auto aug_rng = make_stream({config.seed, 2, static_cast<std::uint64_t>(step)});
      std::vector<Example> mb;
      mb.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        const auto& ex = dataset[order[i]];
        mb.push_back({augment(ex.x, config, aug_rng), ex.label});
      }
      const double lr = lr_at(epoch + static_cast<double>(b) / batches, config);
      const auto stream = make_stream({config.seed, 3, static_cast<std::uint64_t>(step)})();
      auto br = backward(mb, result.weights, config, stream);
      adamw_step(result.weights, br.tape, result.optimizer, lr, config);
      LogRow row{epoch, step, lr, br.loss};
      result.log.push_back(row);
      if (progress) progress(row);
      epoch_sum += br.loss * static_cast<double>(end - begin);
      ++step;
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(n));
  }
  return result;
}

double accuracy(std::span<const Example> dataset, const ModelWeights& weights) {
  if (dataset.empty()) return 0.0;
  std::vector<int> hit(dataset.size(), 0);
  const long n = static_cast<long>(dataset.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    const auto logits = classify(dataset[i].x, weights);
    const auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
    hit[i] = best == dataset[i].label ? 1 : 0;
  }
  return static_cast<double>(std::accumulate(hit.begin(), hit.end(), 0)) /
         static_cast<double>(dataset.size());
}

}  // namespace kwmlp::train
