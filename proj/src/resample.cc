#include <cmath>
#include <numbers>
#include <numeric>

#include "kwmlp/dsp.h"

namespace kwmlp::dsp {
namespace {

// Zero crossings of the low-pass sinc on each side of the centre tap, in
// units of the lower of the two sample rates (16 taps per phase at r = 1).
constexpr int kHalfZeroCrossings = 8;
constexpr double kKaiserBeta = 8.6;

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

double kaiser(double x, double beta) {
  // x in [-1, 1]
  const double arg = 1.0 - x * x;
  if (arg <= 0.0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(arg)) / std::cyl_bessel_i(0.0, beta);
}

}  // namespace

AudioBuffer resample(const AudioBuffer& audio, int target_rate) {
  validate(audio);
  if (target_rate <= 0) throw AudioError("resample: target rate must be positive");
  if (target_rate == audio.sample_rate) return audio;

  const std::int64_t g = std::gcd(audio.sample_rate, target_rate);
  const std::int64_t up = target_rate / g;          // L
  const std::int64_t down = audio.sample_rate / g;  // M
  const std::int64_t n_in = static_cast<std::int64_t>(audio.samples.size());
  const std::int64_t n_out =
      (n_in * target_rate + audio.sample_rate / 2) / audio.sample_rate;

  const double cutoff = std::min(1.0, static_cast<double>(up) / static_cast<double>(down));
  const double half_width = kHalfZeroCrossings / cutoff;
  const int reach = static_cast<int>(std::ceil(half_width));
  const int taps = 2 * reach;

  // Phase p sits p/up of an input sample after its base index. Tap k touches
  // input base + k - reach + 1.
  std::vector<double> table(static_cast<std::size_t>(up * taps));
  for (std::int64_t p = 0; p < up; ++p) {
    const double frac = static_cast<double>(p) / static_cast<double>(up);
    double* w = table.data() + p * taps;
    double sum = 0.0;
    for (int k = 0; k < taps; ++k) {
      const double tau = static_cast<double>(k - reach + 1) - frac;
      double h = 0.0;
      if (std::abs(tau) < half_width) {
        h = cutoff * sinc(cutoff * tau) * kaiser(tau / half_width, kKaiserBeta);
      }
      w[k] = h;
      sum += h;
    }
    for (int k = 0; k < taps; ++k) w[k] /= sum;
  }

  const auto& x = audio.samples;
  auto at = [&](std::int64_t i) {
    return x[static_cast<std::size_t>(std::clamp<std::int64_t>(i, 0, n_in - 1))];
  };

  AudioBuffer out;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<std::size_t>(n_out));
  for (std::int64_t n = 0; n < n_out; ++n) {
    const std::int64_t pos = n * down;
    const std::int64_t base = pos / up;
    const std::int64_t phase = pos % up;
    const double* w = table.data() + phase * taps;
    // Taps sum to one, so filtering deviations from the centre sample leaves
    // constant signals bit-exact.
    const double centre = at(base);
    double acc = 0.0;
    for (int k = 0; k < taps; ++k) acc += w[k] * (at(base + k - reach + 1) - centre);
    out.samples[static_cast<std::size_t>(n)] = centre + acc;
  }
  return out;
}

std::vector<AudioBuffer> pad_and_segment(const AudioBuffer& audio) {
  validate(audio);
  if (audio.sample_rate != kModelSampleRate) {
    throw AudioError("pad_and_segment: audio must be 16 kHz, got " +
                     std::to_string(audio.sample_rate));
  }
  const std::size_t seg = kModelSampleRate;
  const std::size_t count = (audio.samples.size() + seg - 1) / seg;
  std::vector<AudioBuffer> out(count);
  for (std::size_t s = 0; s < count; ++s) {
    out[s].sample_rate = kModelSampleRate;
    out[s].samples.assign(seg, 0.0);
    const std::size_t begin = s * seg;
    const std::size_t end = std::min(audio.samples.size(), begin + seg);
    std::copy(audio.samples.begin() + static_cast<std::ptrdiff_t>(begin),
              audio.samples.begin() + static_cast<std::ptrdiff_t>(end), out[s].samples.begin());
  }
  return out;
}

}  // namespace kwmlp::dsp
