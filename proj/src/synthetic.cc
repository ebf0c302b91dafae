#include "kwmlp/synthetic.h"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace kwmlp::synth {
namespace {

std::size_t sample_count(double seconds, int rate) {
  if (!(seconds > 0.0)) throw std::invalid_argument("synthetic clip needs a positive duration");
  return static_cast<std::size_t>(std::llround(seconds * rate));
}

}  // namespace

std::string to_string(Kind kind) {
  switch (kind) {
    case Kind::kSine:
      return "sine";
    case Kind::kNoise:
      return "noise";
    case Kind::kChirp:
      return "chirp";
  }
  return "unknown";
}

dsp::AudioBuffer sine(double freq_hz, double seconds, double amplitude, int sample_rate,
                      double phase) {
  dsp::AudioBuffer out;
  out.sample_rate = sample_rate;
  out.samples.resize(sample_count(seconds, sample_rate));
  for (std::size_t n = 0; n < out.samples.size(); ++n) {
    out.samples[n] =
        amplitude * std::sin(2.0 * std::numbers::pi * freq_hz * n / sample_rate + phase);
  }
  return out;
}

dsp::AudioBuffer white_noise(double seconds, double amplitude, std::mt19937_64& rng,
                             int sample_rate) {
  dsp::AudioBuffer out;
  out.sample_rate = sample_rate;
  out.samples.resize(sample_count(seconds, sample_rate));
  std::uniform_real_distribution<double> u(-amplitude, amplitude);
  for (double& s : out.samples) s = u(rng);
  return out;
}

dsp::AudioBuffer chirp(double f0_hz, double f1_hz, double seconds, double amplitude,
                       int sample_rate) {
  dsp::AudioBuffer out;
  out.sample_rate = sample_rate;
  out.samples.resize(sample_count(seconds, sample_rate));
  const double rate = (f1_hz - f0_hz) / seconds;
  for (std::size_t n = 0; n < out.samples.size(); ++n) {
    const double t = static_cast<double>(n) / sample_rate;
    out.samples[n] = amplitude * std::sin(2.0 * std::numbers::pi * (f0_hz * t + 0.5 * rate * t * t));
  }
  return out;
}

std::vector<Clip> make_task(const TaskSpec& spec) {
  if (spec.kinds.empty() || spec.clips_per_class < 1) {
    throw std::invalid_argument("make_task: need at least one class and one clip");
  }
  if (!(spec.min_seconds > 0.0) || spec.max_seconds < spec.min_seconds) {
    throw std::invalid_argument("make_task: bad duration range");
  }
  std::mt19937_64 rng(spec.seed);
  auto uniform = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  std::vector<Clip> clips;
  for (int i = 0; i < spec.clips_per_class; ++i) {
    for (std::size_t label = 0; label < spec.kinds.size(); ++label) {
      const Kind kind = spec.kinds[label];
      const double seconds = spec.max_seconds > spec.min_seconds
                                 ? uniform(spec.min_seconds, spec.max_seconds)
                                 : spec.min_seconds;
      Clip clip;
      clip.label = static_cast<int>(label);
      clip.kind = kind;
      switch (kind) {
        case Kind::kSine:
          clip.audio = sine(uniform(200.0, 2000.0), seconds, uniform(0.1, 0.8),
                            dsp::kModelSampleRate, uniform(0.0, 2.0 * std::numbers::pi));
          break;
        case Kind::kNoise:
          clip.audio = white_noise(seconds, uniform(0.05, 0.5), rng);
          break;
        case Kind::kChirp:
          clip.audio = chirp(uniform(200.0, 800.0), uniform(1500.0, 4000.0), seconds,
                             uniform(0.1, 0.8));
          break;
      }
      clips.push_back(std::move(clip));
    }
  }
  return clips;
}

}  // namespace kwmlp::synth
