#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "kwmlp/dsp.h"

// Generated audio for smoke tests, acceptance runs and ablations.
namespace kwmlp::synth {

enum class Kind { kSine, kNoise, kChirp };

std::string to_string(Kind kind);

dsp::AudioBuffer sine(double freq_hz, double seconds, double amplitude = 1.0,
                      int sample_rate = dsp::kModelSampleRate, double phase = 0.0);
dsp::AudioBuffer white_noise(double seconds, double amplitude, std::mt19937_64& rng,
                             int sample_rate = dsp::kModelSampleRate);
// Linear frequency sweep from f0 to f1.
dsp::AudioBuffer chirp(double f0_hz, double f1_hz, double seconds, double amplitude = 1.0,
                       int sample_rate = dsp::kModelSampleRate);

struct Clip {
  dsp::AudioBuffer audio;
  int label = 0;
  Kind kind = Kind::kSine;
};

struct TaskSpec {
  std::vector<Kind> kinds{Kind::kSine, Kind::kNoise};  // label = index
  int clips_per_class = 16;
  double min_seconds = 1.0;
  double max_seconds = 1.0;
  std::uint64_t seed = 0;
};

// Randomized frequency, amplitude, phase and duration per clip. Clips are
// interleaved by class.
std::vector<Clip> make_task(const TaskSpec& spec);

}  // namespace kwmlp::synth
