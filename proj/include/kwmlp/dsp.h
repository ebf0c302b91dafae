#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kwmlp/matrix.h"

namespace kwmlp::dsp {

inline constexpr int kModelSampleRate = 16000;

// Mono audio. Amplitudes are nominally in [-1, 1].
struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = kModelSampleRate;

  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// Rejects empty or non-finite buffers and non-positive rates.
void validate(const AudioBuffer& audio);

class DecodeError : public std::runtime_error {
 public:
  enum class Kind { kMalformedHeader, kUnsupportedCodec, kEmptyData };
  DecodeError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

class AudioError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class WavEncoding { kPcm16, kFloat32 };

// Parses a RIFF/WAVE container holding PCM16 or IEEE float32 samples
// (WAVE_FORMAT_EXTENSIBLE wrappers accepted). Channels are averaged.
AudioBuffer decode_wav(std::span<const std::uint8_t> bytes);
AudioBuffer read_wav(const std::string& path);

// Mono writer; PCM16 clips to [-1, 1] and rounds to the nearest step.
std::vector<std::uint8_t> encode_wav(const AudioBuffer& audio,
                                     WavEncoding encoding = WavEncoding::kPcm16,
                                     int channels = 1);
void write_wav(const std::string& path, const AudioBuffer& audio,
               WavEncoding encoding = WavEncoding::kPcm16);

// Polyphase windowed-sinc resampler (Kaiser window). Output length is
// round(n * target / source); constant signals come out bit-identical.
AudioBuffer resample(const AudioBuffer& audio, int target_rate);

// Zero-pads to the next whole second and cuts 1 s segments. Requires 16 kHz.
std::vector<AudioBuffer> pad_and_segment(const AudioBuffer& audio);

enum class MelScale { kHtk };
enum class SpectrumType { kPower, kMagnitude };

struct MfccConfig {
  int sample_rate = kModelSampleRate;
  double window_length = 0.030;  // seconds
  double hop_length = 0.010;     // seconds
  int n_mels = 40;
  int n_mfcc = 40;
  int fft_size = 512;
  double log_floor = 1e-10;
  MelScale mel_scale = MelScale::kHtk;
  SpectrumType spectrum = SpectrumType::kPower;

  int window_samples() const;
  int hop_samples() const;
  int frames_for(std::size_t n_samples) const;
  // Throws std::invalid_argument when an invariant is violated.
  void validate() const;
};

// Plain-text key=value form; unknown keys and malformed values are errors.
std::string to_config_text(const MfccConfig& config);
MfccConfig parse_config_text(const std::string& text);

// n_mfcc x frames matrix of cepstral coefficients (40 x 98 for one second).
struct Mfcc {
  Matrix values;

  std::size_t coefficients() const { return values.rows(); }
  std::size_t frames() const { return values.cols(); }
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// n_mels x (fft_size / 2 + 1) triangular filters spanning 0 Hz to Nyquist.
Matrix mel_filterbank(const MfccConfig& config);
// Periodic Hann window of the configured length.
std::vector<double> hann_window(int length);
// n x n orthonormal DCT-II matrix; row k holds basis function k.
Matrix dct_matrix(int n);

// Per-frame log mel energies, n_mels x frames (the pre-DCT stage).
Matrix log_mel_spectrogram(const AudioBuffer& segment, const MfccConfig& config);

// Full MFCC of one 1 s segment. Any other length is a ShapeError.
Mfcc mfcc(const AudioBuffer& segment, const MfccConfig& config = {});

// resample -> pad_and_segment -> mfcc for every segment.
std::vector<Mfcc> audio_to_mfccs(const AudioBuffer& audio, const MfccConfig& config = {});

}  // namespace kwmlp::dsp
