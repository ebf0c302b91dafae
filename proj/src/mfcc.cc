#include <fftw3.h>

#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <sstream>

#include "kwmlp/dsp.h"
#include "kwmlp/kernels.h"

namespace kwmlp::dsp {
namespace {

// FFTW planning is not thread-safe; execution on a fixed plan is. Plans are
// created once per size under a lock and reused with the new-array API.
class RealFft {
 public:
  static const RealFft& get(int n) {
    static std::mutex mu;
    static std::map<int, std::unique_ptr<RealFft>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[n];
    if (!slot) slot.reset(new RealFft(n));
    return *slot;
  }

  ~RealFft() { fftw_destroy_plan(plan_); }

  // in has n samples, out receives n/2 + 1 bins.
  void forward(std::vector<double>& in, std::vector<std::complex<double>>& out) const {
    fftw_execute_dft_r2c(plan_, in.data(), reinterpret_cast<fftw_complex*>(out.data()));
  }

 private:
  explicit RealFft(int n) {
    std::vector<double> in(static_cast<std::size_t>(n));
    std::vector<std::complex<double>> out(static_cast<std::size_t>(n / 2 + 1));
    plan_ = fftw_plan_dft_r2c_1d(n, in.data(), reinterpret_cast<fftw_complex*>(out.data()),
                                 FFTW_ESTIMATE | FFTW_UNALIGNED);
  }

  fftw_plan plan_;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

int MfccConfig::window_samples() const {
  return static_cast<int>(std::lround(window_length * sample_rate));
}

int MfccConfig::hop_samples() const { return static_cast<int>(std::lround(hop_length * sample_rate)); }

int MfccConfig::frames_for(std::size_t n_samples) const {
  const auto win = static_cast<std::size_t>(window_samples());
  if (n_samples < win) return 0;
  return static_cast<int>((n_samples - win) / static_cast<std::size_t>(hop_samples())) + 1;
}

void MfccConfig::validate() const {
  if (sample_rate <= 0) throw std::invalid_argument("MfccConfig: sample_rate must be positive");
  if (window_samples() <= 0 || hop_samples() <= 0) {
    throw std::invalid_argument("MfccConfig: window and hop must be positive");
  }
  if (n_mels <= 0 || n_mfcc <= 0 || n_mfcc > n_mels) {
    throw std::invalid_argument("MfccConfig: need 0 < n_mfcc <= n_mels");
  }
  if (fft_size < window_samples()) {
    throw std::invalid_argument("MfccConfig: fft_size shorter than the window");
  }
  if (!(log_floor > 0.0)) throw std::invalid_argument("MfccConfig: log_floor must be > 0");
}

std::string to_config_text(const MfccConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "sample_rate=" << c.sample_rate << "\n"
      << "window_length=" << c.window_length << "\n"
      << "hop_length=" << c.hop_length << "\n"
      << "n_mels=" << c.n_mels << "\n"
      << "n_mfcc=" << c.n_mfcc << "\n"
      << "fft_size=" << c.fft_size << "\n"
      << "log_floor=" << c.log_floor << "\n"
      << "mel_scale=htk\n"
      << "window=hann\n"
      << "spectrum=" << (c.spectrum == SpectrumType::kPower ? "power" : "magnitude") << "\n";
  return out.str();
}

MfccConfig parse_config_text(const std::string& text) {
  MfccConfig c;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      std::size_t used = 0;
      auto whole = [&](std::size_t n) {
        if (n != value.size()) throw std::invalid_argument("trailing characters");
      };
      if (key == "sample_rate") {
        c.sample_rate = std::stoi(value, &used), whole(used);
      } else if (key == "window_length") {
        c.window_length = std::stod(value, &used), whole(used);
      } else if (key == "hop_length") {
        c.hop_length = std::stod(value, &used), whole(used);
      } else if (key == "n_mels") {
        c.n_mels = std::stoi(value, &used), whole(used);
      } else if (key == "n_mfcc") {
        c.n_mfcc = std::stoi(value, &used), whole(used);
      } else if (key == "fft_size") {
        c.fft_size = std::stoi(value, &used), whole(used);
      } else if (key == "log_floor") {
        c.log_floor = std::stod(value, &used), whole(used);
      } else if (key == "mel_scale") {
        if (value != "htk") throw std::invalid_argument("only htk is supported");
      } else if (key == "window") {
        if (value != "hann") throw std::invalid_argument("only hann is supported");
      } else if (key == "spectrum") {
        if (value == "power") {
          c.spectrum = SpectrumType::kPower;
        } else if (value == "magnitude") {
          c.spectrum = SpectrumType::kMagnitude;
        } else {
          throw std::invalid_argument("expected power or magnitude");
        }
      } else {
        throw std::invalid_argument("unknown key");
      }
    } catch (const std::exception& e) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + " (" + key +
                                  "): " + e.what());
    }
  }
  c.validate();
  return c;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Matrix mel_filterbank(const MfccConfig& config) {
  const int bins = config.fft_size / 2 + 1;
  const double nyquist = config.sample_rate / 2.0;
  const double mel_hi = hz_to_mel(nyquist);
  std::vector<double> edges(static_cast<std::size_t>(config.n_mels + 2));
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_hi * static_cast<double>(i) / (config.n_mels + 1));
  }
  Matrix fb(static_cast<std::size_t>(config.n_mels), static_cast<std::size_t>(bins));
  for (int m = 0; m < config.n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * config.sample_rate / config.fft_size;
      double w = 0.0;
      if (f > lo && f <= mid) {
        w = (f - lo) / (mid - lo);
      } else if (f > mid && f < hi) {
        w = (hi - f) / (hi - mid);
      }
      fb(m, k) = w;
    }
  }
  return fb;
}

std::vector<double> hann_window(int length) {
  std::vector<double> w(static_cast<std::size_t>(length));
  for (int n = 0; n < length; ++n) {
    w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / length);
  }
  return w;
}

Matrix dct_matrix(int n) {
  Matrix d(static_cast<std::size_t>(n), static_cast<std::size_t>(n));
  const double s0 = std::sqrt(1.0 / n);
  const double sk = std::sqrt(2.0 / n);
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < n; ++i) {
      d(k, i) = (k == 0 ? s0 : sk) * std::cos(std::numbers::pi * k * (2 * i + 1) / (2.0 * n));
    }
  }
  return d;
}

Matrix log_mel_spectrogram(const AudioBuffer& segment, const MfccConfig& config) {
  config.validate();
  validate(segment);
  if (segment.sample_rate != config.sample_rate) {
    throw ShapeError("log_mel_spectrogram: sample rate mismatch");
  }
  const int win = config.window_samples();
  const int hop = config.hop_samples();
  const int frames = config.frames_for(segment.samples.size());
  if (frames <= 0) throw ShapeError("log_mel_spectrogram: segment shorter than one window");

  const Matrix fb = mel_filterbank(config);
  const auto window = hann_window(win);
  const RealFft& fft = RealFft::get(config.fft_size);
  const std::size_t bins = static_cast<std::size_t>(config.fft_size / 2 + 1);

  Matrix out(static_cast<std::size_t>(config.n_mels), static_cast<std::size_t>(frames));
  std::vector<double> frame(static_cast<std::size_t>(config.fft_size));
  std::vector<std::complex<double>> spec(bins);
  std::vector<double> energy(bins);
  for (int t = 0; t < frames; ++t) {
    std::fill(frame.begin(), frame.end(), 0.0);
    const double* src = segment.samples.data() + static_cast<std::size_t>(t) * hop;
    for (int n = 0; n < win; ++n) frame[n] = src[n] * window[n];
    fft.forward(frame, spec);
    for (std::size_t k = 0; k < bins; ++k) {
      const double mag2 = std::norm(spec[k]);
      energy[k] = config.spectrum == SpectrumType::kPower ? mag2 : std::sqrt(mag2);
    }
    for (int m = 0; m < config.n_mels; ++m) {
      double e = 0.0;
      auto w = fb.row(static_cast<std::size_t>(m));
      for (std::size_t k = 0; k < bins; ++k) e += w[k] * energy[k];
      out(m, t) = std::log(e + config.log_floor);
    }
  }
  return out;
}

Mfcc mfcc(const AudioBuffer& segment, const MfccConfig& config) {
  if (segment.samples.size() != static_cast<std::size_t>(config.sample_rate)) {
    throw ShapeError("mfcc: expected a 1 s segment of " + std::to_string(config.sample_rate) +
                     " samples, got " + std::to_string(segment.samples.size()));
  }
  const Matrix log_mel = log_mel_spectrogram(segment, config);
  const Matrix dct = dct_matrix(config.n_mels);
  Matrix full = kernels::matmul(dct, log_mel);
  Matrix kept(static_cast<std::size_t>(config.n_mfcc), full.cols());
  std::copy(full.data(), full.data() + kept.size(), kept.data());
  return Mfcc{std::move(kept)};
}

std::vector<Mfcc> audio_to_mfccs(const AudioBuffer& audio, const MfccConfig& config) {
  const auto segments = pad_and_segment(resample(audio, config.sample_rate));
  std::vector<Mfcc> out(segments.size());
  const long n = static_cast<long>(segments.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) out[i] = mfcc(segments[i], config);
  return out;
}

}  // namespace kwmlp::dsp
