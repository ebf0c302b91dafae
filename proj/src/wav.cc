#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "kwmlp/dsp.h"

namespace kwmlp::dsp {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t read_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

bool tag_is(const std::uint8_t* p, const char* tag) { return std::memcmp(p, tag, 4) == 0; }

[[noreturn]] void malformed(const std::string& why) {
  throw DecodeError(DecodeError::Kind::kMalformedHeader, "malformed WAV: " + why);
}

struct Format {
  std::uint16_t code = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t block_align = 0;
  std::uint16_t bits = 0;
};

Format parse_fmt(const std::uint8_t* p, std::uint32_t size) {
  if (size < 16) malformed("fmt chunk shorter than 16 bytes");
  Format f;
  f.code = read_u16(p);
  f.channels = read_u16(p + 2);
  f.sample_rate = read_u32(p + 4);
  f.block_align = read_u16(p + 12);
  f.bits = read_u16(p + 14);
  if (f.code == kFormatExtensible) {
    if (size < 40) malformed("extensible fmt chunk shorter than 40 bytes");
    // First two bytes of the subformat GUID carry the real format code.
    f.code = read_u16(p + 24);
  }
  if (f.channels == 0) malformed("zero channels");
  if (f.sample_rate == 0) malformed("zero sample rate");
  return f;
}

}  // namespace

void validate(const AudioBuffer& audio) {
  if (audio.sample_rate <= 0) throw AudioError("sample rate must be positive");
  if (audio.samples.empty()) throw AudioError("audio buffer is empty");
  for (double s : audio.samples) {
    if (!std::isfinite(s)) throw AudioError("audio contains non-finite samples");
  }
}

AudioBuffer decode_wav(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12) malformed("shorter than RIFF header");
  if (!tag_is(bytes.data(), "RIFF") || !tag_is(bytes.data() + 8, "WAVE")) {
    malformed("missing RIFF/WAVE tags");
  }

  bool have_fmt = false;
  Format fmt;
  const std::uint8_t* data = nullptr;
  std::size_t data_size = 0;
  bool have_data = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    if (size > bytes.size() - pos - 8) malformed("chunk runs past end of file");
    if (tag_is(chunk, "fmt ")) {
      fmt = parse_fmt(chunk + 8, size);
      have_fmt = true;
    } else if (tag_is(chunk, "data")) {
      data = chunk + 8;
      data_size = size;
      have_data = true;
      break;
    }
    pos += 8 + size + (size & 1u);
  }
  if (!have_fmt) malformed("no fmt chunk before data");
  if (!have_data) malformed("no data chunk");

  const bool pcm16 = fmt.code == kFormatPcm && fmt.bits == 16;
  const bool float32 = fmt.code == kFormatFloat && fmt.bits == 32;
  if (!pcm16 && !float32) {
    throw DecodeError(DecodeError::Kind::kUnsupportedCodec,
                      "unsupported WAV codec: format " + std::to_string(fmt.code) + ", " +
                          std::to_string(fmt.bits) + " bits");
  }
  const std::size_t bytes_per_sample = fmt.bits / 8;
  const std::size_t frame_bytes = bytes_per_sample * fmt.channels;
  const std::size_t frames = data_size / frame_bytes;
  if (frames == 0) {
    throw DecodeError(DecodeError::Kind::kEmptyData, "WAV data chunk holds no samples");
  }

  AudioBuffer out;
  out.sample_rate = static_cast<int>(fmt.sample_rate);
  out.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t ch = 0; ch < fmt.channels; ++ch) {
      const std::uint8_t* s = data + i * frame_bytes + ch * bytes_per_sample;
      if (pcm16) {
        acc += static_cast<std::int16_t>(read_u16(s)) / 32768.0;
      } else {
        float f;
        const std::uint32_t bits = read_u32(s);
        std::memcpy(&f, &bits, sizeof f);
        acc += f;
      }
    }
    out.samples[i] = acc / fmt.channels;
  }
  return out;
}

AudioBuffer read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AudioError("cannot open audio file: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_wav(bytes);
}

std::vector<std::uint8_t> encode_wav(const AudioBuffer& audio, WavEncoding encoding,
                                     int channels) {
  if (channels < 1) throw AudioError("encode_wav: channels must be >= 1");
  const bool pcm = encoding == WavEncoding::kPcm16;
  const std::uint16_t bits = pcm ? 16 : 32;
  const std::uint32_t block_align = static_cast<std::uint32_t>(channels) * bits / 8;
  const std::uint32_t data_size = static_cast<std::uint32_t>(audio.samples.size()) * block_align;

  std::vector<std::uint8_t> out;
  out.reserve(44 + data_size);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_size);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, pcm ? kFormatPcm : kFormatFloat);
  put_u16(out, static_cast<std::uint16_t>(channels));
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate) * block_align);
  put_u16(out, static_cast<std::uint16_t>(block_align));
  put_u16(out, bits);
  put_tag(out, "data");
  put_u32(out, data_size);
  for (double s : audio.samples) {
    for (int ch = 0; ch < channels; ++ch) {
      if (pcm) {
        const double clipped = std::clamp(s, -1.0, 32767.0 / 32768.0);
        put_u16(out, static_cast<std::uint16_t>(
                         static_cast<std::int16_t>(std::lround(clipped * 32768.0))));
      } else {
        const float f = static_cast<float>(s);
        std::uint32_t bits32;
        std::memcpy(&bits32, &f, sizeof f);
        put_u32(out, bits32);
      }
    }
  }
  return out;
}

void write_wav(const std::string& path, const AudioBuffer& audio, WavEncoding encoding) {
  const auto bytes = encode_wav(audio, encoding);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw AudioError("cannot write audio file: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

}  // namespace kwmlp::dsp
