#include "kwmlp/io.h"

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace kwmlp::io {
namespace {

constexpr std::string_view kWeightsMagic = "KWM1";
constexpr std::string_view kEmbeddingMagic = "EMB1";

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v & 0xFF));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    u32(bits);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw FormatError("truncated file");
  }
  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, sizeof f);
    return f;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

void expect_magic(Reader& r, std::string_view magic) {
  if (r.str(4) != magic) throw FormatError("bad magic, expected " + std::string(magic));
}

std::string dims_str(const std::vector<std::uint32_t>& dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "x" : "") + std::to_string(dims[i]);
  return s;
}

}  // namespace

std::size_t TensorRecord::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::vector<std::uint8_t> write_tensor_table(std::string_view magic,
                                             std::span<const TensorRecord> tensors) {
  if (magic.size() != 4) throw std::invalid_argument("magic must be 4 bytes");
  Writer w;
  w.bytes(magic.data(), 4);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xFFFF) throw std::invalid_argument("tensor name too long");
    if (t.dims.size() > 0xFF) throw std::invalid_argument("tensor rank too large");
    const std::size_t count = t.element_count();
    const std::size_t have = t.dtype == DType::kF32 ? t.f32.size() : t.u32.size();
    if (have != count) throw std::invalid_argument("tensor " + t.name + ": payload size");
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u8(static_cast<std::uint8_t>(t.dtype));
    w.u8(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(d);
    if (t.dtype == DType::kF32) {
      for (float v : t.f32) w.f32(v);
    } else {
      for (auto v : t.u32) w.u32(v);
    }
  }
  return w.take();
}

std::vector<TensorRecord> read_tensor_table(std::span<const std::uint8_t> bytes,
                                            std::string_view magic) {
  Reader r(bytes);
  expect_magic(r, magic);
  const std::uint32_t count = r.u32();
  std::vector<TensorRecord> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    t.name = r.str(r.u16());
    const std::uint8_t dtype = r.u8();
    if (dtype > 1) throw FormatError("tensor " + t.name + ": unknown dtype");
    t.dtype = static_cast<DType>(dtype);
    const std::uint8_t rank = r.u8();
    std::size_t n = 1;
    for (int k = 0; k < rank; ++k) {
      t.dims.push_back(r.u32());
      n *= t.dims.back();
    }
    r.need(n * 4);
    if (t.dtype == DType::kF32) {
      t.f32.resize(n);
      for (auto& v : t.f32) v = r.f32();
    } else {
      t.u32.resize(n);
      for (auto& v : t.u32) v = r.u32();
    }
    out.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError("trailing bytes after tensor table");
  return out;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

std::vector<std::uint8_t> serialize_weights(const ModelWeights& weights) {
  const auto& c = weights.config;
  std::vector<TensorRecord> records;
  TensorRecord meta;
  meta.name = "meta";
  meta.dtype = DType::kU32;
  meta.dims = {6};
  meta.u32 = {static_cast<std::uint32_t>(c.F), static_cast<std::uint32_t>(c.T),
              static_cast<std::uint32_t>(c.d), static_cast<std::uint32_t>(c.D),
              static_cast<std::uint32_t>(c.L), static_cast<std::uint32_t>(c.n_classes)};
  records.push_back(std::move(meta));
  for (const auto& t : weights.tensors()) {
    TensorRecord rec;
    rec.name = t.name;
    rec.dims = t.dims;
    rec.f32.reserve(t.values.size());
    for (double v : t.values) rec.f32.push_back(static_cast<float>(v));
    records.push_back(std::move(rec));
  }
  return write_tensor_table(kWeightsMagic, records);
}

ModelWeights deserialize_weights(std::span<const std::uint8_t> bytes) {
  const auto records = read_tensor_table(bytes, kWeightsMagic);
  if (records.empty() || records.front().name != "meta" ||
      records.front().dtype != DType::kU32 || records.front().u32.size() != 6) {
    throw FormatError("weights: missing meta tensor");
  }
  const auto& m = records.front().u32;
  EncoderConfig config;
  config.F = static_cast<int>(m[0]);
  config.T = static_cast<int>(m[1]);
  config.d = static_cast<int>(m[2]);
  config.D = static_cast<int>(m[3]);
  config.L = static_cast<int>(m[4]);
  config.n_classes = static_cast<int>(m[5]);
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("weights: bad meta: ") + e.what());
  }
  ModelWeights w = ModelWeights::zeros(config);
  auto refs = w.tensors();
  if (records.size() != refs.size() + 1) {
    throw FormatError("weights: expected " + std::to_string(refs.size()) + " tensors, found " +
                      std::to_string(records.size() - 1));
  }
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& rec = records[i + 1];
    if (rec.name != refs[i].name || rec.dims != refs[i].dims || rec.dtype != DType::kF32) {
      throw FormatError("weights: tensor " + std::to_string(i) + " is " + rec.name + " " +
                        dims_str(rec.dims) + ", expected " + refs[i].name + " " +
                        dims_str(refs[i].dims));
    }
    for (std::size_t k = 0; k < rec.f32.size(); ++k) {
      if (!std::isfinite(rec.f32[k])) throw FormatError("weights: non-finite value in " + rec.name);
      refs[i].values[k] = rec.f32[k];
    }
  }
  return w;
}

void save_weights(const std::string& path, const ModelWeights& weights) {
  write_file(path, serialize_weights(weights));
}

ModelWeights load_weights(const std::string& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file(path);
  } catch (const std::runtime_error& e) {
    throw FormatError(e.what());
  }
  return deserialize_weights(bytes);
}

std::vector<std::uint8_t> serialize_embeddings(const Matrix& m) {
  Writer w;
  w.bytes(kEmbeddingMagic.data(), 4);
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (double v : m.flat()) w.f32(static_cast<float>(v));
  return w.take();
}

Matrix deserialize_embeddings(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  expect_magic(r, kEmbeddingMagic);
  const std::size_t rows = r.u32();
  const std::size_t cols = r.u32();
  r.need(rows * cols * 4);
  Matrix m(rows, cols);
  for (double& v : m.flat()) v = r.f32();
  if (!r.done()) throw FormatError("EMB1: trailing bytes");
  return m;
}

std::string embeddings_to_csv(const Matrix& m) {
  std::string out;
  char buf[64];
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      const auto res = std::to_chars(buf, buf + sizeof buf, m(r, c));
      out.append(buf, res.ptr);
    }
    out += '\n';
  }
  return out;
}

Matrix embeddings_from_csv(const std::string& text) {
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t n = 0;
    const char* p = line.data();
    const char* end = p + line.size();
    while (true) {
      double v;
      const auto res = std::from_chars(p, end, v);
      if (res.ec != std::errc()) throw FormatError("CSV: bad number on row " + std::to_string(rows));
      values.push_back(v);
      ++n;
      p = res.ptr;
      if (p == end) break;
      if (*p != ',') throw FormatError("CSV: expected ',' on row " + std::to_string(rows));
      ++p;
    }
    if (rows == 0) {
      cols = n;
    } else if (n != cols) {
      throw FormatError("CSV: ragged row " + std::to_string(rows));
    }
    ++rows;
  }
  return Matrix(rows, cols, std::move(values));
}

Matrix load_embeddings(const std::string& path) {
  const auto bytes = read_file(path);
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kEmbeddingMagic.data(), 4) == 0) {
    return deserialize_embeddings(bytes);
  }
  return embeddings_from_csv(std::string(bytes.begin(), bytes.end()));
}

}  // namespace kwmlp::io
