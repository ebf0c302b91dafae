#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "kwmlp/encoder.h"
#include "kwmlp/matrix.h"

namespace kwmlp::io {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { kF32 = 0, kU32 = 1 };

// One entry of a tensor table. Exactly one of f32 / u32 is populated,
// according to dtype.
struct TensorRecord {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<std::uint32_t> dims;
  std::vector<float> f32;
  std::vector<std::uint32_t> u32;

  std::size_t element_count() const;
};

// Layout: 4-byte magic, u32 count, then per tensor u16 name length, UTF-8
// name, u8 dtype, u8 rank, rank x u32 dims, row-major little-endian payload.
std::vector<std::uint8_t> write_tensor_table(std::string_view magic,
                                             std::span<const TensorRecord> tensors);
std::vector<TensorRecord> read_tensor_table(std::span<const std::uint8_t> bytes,
                                            std::string_view magic);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);
void write_text(const std::string& path, const std::string& text);

// KWM1 weights. A leading "meta" tensor carries F, T, d, D, L, n_classes.
std::vector<std::uint8_t> serialize_weights(const ModelWeights& weights);
ModelWeights deserialize_weights(std::span<const std::uint8_t> bytes);
void save_weights(const std::string& path, const ModelWeights& weights);
ModelWeights load_weights(const std::string& path);

// EMB1: magic, u32 rows, u32 cols, row-major f32 payload.
std::vector<std::uint8_t> serialize_embeddings(const Matrix& m);
Matrix deserialize_embeddings(std::span<const std::uint8_t> bytes);

// One row per line, comma separated, shortest round-trip decimal form.
std::string embeddings_to_csv(const Matrix& m);
Matrix embeddings_from_csv(const std::string& text);

// Picks EMB1 or CSV by the leading magic.
Matrix load_embeddings(const std::string& path);

}  // namespace kwmlp::io
