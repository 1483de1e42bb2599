#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>

#include "nowcast/tensor.hpp"

namespace nowcast::io {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <Real T>
constexpr DType dtype_of() {
  return std::same_as<T, float> ? DType::f32 : DType::f64;
}

// Little-endian primitives. Readers throw DataError on truncated input.
void put_u8(std::ostream& os, std::uint8_t v);
void put_u32(std::ostream& os, std::uint32_t v);
void put_u64(std::ostream& os, std::uint64_t v);
void put_f64(std::ostream& os, double v);
/// u32 byte length followed by the raw bytes.
void put_string(std::ostream& os, std::string_view s);
void put_magic(std::ostream& os, std::string_view magic);

std::uint8_t get_u8(std::istream& is);
std::uint32_t get_u32(std::istream& is);
std::uint64_t get_u64(std::istream& is);
double get_f64(std::istream& is);
std::string get_string(std::istream& is);
/// Reads magic.size() bytes and throws DataError if they differ.
void expect_magic(std::istream& is, std::string_view magic);

/// T4v1 tensor record: "T4v1", four u64 dims (n,c,h,w), u8 dtype, raw payload.
template <Real T>
void write_tensor(std::ostream& os, const Tensor<T>& t);

/// Reads a T4v1 record, converting the payload to T when the stored dtype differs.
template <Real T>
Tensor<T> read_tensor(std::istream& is);

/// Dtype of the next record without consuming it.
DType peek_tensor_dtype(std::istream& is);

}  // namespace nowcast::io
