#include "nowcast/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <vector>

namespace nowcast::io {

namespace {

constexpr std::string_view kTensorMagic = "T4v1";

template <typename U>
void put_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> buf{};
  for (std::size_t i = 0; i < sizeof(U); ++i)
    buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf.data(), buf.size());
}

template <typename U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> buf{};
  if (!is.read(reinterpret_cast<char*>(buf.data()), buf.size()))
    throw DataError("unexpected end of stream");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

template <typename F>
void put_payload(std::ostream& os, std::span<const F> values) {
  using Bits = std::conditional_t<sizeof(F) == 4, std::uint32_t, std::uint64_t>;
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (F v : values) put_le<Bits>(os, std::bit_cast<Bits>(v));
  }
}

template <typename F>
std::vector<F> get_payload(std::istream& is, std::size_t count) {
  using Bits = std::conditional_t<sizeof(F) == 4, std::uint32_t, std::uint64_t>;
  std::vector<F> out(count);
  if constexpr (std::endian::native == std::endian::little) {
    if (!is.read(reinterpret_cast<char*>(out.data()),
                 static_cast<std::streamsize>(count * sizeof(F))))
      throw DataError("tensor payload truncated");
  } else {
    for (auto& v : out) v = std::bit_cast<F>(get_le<Bits>(is));
  }
  return out;
}

}  // namespace

void put_u8(std::ostream& os, std::uint8_t v) { os.put(static_cast<char>(v)); }
void put_u32(std::ostream& os, std::uint32_t v) { put_le(os, v); }
void put_u64(std::ostream& os, std::uint64_t v) { put_le(os, v); }
void put_f64(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint64_t>(v)); }

void put_string(std::ostream& os, std::string_view s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_magic(std::ostream& os, std::string_view magic) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

std::uint8_t get_u8(std::istream& is) { return get_le<std::uint8_t>(is); }
std::uint32_t get_u32(std::istream& is) { return get_le<std::uint32_t>(is); }
std::uint64_t get_u64(std::istream& is) { return get_le<std::uint64_t>(is); }
double get_f64(std::istream& is) { return std::bit_cast<double>(get_le<std::uint64_t>(is)); }

std::string get_string(std::istream& is) {
  const std::uint32_t len = get_u32(is);
  if (len > (1u << 24)) throw DataError("string length " + std::to_string(len) + " is implausible");
  std::string s(len, '\0');
  if (len > 0 && !is.read(s.data(), len)) throw DataError("string truncated");
  return s;
}

void expect_magic(std::istream& is, std::string_view magic) {
  std::string got(magic.size(), '\0');
  if (!is.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic)
    throw DataError("bad magic: expected \"" + std::string(magic) + "\"");
}

template <Real T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  put_magic(os, kTensorMagic);
  const Shape& s = t.shape();
  for (std::size_t d : {s.n, s.c, s.h, s.w}) put_u64(os, d);
  put_u8(os, static_cast<std::uint8_t>(dtype_of<T>()));
  put_payload<T>(os, t.data());
  if (!os) throw DataError("failed writing tensor record");
}

DType peek_tensor_dtype(std::istream& is) {
  const auto pos = is.tellg();
  expect_magic(is, kTensorMagic);
  for (int i = 0; i < 4; ++i) get_u64(is);
  const auto code = get_u8(is);
  is.seekg(pos);
  if (code > 1) throw DataError("unknown dtype code " + std::to_string(code));
  return static_cast<DType>(code);
}

template <Real T>
Tensor<T> read_tensor(std::istream& is) {
  expect_magic(is, kTensorMagic);
  Shape s;
  s.n = get_u64(is);
  s.c = get_u64(is);
  s.h = get_u64(is);
  s.w = get_u64(is);
  require_valid(s);
  if (s.numel() > (std::size_t{1} << 34)) throw DataError("tensor " + s.str() + " is implausibly large");
  const auto code = get_u8(is);
  if (code == static_cast<std::uint8_t>(DType::f32)) {
    auto v = get_payload<float>(is, s.numel());
    if constexpr (std::same_as<T, float>) return Tensor<T>(s, std::move(v));
    else return Tensor<T>(s, std::vector<T>(v.begin(), v.end()));
  }
  if (code == static_cast<std::uint8_t>(DType::f64)) {
    auto v = get_payload<double>(is, s.numel());
    if constexpr (std::same_as<T, double>) return Tensor<T>(s, std::move(v));
    else return Tensor<T>(s, std::vector<T>(v.begin(), v.end()));
  }
  throw DataError("unknown dtype code " + std::to_string(code));
}

template void write_tensor<float>(std::ostream&, const Tensor<float>&);
template void write_tensor<double>(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor<float>(std::istream&);
template Tensor<double> read_tensor<double>(std::istream&);

}  // namespace nowcast::io
