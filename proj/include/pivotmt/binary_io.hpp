#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "pivotmt/error.hpp"

// Little-endian scalar IO for the binary artifact formats.
namespace pivotmt::binary {

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    U out{};
    auto* src = reinterpret_cast<const unsigned char*>(&v);
    auto* dst = reinterpret_cast<unsigned char*>(&out);
    for (std::size_t i = 0; i < sizeof(U); ++i) dst[i] = src[sizeof(U) - 1 - i];
    return out;
  } else {
    return v;
  }
}

template <typename T>
void write(std::ostream& out, T value) {
  using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
                               std::conditional_t<sizeof(T) == 2, std::uint16_t,
                                                  std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
  static_assert(sizeof(T) == sizeof(U));
  const U bits = to_little(std::bit_cast<U>(value));
  out.write(reinterpret_cast<const char*>(&bits), sizeof(U));
}

template <typename T>
T read(std::istream& in, const std::string& what) {
  using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
                               std::conditional_t<sizeof(T) == 2, std::uint16_t,
                                                  std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
  U bits{};
  in.read(reinterpret_cast<char*>(&bits), sizeof(U));
  if (!in) throw IoError(what + ": truncated file");
  return std::bit_cast<T>(to_little(bits));
}

inline void write_bytes(std::ostream& out, const std::string& s) { out.write(s.data(), static_cast<std::streamsize>(s.size())); }

inline std::string read_bytes(std::istream& in, std::size_t n, const std::string& what) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw IoError(what + ": truncated file");
  return s;
}

template <typename T, typename Alloc>
void write_array(std::ostream& out, const std::vector<T, Alloc>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(T)));
  } else {
    for (auto v : values) write(out, v);
  }
}

template <typename T, typename Alloc = std::allocator<T>>
std::vector<T, Alloc> read_array(std::istream& in, std::size_t n, const std::string& what) {
  std::vector<T, Alloc> values(n);
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(T)));
    if (!in) throw IoError(what + ": truncated file");
  } else {
    for (auto& v : values) v = read<T>(in, what);
  }
  return values;
}

}  // namespace pivotmt::binary
