#ifndef PVSE_BINARY_IO_HPP_
#define PVSE_BINARY_IO_HPP_

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "pvse/error.hpp"

namespace pvse::io {

// All on-disk integers and floats are little-endian regardless of host order.

inline void WriteMagic(std::ostream& out, std::string_view magic) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void WriteU32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(b.data(), 4);
}

inline void WriteF32(std::ostream& out, float f) { WriteU32(out, std::bit_cast<std::uint32_t>(f)); }

inline void ReadExact(std::istream& in, char* dst, std::size_t n, const std::string& path) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw IngestError(path, "truncated file");
}

inline void ExpectMagic(std::istream& in, std::string_view magic, const std::string& path) {
  std::string buf(magic.size(), '\0');
  in.read(buf.data(), static_cast<std::streamsize>(magic.size()));
  if (static_cast<std::size_t>(in.gcount()) != magic.size() || buf != magic)
    throw IngestError(path, "bad magic, expected " + std::string(magic));
}

inline std::uint32_t ReadU32(std::istream& in, const std::string& path) {
  std::array<unsigned char, 4> b{};
  ReadExact(in, reinterpret_cast<char*>(b.data()), 4, path);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline float ReadF32(std::istream& in, const std::string& path) {
  return std::bit_cast<float>(ReadU32(in, path));
}

inline void ExpectEof(std::istream& in, const std::string& path) {
  if (in.peek() != std::char_traits<char>::eof()) throw IngestError(path, "trailing bytes after payload");
}

inline std::ifstream OpenIn(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError(path, "cannot open file");
  return in;
}

inline std::ofstream OpenOut(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

}  // namespace pvse::io

#endif  // PVSE_BINARY_IO_HPP_
