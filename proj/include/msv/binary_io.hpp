#pragma once

// Little-endian primitives shared by the model and embedding file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "msv/error.hpp"

namespace msv::io {

inline void WriteU32(std::ostream &os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char *>(b), 4);
}

inline void WriteF32(std::ostream &os, float f) { WriteU32(os, std::bit_cast<std::uint32_t>(f)); }

inline void WriteString(std::ostream &os, const std::string &s) {
  WriteU32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

/// Returns false on clean EOF before the first byte; throws on a truncated
/// value.
inline bool TryReadU32(std::istream &is, std::uint32_t &v) {
  unsigned char b[4];
  is.read(reinterpret_cast<char *>(b), 4);
  if (is.gcount() == 0) return false;
  if (is.gcount() != 4) Fail(ErrorKind::kMalformedInput, "truncated integer");
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

inline std::uint32_t ReadU32(std::istream &is) {
  std::uint32_t v = 0;
  if (!TryReadU32(is, v)) Fail(ErrorKind::kMalformedInput, "unexpected end of file");
  return v;
}

inline float ReadF32(std::istream &is) { return std::bit_cast<float>(ReadU32(is)); }

inline std::string ReadBytes(std::istream &is, std::size_t n, std::size_t limit = 1u << 26) {
  if (n > limit) Fail(ErrorKind::kMalformedInput, "length field too large");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) Fail(ErrorKind::kMalformedInput, "truncated field");
  return s;
}

inline std::string ReadString(std::istream &is) { return ReadBytes(is, ReadU32(is)); }

inline void ExpectMagic(std::istream &is, const std::string &magic) {
  if (ReadBytes(is, magic.size()) != magic) Fail(ErrorKind::kMalformedInput, "bad magic, expected " + magic);
}

}  // namespace msv::io
