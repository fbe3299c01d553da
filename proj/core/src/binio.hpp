#ifndef SEMFLOW_BINIO_HPP
#define SEMFLOW_BINIO_HPP

// Internal little-endian scalar I/O shared by the SFFL and SFNF formats.
// Byte order is packed explicitly so files are portable across hosts.

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "semflow/errors.hpp"

namespace semflow::binio {

inline void write_u32le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32le(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError(path + ": truncated header");
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32le(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32le(os, bits);
}

inline float read_f32le(std::istream& is, const std::string& path) {
  const std::uint32_t bits = read_u32le(is, path);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace semflow::binio

#endif  // SEMFLOW_BINIO_HPP
