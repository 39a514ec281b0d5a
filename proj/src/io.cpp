#include "lfp/io.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace lfp::io {

void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is, const char* what) {
  const auto n = read_pod<std::uint32_t>(is, what);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (is.gcount() != static_cast<std::streamsize>(n)) {
    throw std::runtime_error(std::string("unexpected end of file: needed ") +
                             std::to_string(n) + " bytes for " + what);
  }
  return s;
}

void write_bytes(std::ostream& os, const void* data, std::size_t n) {
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void read_bytes(std::istream& is, void* data, std::size_t n, const char* what) {
  is.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (is.gcount() != static_cast<std::streamsize>(n)) {
    throw std::runtime_error(std::string("unexpected end of file: needed ") +
                             std::to_string(n) + " bytes for " + what + ", got " +
                             std::to_string(is.gcount()));
  }
}

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t file_checksum(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for checksum");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::vector<char> buf(1 << 16);
  while (f) {
    f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h = fnv1a64(buf.data(), static_cast<std::size_t>(f.gcount()), h);
  }
  return h;
}

std::string checksum_hex(std::uint64_t checksum) {
  std::string s(16, '0');
  for (int i = 0; i < 16; ++i) {
    s[static_cast<std::size_t>(15 - i)] = "0123456789abcdef"[(checksum >> (i * 4)) & 0xf];
  }
  return s;
}

}  // namespace lfp::io
