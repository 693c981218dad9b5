#include "lsk/tensor_io.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace lsk {

namespace {

constexpr std::array<unsigned char, 4> kMagic = {0x4C, 0x53, 0x4B, 0x54};  // "LSKT"
constexpr std::uint16_t kVersion = 1;
constexpr unsigned char kDtypeF64 = 1;
constexpr unsigned char kRank = 4;

void put_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(os, bits);
}

std::uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is) {
  const std::uint64_t bits = get_u64(is);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

}  // namespace

void write_lskt(std::ostream& os, const Tensor& t) {
  os.write(reinterpret_cast<const char*>(kMagic.data()), 4);
  put_u16(os, kVersion);
  os.put(static_cast<char>(kDtypeF64));
  os.put(static_cast<char>(kRank));
  put_u64(os, static_cast<std::uint64_t>(t.shape.n));
  put_u64(os, static_cast<std::uint64_t>(t.shape.c));
  put_u64(os, static_cast<std::uint64_t>(t.shape.h));
  put_u64(os, static_cast<std::uint64_t>(t.shape.w));
  for (double v : t.data) put_f64(os, v);
  if (!os) throw IoError("LSKT write failed");
}

Tensor read_lskt(std::istream& is) {
  std::array<unsigned char, 4> magic{};
  is.read(reinterpret_cast<char*>(magic.data()), 4);
  if (!is || magic != kMagic) throw IoError("LSKT: bad magic bytes");
  const std::uint16_t version = get_u16(is);
  if (version != kVersion)
    throw IoError("LSKT: unsupported version " + std::to_string(version));
  const int dtype = is.get();
  if (dtype != kDtypeF64) throw IoError("LSKT: unsupported dtype " + std::to_string(dtype));
  const int rank = is.get();
  if (rank != kRank) throw IoError("LSKT: unsupported rank " + std::to_string(rank));
  Shape s;
  s.n = static_cast<i64>(get_u64(is));
  s.c = static_cast<i64>(get_u64(is));
  s.h = static_cast<i64>(get_u64(is));
  s.w = static_cast<i64>(get_u64(is));
  if (!is) throw IoError("LSKT: truncated header");
  if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) throw IoError("LSKT: invalid dims " + s.str());
  Tensor t(s);
  for (double& v : t.data) v = get_f64(is);
  if (!is) throw IoError("LSKT: truncated payload, expected " + std::to_string(t.numel()) +
                         " values");
  return t;
}

void write_lskt_file(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  write_lskt(f, t);
}

Tensor read_lskt_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  return read_lskt(f);
}

}  // namespace lsk
