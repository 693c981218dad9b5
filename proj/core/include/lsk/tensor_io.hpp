#pragma once

#include <iosfwd>
#include <string>

#include "lsk/tensor.hpp"

namespace lsk {

// LSKT binary tensor format, all multi-byte fields little-endian:
//   magic   4 bytes  "LSKT" (4C 53 4B 54)
//   version u16      1
//   dtype   u8       1 (f64)
//   rank    u8       4
//   dims    4 x u64  (n, c, h, w)
//   payload n*c*h*w f64 values in row-major order
// Readers reject wrong magic/version/dtype/rank with an IoError.
void write_lskt(std::ostream& os, const Tensor& t);
Tensor read_lskt(std::istream& is);

void write_lskt_file(const std::string& path, const Tensor& t);
Tensor read_lskt_file(const std::string& path);

}  // namespace lsk
