#pragma once

// Little-endian binary encoding shared by checkpoints and dataset files.
// Tensor: u64 rank, u64 dims[rank], f64 data[numel].

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "cts/error.hpp"
#include "cts/tensor.hpp"

namespace cts::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError("unexpected end of file");
  return v;
}

inline void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

inline void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, std::uint64_t limit = 1u << 24) {
  const std::uint64_t n = read_u64(is);
  if (n > limit) throw FormatError("string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw FormatError("unexpected end of file");
  return s;
}

inline void write_tensor(std::ostream& os, const Tensor& t) {
  write_u64(os, t.rank());
  for (std::size_t d : t.shape()) write_u64(os, d);
  os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

inline Tensor read_tensor(std::istream& is) {
  const std::uint64_t rank = read_u64(is);
  if (rank > 8) throw FormatError("tensor rank " + std::to_string(rank) + " is implausible");
  Shape shape;
  std::uint64_t numel = 1;
  for (std::uint64_t i = 0; i < rank; ++i) {
    shape.push_back(read_u64(is));
    numel *= shape.back();
    if (numel > (1ull << 32)) throw FormatError("tensor too large");
  }
  Tensor t(shape);
  if (numel && !is.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(numel * sizeof(double)))) {
    throw FormatError("unexpected end of file in tensor data");
  }
  return t;
}

inline void expect_magic(std::istream& is, const std::string& magic) {
  std::string got(magic.size(), '\0');
  if (!is.read(got.data(), static_cast<std::streamsize>(magic.size())) || got != magic) {
    throw FormatError("bad magic: expected " + magic);
  }
}

}  // namespace cts::io
