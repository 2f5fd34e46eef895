#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "minopt/common.hpp"
#include "minopt/exec.hpp"

namespace minopt {

// In-memory image of a dense-array file: row-major, channel-interleaved
// (element 0 channel 0, element 0 channel 1, ...). Exactly one of the payload
// vectors is populated, by dtype, so single-precision files round-trip bit
// for bit instead of detouring through double.
struct DenseArray {
  int dtype = 1;  // 0 = IEEE binary32, 1 = binary64
  int channels = 1;
  std::vector<int64_t> extents;
  std::vector<float> f32;
  std::vector<double> f64;

  int64_t elem_count() const {
    int64_t n = 1;
    for (int64_t e : extents) n *= e;
    return n;
  }
  int64_t value_count() const { return elem_count() * channels; }

  template <class Real>
  std::vector<Real> values() const {
    std::vector<Real> out(static_cast<size_t>(value_count()));
    if (dtype == 0)
      for (size_t i = 0; i < out.size(); ++i) out[i] = Real(f32[i]);
    else
      for (size_t i = 0; i < out.size(); ++i) out[i] = Real(f64[i]);
    return out;
  }
};

template <class Real>
DenseArray make_array(std::vector<int64_t> extents, int channels,
                      const std::vector<Real>& values) {
  DenseArray a;
  a.dtype = std::is_same_v<Real, float> ? 0 : 1;
  a.channels = channels;
  a.extents = std::move(extents);
  check(int64_t(values.size()) == a.value_count(), Err::kShapeMismatch,
        "value count does not match extents and channels");
  if (a.dtype == 0)
    a.f32.assign(values.begin(), values.end());
  else
    a.f64.assign(values.begin(), values.end());
  return a;
}

namespace io_detail {

// All integers on disk are little-endian regardless of host byte order;
// floating-point payloads travel through their IEEE bit patterns.
inline void put_bytes(std::string& out, uint64_t v, int n) {
  for (int i = 0; i < n; ++i) out.push_back(char(uint8_t(v >> (8 * i))));
}

struct Cursor {
  const uint8_t* p = nullptr;
  size_t left = 0;
  uint64_t take(int n) {
    check(size_t(n) <= left, Err::kTruncatedFile, "file ends inside a header field");
    uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= uint64_t(p[size_t(i)]) << (8 * i);
    p += n;
    left -= size_t(n);
    return v;
  }
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(bool(in), Err::kFormatError, "cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

inline void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(bool(out), Err::kFormatError, "cannot write '" + path + "'");
  out.write(bytes.data(), std::streamsize(bytes.size()));
  check(bool(out), Err::kFormatError, "short write to '" + path + "'");
}

}  // namespace io_detail

inline void write_optd(const DenseArray& a, const std::string& path) {
  check(a.dtype == 0 || a.dtype == 1, Err::kFormatError, "unknown dtype");
  check(a.channels >= 1 && a.channels <= 0xffff, Err::kFormatError, "bad channel count");
  check(a.extents.size() <= 0xff, Err::kFormatError, "too many dimensions");
  const int64_t count = a.value_count();
  check(int64_t(a.dtype == 0 ? a.f32.size() : a.f64.size()) == count, Err::kShapeMismatch,
        "payload does not match extents and channels");
  std::string out;
  out += "OPTD";
  io_detail::put_bytes(out, 1, 4);  // version
  io_detail::put_bytes(out, uint64_t(a.dtype), 1);
  io_detail::put_bytes(out, a.extents.size(), 1);
  io_detail::put_bytes(out, uint64_t(a.channels), 2);
  for (int64_t e : a.extents) {
    check(e >= 0, Err::kFormatError, "negative extent");
    io_detail::put_bytes(out, uint64_t(e), 8);
  }
  if (a.dtype == 0)
    for (float v : a.f32) io_detail::put_bytes(out, std::bit_cast<uint32_t>(v), 4);
  else
    for (double v : a.f64) io_detail::put_bytes(out, std::bit_cast<uint64_t>(v), 8);
  io_detail::spit(path, out);
}

inline DenseArray read_optd(const std::string& path) {
  std::string bytes = io_detail::slurp(path);
  io_detail::Cursor c{reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size()};
  check(c.left >= 4 && std::memcmp(c.p, "OPTD", 4) == 0, Err::kFormatError,
        "'" + path + "' is not a dense-array file");
  c.take(4);
  check(c.take(4) == 1, Err::kFormatError, "unsupported dense-array version");
  DenseArray a;
  a.dtype = int(c.take(1));
  check(a.dtype == 0 || a.dtype == 1, Err::kFormatError, "unknown dtype code");
  int ndims = int(c.take(1));
  a.channels = int(c.take(2));
  check(a.channels >= 1, Err::kFormatError, "channel count must be positive");
  int64_t count = a.channels;
  for (int i = 0; i < ndims; ++i) {
    uint64_t e = c.take(8);
    check(e <= (uint64_t(1) << 40), Err::kFormatError, "implausible extent");
    a.extents.push_back(int64_t(e));
    check(count == 0 || a.extents.back() <= (int64_t(1) << 40) / std::max<int64_t>(count, 1),
          Err::kFormatError, "array too large");
    count *= a.extents.back();
  }
  const size_t vsize = a.dtype == 0 ? 4 : 8;
  check(c.left >= size_t(count) * vsize, Err::kTruncatedFile,
        "payload is shorter than the header promises");
  check(c.left == size_t(count) * vsize, Err::kFormatError,
        "payload is longer than the header promises");
  if (a.dtype == 0) {
    a.f32.resize(size_t(count));
    for (auto& v : a.f32) v = std::bit_cast<float>(uint32_t(c.take(4)));
  } else {
    a.f64.resize(size_t(count));
    for (auto& v : a.f64) v = std::bit_cast<double>(uint64_t(c.take(8)));
  }
  return a;
}

inline void write_optg(const EdgeTable& g, const std::string& path) {
  check(g.arity >= 1 && g.arity <= 0xffff, Err::kFormatError, "bad arity");
  check(g.verts.size() % size_t(g.arity) == 0, Err::kShapeMismatch,
        "vertex list is not a whole number of edges");
  std::string out;
  out += "OPTG";
  io_detail::put_bytes(out, 1, 4);  // version
  io_detail::put_bytes(out, uint64_t(g.arity), 2);
  io_detail::put_bytes(out, uint64_t(g.size()), 8);
  for (uint64_t v : g.verts) io_detail::put_bytes(out, v, 8);
  io_detail::spit(path, out);
}

inline EdgeTable read_optg(const std::string& path) {
  std::string bytes = io_detail::slurp(path);
  io_detail::Cursor c{reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size()};
  check(c.left >= 4 && std::memcmp(c.p, "OPTG", 4) == 0, Err::kFormatError,
        "'" + path + "' is not a graph file");
  c.take(4);
  check(c.take(4) == 1, Err::kFormatError, "unsupported graph version");
  EdgeTable g;
  g.arity = int(c.take(2));
  check(g.arity >= 1, Err::kFormatError, "arity must be positive");
  uint64_t edges = c.take(8);
  check(edges <= (uint64_t(1) << 40) / uint64_t(g.arity), Err::kFormatError,
        "implausible edge count");
  const uint64_t total = edges * uint64_t(g.arity);
  check(c.left >= size_t(total) * 8, Err::kTruncatedFile,
        "edge list is shorter than the header promises");
  check(c.left == size_t(total) * 8, Err::kFormatError,
        "edge list is longer than the header promises");
  g.verts.resize(size_t(total));
  for (auto& v : g.verts) v = c.take(8);
  return g;
}

}  // namespace minopt
