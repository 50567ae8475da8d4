#pragma once
// Little-endian binary serialization primitives + FNV-1a hashing. All on-disk
// tensors are float32 regardless of the in-memory scalar, so checkpoints are
// byte-identical across float/double instantiations that hold the same values.
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace strata {

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  static const char* d = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) { s[size_t(i)] = d[v & 0xf]; v >>= 4; }
  return s;
}

struct ByteWriter {
  std::string buf;
  void raw(const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }
  void u8(uint8_t v) { raw(&v, 1); }
  void u32(uint32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void i64(int64_t v) { raw(&v, 8); }
  void f32(float v) { raw(&v, 4); }
  void f64(double v) { raw(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  template <typename T>
  void tensor(const Tensor<T>& t) {
    u32(uint32_t(t.rank()));
    for (auto d : t.shape) i64(d);
    for (int64_t k = 0; k < t.numel(); ++k) f32(float(t[k]));
  }
};

struct ByteReader {
  std::string own;  // owning the bytes keeps p/end valid for the reader's life
  const char* p;
  const char* end;
  explicit ByteReader(std::string s) : own(std::move(s)), p(own.data()), end(own.data() + own.size()) {}
  void raw(void* out, size_t n) {
    STRATA_CHECK(size_t(end - p) >= n, "byte reader underrun");
    std::memcpy(out, p, n);
    p += n;
  }
  uint8_t u8() { uint8_t v; raw(&v, 1); return v; }
  uint32_t u32() { uint32_t v; raw(&v, 4); return v; }
  uint64_t u64() { uint64_t v; raw(&v, 8); return v; }
  int64_t i64() { int64_t v; raw(&v, 8); return v; }
  float f32() { float v; raw(&v, 4); return v; }
  double f64() { double v; raw(&v, 8); return v; }
  std::string str() {
    uint64_t n = u64();
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  template <typename T>
  Tensor<T> tensor() {
    uint32_t r = u32();
    Shape s(r);
    for (uint32_t i = 0; i < r; ++i) s[i] = i64();
    Tensor<T> t(s);
    for (int64_t k = 0; k < t.numel(); ++k) t[k] = T(f32());
    return t;
  }
  bool done() const { return p == end; }
};

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  STRATA_CHECK(f.good(), "cannot open for write: " + path);
  f.write(bytes.data(), std::streamsize(bytes.size()));
  STRATA_CHECK(f.good(), "write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  STRATA_CHECK(f.good(), "cannot open for read: " + path);
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return s;
}

inline bool file_exists(const std::string& path) {
  std::ifstream f(path);
  return f.good();
}

}  // namespace strata
