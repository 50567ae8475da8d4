#pragma once
// Dense row-major n-d tensor over a contiguous buffer. Deliberately minimal:
// all math lives in graph.hpp ops; this is storage + shape bookkeeping.
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace strata {

// Allocator whose resize() default-initializes (no zero fill for trivial T):
// op outputs that are fully overwritten skip one memset pass. Buffers are
// 64-byte aligned so SIMD kernels never alignment-peel at an address-dependent
// lane: every elementwise expression partitions lanes identically across runs,
// which keeps float outputs bit-stable regardless of heap layout.
template <typename T, typename A = std::allocator<T>>
struct uninit_alloc : public A {
  static constexpr std::size_t kAlign = 64;
  template <typename U>
  struct rebind {
    using other = uninit_alloc<U, typename std::allocator_traits<A>::template rebind_alloc<U>>;
  };
  using A::A;
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(kAlign)));
  }
  void deallocate(T* p, std::size_t n) noexcept {
    ::operator delete(p, n * sizeof(T), std::align_val_t(kAlign));
  }
  template <typename U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    std::allocator_traits<A>::construct(static_cast<A&>(*this), p, std::forward<Args>(args)...);
  }
};

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
  return r + "]";
}

[[noreturn]] inline void fail(const std::string& msg) { throw std::runtime_error(msg); }

#define STRATA_CHECK(cond, msg)                                          \
  do {                                                                   \
    if (!(cond)) ::strata::fail(std::string("check failed: ") + (msg)); \
  } while (0)

template <typename T>
struct Tensor {
  using Store = std::vector<T, uninit_alloc<T>>;
  Shape shape;
  Store data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(size_t(::strata::numel(shape)), T(0)) {}
  Tensor(Shape s, T fill) : shape(std::move(s)), data(size_t(::strata::numel(shape)), fill) {}
  Tensor(Shape s, std::initializer_list<T> d) : shape(std::move(s)), data(d) {
    STRATA_CHECK(int64_t(data.size()) == ::strata::numel(shape),
                 "tensor data/shape mismatch " + shape_str(shape));
  }
  Tensor(Shape s, const std::vector<T>& d) : shape(std::move(s)), data(d.begin(), d.end()) {
    STRATA_CHECK(int64_t(data.size()) == ::strata::numel(shape),
                 "tensor data/shape mismatch " + shape_str(shape));
  }

  // Uninitialized storage: caller promises to write every element.
  static Tensor uninit(Shape s) {
    Tensor t;
    t.shape = std::move(s);
    t.data.resize(size_t(::strata::numel(t.shape)));
    return t;
  }

  int64_t numel() const { return int64_t(data.size()); }
  bool empty() const { return data.empty(); }
  int rank() const { return int(shape.size()); }
  int64_t dim(int i) const { return shape[size_t(i < 0 ? i + rank() : i)]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  T& operator[](int64_t i) { return data[size_t(i)]; }
  const T& operator[](int64_t i) const { return data[size_t(i)]; }

  Shape strides() const {
    Shape st(shape.size());
    int64_t acc = 1;
    for (int i = rank() - 1; i >= 0; --i) { st[size_t(i)] = acc; acc *= shape[size_t(i)]; }
    return st;
  }

  // Multi-index access for tests / cold paths.
  T& at(std::initializer_list<int64_t> idx) {
    STRATA_CHECK(int(idx.size()) == rank(), "at(): rank mismatch");
    int64_t off = 0, acc = 1;
    auto st = strides();
    int i = 0;
    for (int64_t v : idx) off += v * st[size_t(i++)];
    (void)acc;
    return data[size_t(off)];
  }
  const T& at(std::initializer_list<int64_t> idx) const { return const_cast<Tensor*>(this)->at(idx); }

  Tensor reshaped(Shape s) const {
    STRATA_CHECK(::strata::numel(s) == numel(), "reshape numel mismatch " + shape_str(shape) + "->" + shape_str(s));
    Tensor r; r.shape = std::move(s); r.data = data; return r;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> r = Tensor<U>::uninit(shape);
    for (size_t i = 0; i < data.size(); ++i) r.data[i] = U(data[i]);
    return r;
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, T v) { return Tensor(std::move(s), v); }
  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }
};

// numel of a rank-0 tensor is 1 (scalar).
template <typename T>
inline T scalar_of(const Tensor<T>& t) {
  STRATA_CHECK(t.numel() == 1, "scalar_of: tensor has " + std::to_string(t.numel()) + " elements");
  return t.data[0];
}

}  // namespace strata
