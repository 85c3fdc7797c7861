#pragma once

#include <algorithm>
#include <atomic>
#include <complex>
#include <cstddef>
#include <cstdlib>
#include <new>
#include <span>
#include <stdexcept>
#include <type_traits>
#include <vector>

namespace slfh {

/// Live and peak bytes of complex field buffers, process-wide.
class FieldMemory {
 public:
  static void add(std::size_t bytes) noexcept {
    const std::size_t now = current().fetch_add(bytes) + bytes;
    std::size_t prev = peak().load();
    while (prev < now && !peak().compare_exchange_weak(prev, now)) {
    }
  }
  static void remove(std::size_t bytes) noexcept { current().fetch_sub(bytes); }
  static std::size_t live() noexcept { return current().load(); }
  static std::size_t peak_bytes() noexcept { return peak().load(); }
  static void reset_peak() noexcept { peak().store(current().load()); }

 private:
  static std::atomic<std::size_t>& current() {
    static std::atomic<std::size_t> v{0};
    return v;
  }
  static std::atomic<std::size_t>& peak() {
    static std::atomic<std::size_t> v{0};
    return v;
  }
};

/// Allocator returning 64-byte aligned storage so every grid buffer has the
/// same SIMD alignment (FFTW plans are reused across buffers).
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t alignment = 64;
  static constexpr bool metered = std::is_same_v<T, std::complex<double>>;

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    if (n == 0) return nullptr;
    std::size_t bytes = (n * sizeof(T) + alignment - 1) / alignment * alignment;
    void* p = std::aligned_alloc(alignment, bytes);
    if (!p) throw std::bad_alloc();
    if constexpr (metered) FieldMemory::add(n * sizeof(T));
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t n) noexcept {
    if constexpr (metered) FieldMemory::remove(n * sizeof(T));
    std::free(p);
  }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

/// Dense row-major 2D array with value semantics.
template <class T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return values_[r * cols_ + c]; }
  T& operator[](std::size_t i) noexcept { return values_[i]; }
  const T& operator[](std::size_t i) const noexcept { return values_[i]; }

  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }
  std::span<T> values() noexcept { return {values_.data(), values_.size()}; }
  std::span<const T> values() const noexcept { return {values_.data(), values_.size()}; }

  auto begin() noexcept { return values_.begin(); }
  auto end() noexcept { return values_.end(); }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  void fill(const T& v) { std::fill(values_.begin(), values_.end(), v); }

  template <class U>
  bool same_shape(const Grid<U>& other) const noexcept {
    return rows_ == other.rows() && cols_ == other.cols();
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.values_ == b.values_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T, AlignedAllocator<T>> values_;
};

using Complex = std::complex<double>;
using RealGrid = Grid<double>;
using ComplexGrid = Grid<Complex>;

template <class T, class U>
void require_same_shape(const Grid<T>& a, const Grid<U>& b, const char* what) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": grid shape mismatch");
}

inline double sum(const RealGrid& g) {
  double s = 0.0;
  for (double v : g) s += v;
  return s;
}

inline double max_value(const RealGrid& g) {
  double m = g.empty() ? 0.0 : g[0];
  for (double v : g) m = std::max(m, v);
  return m;
}

inline double energy(const ComplexGrid& g) {
  double s = 0.0;
  for (const auto& v : g) s += std::norm(v);
  return s;
}

/// Sum of conj(a) * b over all samples.
inline Complex inner(const ComplexGrid& a, const ComplexGrid& b) {
  require_same_shape(a, b, "inner");
  Complex s{};
  for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
  return s;
}

inline RealGrid intensity(const ComplexGrid& v) {
  RealGrid out(v.rows(), v.cols());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::norm(v[i]);
  return out;
}

/// Move the zero-frequency sample between index 0 and the array center.
template <class T>
Grid<T> fftshift(const Grid<T>& g) {
  Grid<T> out(g.rows(), g.cols());
  const std::size_t hr = g.rows() / 2, hc = g.cols() / 2;
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < g.cols(); ++c)
      out((r + hr) % g.rows(), (c + hc) % g.cols()) = g(r, c);
  return out;
}

template <class T>
Grid<T> ifftshift(const Grid<T>& g) {
  Grid<T> out(g.rows(), g.cols());
  const std::size_t hr = (g.rows() + 1) / 2, hc = (g.cols() + 1) / 2;
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < g.cols(); ++c)
      out((r + hr) % g.rows(), (c + hc) % g.cols()) = g(r, c);
  return out;
}

}  // namespace slfh
