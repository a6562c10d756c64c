#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace est {

// Error taxonomy. The CLI maps each kind onto an exit code.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct MissingGroundTruth : Error {
  using Error::Error;
};

/// Dense 4-D grid in (channel, depth, row, column) order.
template <typename T>
class Volume {
 public:
  Volume() = default;
  Volume(int channels, int depth, int height, int width, T fill = T{})
      : shape_{channels, depth, height, width},
        data_(static_cast<std::size_t>(channels) * depth * height * width, fill) {
    if (channels < 0 || depth < 0 || height < 0 || width < 0)
      throw std::invalid_argument("Volume: negative extent");
  }

  int channels() const { return shape_[0]; }
  int depth() const { return shape_[1]; }
  int height() const { return shape_[2]; }
  int width() const { return shape_[3]; }
  const std::array<int, 4>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(int c, int d, int y, int x) const {
    assert(c >= 0 && c < shape_[0] && d >= 0 && d < shape_[1]);
    assert(y >= 0 && y < shape_[2] && x >= 0 && x < shape_[3]);
    return ((static_cast<std::size_t>(c) * shape_[1] + d) * shape_[2] + y) * shape_[3] + x;
  }
  T& operator()(int c, int d, int y, int x) { return data_[index(c, d, y, x)]; }
  const T& operator()(int c, int d, int y, int x) const { return data_[index(c, d, y, x)]; }

  // Stride between consecutive channels for a fixed (d, y, x).
  std::size_t channel_stride() const {
    return static_cast<std::size_t>(shape_[1]) * shape_[2] * shape_[3];
  }
  std::size_t plane_size() const { return static_cast<std::size_t>(shape_[2]) * shape_[3]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  bool same_shape(const Volume<T>& o) const { return shape_ == o.shape_; }
  template <typename U>
  bool same_extent(const Volume<U>& o) const {
    return depth() == o.depth() && height() == o.height() && width() == o.width();
  }

  template <typename U>
  Volume<U> cast() const {
    Volume<U> out(shape_[0], shape_[1], shape_[2], shape_[3]);
    std::transform(data_.begin(), data_.end(), out.data().begin(),
                   [](const T& v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Volume& a, const Volume& b) = default;

 private:
  std::array<int, 4> shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

using Mask = Volume<std::uint8_t>;

/// Row-major single-channel 2-D raster.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int height, int width, T fill = T{})
      : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width, fill) {
    if (height < 0 || width < 0) throw std::invalid_argument("Image: negative extent");
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }

  T& operator()(int y, int x) {
    assert(y >= 0 && y < height_ && x >= 0 && x < width_);
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }
  const T& operator()(int y, int x) const {
    assert(y >= 0 && y < height_ && x >= 0 && x < width_);
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }
  // Clamp-to-edge access.
  const T& clamped(int y, int x) const {
    return (*this)(std::clamp(y, 0, height_ - 1), std::clamp(x, 0, width_ - 1));
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  friend bool operator==(const Image& a, const Image& b) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

// ---------------------------------------------------------------------------
// Deterministic randomness. Everything seeded in this library goes through
// splitmix64 so outputs are identical across standard libraries.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ (splitmix64(b) + 0x632BE59BD9B4E019ULL + (a << 6) + (a >> 2)));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix64(seed)) {}

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Box-Muller; one variate per call.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Threading. Work is split into contiguous static chunks and every output
// element is written by exactly one task, so results never depend on the
// thread count.

inline std::atomic<int>& thread_count_setting() {
  static std::atomic<int> n{1};
  return n;
}
inline void set_num_threads(int n) { thread_count_setting() = std::max(1, n); }
inline int num_threads() { return thread_count_setting().load(); }

template <typename Fn>
void parallel_for(int n, Fn&& fn) {
  const int workers = std::min(num_threads(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    const int begin = static_cast<int>(static_cast<long long>(n) * w / workers);
    const int end = static_cast<int>(static_cast<long long>(n) * (w + 1) / workers);
    pool.emplace_back([begin, end, &fn] {
      for (int i = begin; i < end; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace est
