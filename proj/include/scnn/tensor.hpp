#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <sstream>
#include <vector>

#include "scnn/common.hpp"

namespace scnn {

// Axis order for all image-like tensors: batch, channels, height, width.
struct Shape4 {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  bool operator==(const Shape4&) const = default;
};

// Dense N-dimensional array, row-major (last axis fastest). Immutable by
// convention once handed to a graph; parameter updates go through the
// training loop, which holds exclusive access.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(checked_size(shape_), T(0)) {}

  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_size(shape_) != data_.size())
      throw Error(ErrorCode::shape_mismatch,
                  "tensor: data length does not match shape product");
  }

  static Tensor zeros(std::vector<std::size_t> shape) {
    return Tensor(std::move(shape));
  }

  static Tensor constant(std::vector<std::size_t> shape, T value) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = value;
    return t;
  }

  // Reproducible fill: identical (lo, hi, seed, stream) always yields
  // identical bit patterns.
  static Tensor seeded_uniform(std::vector<std::size_t> shape, T lo, T hi,
                               std::uint64_t seed, std::uint64_t stream = 0) {
    Tensor t(std::move(shape));
    Prng rng(seed, stream);
    for (auto& v : t.data_) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Row-major linearization; the single source of truth for index order.
  std::size_t index(const std::vector<std::size_t>& coords) const {
    if (coords.size() != shape_.size())
      throw Error(ErrorCode::out_of_bounds, "tensor: coordinate rank mismatch");
    std::size_t idx = 0;
    for (std::size_t a = 0; a < coords.size(); ++a) {
      if (coords[a] >= shape_[a])
        throw Error(ErrorCode::out_of_bounds,
                    "tensor: coordinate outside extent on axis " +
                        std::to_string(a));
      idx = idx * shape_[a] + coords[a];
    }
    return idx;
  }

  T& at(std::initializer_list<std::size_t> coords) {
    return data_[index(std::vector<std::size_t>(coords))];
  }
  const T& at(std::initializer_list<std::size_t> coords) const {
    return data_[index(std::vector<std::size_t>(coords))];
  }

  Shape4 shape4() const {
    if (shape_.size() != 4)
      throw Error(ErrorCode::shape_mismatch, "tensor: expected rank 4");
    return Shape4{shape_[0], shape_[1], shape_[2], shape_[3]};
  }

  Tensor reshape(std::vector<std::size_t> new_shape) const {
    if (checked_size(new_shape) != data_.size())
      throw Error(ErrorCode::shape_mismatch,
                  "tensor: reshape element count mismatch");
    return Tensor(std::move(new_shape), data_);
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  Tensor& operator+=(const Tensor& b) {
    require_same_shape(b, "add");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += b.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& b) {
    require_same_shape(b, "sub");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= b.data_[i];
    return *this;
  }
  Tensor& operator*=(const Tensor& b) {
    require_same_shape(b, "mul");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] *= b.data_[i];
    return *this;
  }
  Tensor& scale(T c) {
    for (auto& v : data_) v *= c;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, const Tensor& b) { return a *= b; }
  friend Tensor operator*(Tensor a, T c) { return a.scale(c); }
  friend Tensor operator-(Tensor a) { return a.scale(T(-1)); }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i)
      out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i)
      os << (i ? "," : "") << shape_[i];
    os << "]";
    return os.str();
  }

 private:
  static std::size_t checked_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) {
      if (e != 0 && n > std::numeric_limits<std::size_t>::max() / e)
        throw Error(ErrorCode::extent_overflow,
                    "tensor: shape product overflows");
      n *= e;
    }
    return n;
  }

  void require_same_shape(const Tensor& b, const char* op) const {
    if (shape_ != b.shape_)
      throw Error(ErrorCode::shape_mismatch,
                  std::string("tensor: shape mismatch in ") + op + " " +
                      shape_str() + " vs " + b.shape_str());
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

struct CropWindow {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t h = 0;
  std::size_t w = 0;
};

// Crops an NCHW tensor to the given window, optionally mirroring columns.
// When hflip, output column c reads column (w-1-c) of the cropped window.
template <typename T>
Tensor<T> crop_flip(const Tensor<T>& a, const CropWindow& win, bool hflip) {
  Shape4 s = a.shape4();
  if (win.top + win.h > s.height || win.left + win.w > s.width)
    throw Error(ErrorCode::out_of_bounds, "crop_flip: window out of bounds");
  Tensor<T> out({s.batch, s.channels, win.h, win.w});
  const T* src = a.data();
  T* dst = out.data();
  for (std::size_t n = 0; n < s.batch; ++n)
    for (std::size_t c = 0; c < s.channels; ++c)
      for (std::size_t y = 0; y < win.h; ++y) {
        const T* row =
            src + ((n * s.channels + c) * s.height + win.top + y) * s.width +
            win.left;
        T* orow = dst + ((n * s.channels + c) * win.h + y) * win.w;
        if (hflip) {
          for (std::size_t x = 0; x < win.w; ++x) orow[x] = row[win.w - 1 - x];
        } else {
          for (std::size_t x = 0; x < win.w; ++x) orow[x] = row[x];
        }
      }
  return out;
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace scnn
