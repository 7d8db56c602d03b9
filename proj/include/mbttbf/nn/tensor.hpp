#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mbttbf/grid.hpp"

namespace mbttbf::nn {

// Vectorised kernels peel differently depending on buffer alignment, so every
// buffer they touch gets the same alignment to keep results reproducible.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

/// C x H x W, channel-major.
template <typename T>
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  Buffer<T> data;

  Tensor() = default;
  Tensor(int c, int h, int w, T fill = T{})
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }

  T& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  T at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

  T* channel(int c) { return data.data() + c * plane(); }
  const T* channel(int c) const { return data.data() + c * plane(); }

  bool same_shape(const Tensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  std::string shape_string() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  T sum() const {
    T s{};
    for (T v : data) s += v;
    return s;
  }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(static_cast<double>(v)); });
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(channels, height, width);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Image (H x W x 3 interleaved) to a 3-channel tensor, zero-padded at the
/// bottom/right so both sides are multiples of `multiple`.
template <typename T>
Tensor<T> image_to_tensor(const RgbImage& img, int multiple = 32) {
  const int h = (img.height + multiple - 1) / multiple * multiple;
  const int w = (img.width + multiple - 1) / multiple * multiple;
  Tensor<T> t(3, h, w);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) t.at(c, y, x) = static_cast<T>(img.at(y, x, c));
  return t;
}

}  // namespace mbttbf::nn
