#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mbttbf {

// Error taxonomy shared by every module. The CLI maps these onto exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : Error {
  using Error::Error;
};
struct AlignmentError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};

/// Dense row-major H x W grid.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, T fill = T{})
      : height_(height), width_(width),
        data_(static_cast<std::size_t>(checked(height) * checked(width)), fill) {}

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int r, int c) {
    assert(r >= 0 && r < height_ && c >= 0 && c < width_);
    return data_[static_cast<std::size_t>(r) * width_ + c];
  }
  const T& operator()(int r, int c) const {
    assert(r >= 0 && r < height_ && c >= 0 && c < width_);
    return data_[static_cast<std::size_t>(r) * width_ + c];
  }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& raw() { return data_; }
  const std::vector<T>& raw() const { return data_; }

  bool in_bounds(int r, int c) const { return r >= 0 && r < height_ && c >= 0 && c < width_; }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  static long checked(int n) {
    if (n < 0) throw DomainError("grid dimension must be non-negative");
    return n;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

/// H x W x 3 image, channel-interleaved, values in [0, 1].
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  RgbImage() = default;
  RgbImage(int h, int w, float fill = 0.0f)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, fill) {}

  float& at(int r, int c, int ch) { return data[(static_cast<std::size_t>(r) * width + c) * 3 + ch]; }
  float at(int r, int c, int ch) const {
    return data[(static_cast<std::size_t>(r) * width + c) * 3 + ch];
  }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

}  // namespace mbttbf
