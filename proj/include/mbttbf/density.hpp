#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "mbttbf/grid.hpp"

namespace mbttbf::density {

struct PointAnnotation {
  double x = 0.0;  // column, pixels
  double y = 0.0;  // row, pixels

  friend bool operator==(const PointAnnotation&, const PointAnnotation&) = default;
};

/// Head locations for one image. Indices are identities: sigma assignments and
/// scale bands refer to points by position, so order must never change.
struct AnnotationSet {
  int height = 0;
  int width = 0;
  std::vector<PointAnnotation> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  friend bool operator==(const AnnotationSet&, const AnnotationSet&) = default;
};

enum class SigmaMethod { constant, knn, mrf };

inline const char* to_string(SigmaMethod m) {
  switch (m) {
    case SigmaMethod::constant: return "constant";
    case SigmaMethod::knn: return "knn";
    case SigmaMethod::mrf: return "mrf";
  }
  return "?";
}

inline SigmaMethod sigma_method_from_string(const std::string& s) {
  if (s == "constant") return SigmaMethod::constant;
  if (s == "knn") return SigmaMethod::knn;
  if (s == "mrf") return SigmaMethod::mrf;
  throw ConfigError("unknown sigma method '" + s + "'");
}

struct SigmaAssignment {
  std::vector<double> sigmas;
  SigmaMethod method = SigmaMethod::constant;
};

inline constexpr double kSigmaMin = 1.0;

/// Upper clip for head scales: a quarter of the shorter image side.
inline double sigma_max(int height, int width) {
  return std::max(kSigmaMin, 0.25 * std::min(height, width));
}

inline double clip_sigma(double sigma, int height, int width) {
  return std::clamp(sigma, kSigmaMin, sigma_max(height, width));
}

/// Correctly rounded sum of a sequence of doubles (Shewchuk partials).
/// Makes count() independent of summation order.
template <typename Range>
double exact_sum(const Range& values) {
  std::vector<double> partials;
  for (double x : values) {
    std::size_t i = 0;
    for (double y : partials) {
      if (std::abs(x) < std::abs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials[i++] = lo;
      x = hi;
    }
    partials.resize(i);
    partials.push_back(x);
  }
  // Round the partials to a single double, mirroring Python's fsum tail handling.
  if (partials.empty()) return 0.0;
  std::size_t n = partials.size();
  double hi = partials[--n];
  double lo = 0.0;
  while (n > 0) {
    const double x = hi;
    const double y = partials[--n];
    hi = x + y;
    const double yr = hi - x;
    lo = y - yr;
    if (lo != 0.0) break;
  }
  if (n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0))) {
    const double y = lo * 2.0;
    const double x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

struct DensityMap {
  Grid<double> grid;
  int stride = 1;

  DensityMap() = default;
  DensityMap(int height, int width, int stride_) : grid(height, width, 0.0), stride(stride_) {}

  int height() const { return grid.height(); }
  int width() const { return grid.width(); }

  friend bool operator==(const DensityMap&, const DensityMap&) = default;
};

inline double count(const DensityMap& map) { return exact_sum(map.grid.values()); }

inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

/// Sum of isotropic Gaussians, one per head, sampled at cell centres of a grid
/// with the given stride. Kernels are truncated at four standard deviations;
/// with `renormalize` each head's in-bounds mass is rescaled to exactly one.
inline DensityMap render_density(const AnnotationSet& annotations, const SigmaAssignment& sigmas,
                                 int out_stride, bool renormalize = true) {
  if (sigmas.sigmas.size() != annotations.points.size())
    throw AlignmentError("sigma assignment has " + std::to_string(sigmas.sigmas.size()) +
                         " entries for " + std::to_string(annotations.points.size()) +
                         " annotations");
  if (out_stride <= 0) throw DomainError("stride must be positive");
  const int oh = ceil_div(annotations.height, out_stride);
  const int ow = ceil_div(annotations.width, out_stride);
  DensityMap map(oh, ow, out_stride);

  std::vector<double> patch;
  for (std::size_t i = 0; i < annotations.points.size(); ++i) {
    const double sigma_px = sigmas.sigmas[i];
    if (!(sigma_px > 0.0)) throw DomainError("sigma must be positive (head " + std::to_string(i) + ")");
    const auto& p = annotations.points[i];
    const double s = sigma_px / out_stride;
    const double cx = (p.x + 0.5) / out_stride - 0.5;
    const double cy = (p.y + 0.5) / out_stride - 0.5;
    const double radius = 4.0 * s;
    const int c0 = std::max(0, static_cast<int>(std::ceil(cx - radius)));
    const int c1 = std::min(ow - 1, static_cast<int>(std::floor(cx + radius)));
    const int r0 = std::max(0, static_cast<int>(std::ceil(cy - radius)));
    const int r1 = std::min(oh - 1, static_cast<int>(std::floor(cy + radius)));
    const double norm = 1.0 / (2.0 * std::numbers::pi * s * s);
    const double inv2s2 = 1.0 / (2.0 * s * s);

    patch.clear();
    double mass = 0.0;
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        const double d2 = (c - cx) * (c - cx) + (r - cy) * (r - cy);
        const double v = d2 <= radius * radius ? norm * std::exp(-d2 * inv2s2) : 0.0;
        patch.push_back(v);
        mass += v;
      }
    }
    if (renormalize) {
      if (mass > 0.0) {
        const double scale = 1.0 / mass;
        for (double& v : patch) v *= scale;
      } else {
        // Kernel narrower than a cell: all mass goes to the nearest cell.
        const int r = std::clamp(static_cast<int>(std::lround(cy)), 0, oh - 1);
        const int c = std::clamp(static_cast<int>(std::lround(cx)), 0, ow - 1);
        map.grid(r, c) += 1.0;
        continue;
      }
    }
    std::size_t k = 0;
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) map.grid(r, c) += patch[k++];
  }
  return map;
}

/// Non-overlapping factor x factor sum pooling. Grids whose sides are not
/// multiples of `factor` are zero-padded at the bottom/right first.
inline DensityMap downsample_preserving_count(const DensityMap& map, int factor) {
  if (factor <= 0) throw DomainError("downsample factor must be positive");
  if (factor == 1) return map;
  const int oh = ceil_div(map.height(), factor);
  const int ow = ceil_div(map.width(), factor);
  DensityMap out(oh, ow, map.stride * factor);
  for (int r = 0; r < map.height(); ++r)
    for (int c = 0; c < map.width(); ++c) out.grid(r / factor, c / factor) += map.grid(r, c);
  return out;
}

/// Bring a map to `target_stride`, which must be a multiple of its own stride.
inline DensityMap to_stride(const DensityMap& map, int target_stride) {
  if (target_stride % map.stride != 0)
    throw AlignmentError("stride " + std::to_string(target_stride) + " is not a multiple of " +
                         std::to_string(map.stride));
  return downsample_preserving_count(map, target_stride / map.stride);
}

inline AnnotationSet flip_horizontal(const AnnotationSet& annotations) {
  AnnotationSet out = annotations;
  for (auto& p : out.points) p.x = annotations.width - 1 - p.x;
  return out;
}

inline DensityMap flip_horizontal(const DensityMap& map) {
  DensityMap out = map;
  const int w = map.width();
  for (int r = 0; r < map.height(); ++r)
    for (int c = 0; c < w; ++c) out.grid(r, c) = map.grid(r, w - 1 - c);
  return out;
}

inline std::pair<AnnotationSet, DensityMap> flip_horizontal(const AnnotationSet& annotations,
                                                            const DensityMap& map) {
  return {flip_horizontal(annotations), flip_horizontal(map)};
}

inline constexpr int kNumBands = 4;

struct ScaleBandPartition {
  std::array<std::vector<std::size_t>, kNumBands> band_indices;
  std::array<DensityMap, kNumBands> band_maps;  // Y3..Y6, smallest heads first
  std::array<double, kNumBands - 1> thresholds{};
};

/// Linear-interpolation quantile of sorted data (the common "type 7" rule).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

/// Which quartile band a sigma falls into. Values equal to a threshold go to
/// the lower band.
inline int band_of(double sigma, const std::array<double, kNumBands - 1>& thresholds) {
  int band = 0;
  while (band < kNumBands - 1 && sigma > thresholds[band]) ++band;
  return band;
}

/// Split heads into four bands at the per-image quartiles of their sigmas and
/// render one map per band with the same kernels as the full map.
inline ScaleBandPartition partition_scale_bands(const AnnotationSet& annotations,
                                                const SigmaAssignment& sigmas, int out_stride = 1,
                                                bool renormalize = true) {
  if (sigmas.sigmas.size() != annotations.points.size())
    throw AlignmentError("sigma assignment not aligned with annotations");
  ScaleBandPartition part;
  std::vector<double> sorted = sigmas.sigmas;
  std::sort(sorted.begin(), sorted.end());
  for (int b = 0; b < kNumBands - 1; ++b)
    part.thresholds[b] = quantile_sorted(sorted, static_cast<double>(b + 1) / kNumBands);

  for (std::size_t i = 0; i < sigmas.sigmas.size(); ++i)
    part.band_indices[band_of(sigmas.sigmas[i], part.thresholds)].push_back(i);

  for (int b = 0; b < kNumBands; ++b) {
    AnnotationSet subset{annotations.height, annotations.width, {}};
    SigmaAssignment sub_sigmas{{}, sigmas.method};
    for (std::size_t i : part.band_indices[b]) {
      subset.points.push_back(annotations.points[i]);
      sub_sigmas.sigmas.push_back(sigmas.sigmas[i]);
    }
    part.band_maps[b] = render_density(subset, sub_sigmas, out_stride, renormalize);
  }
  return part;
}

}  // namespace mbttbf::density
