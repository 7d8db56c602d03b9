#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <tuple>
#include <vector>

#include "mbttbf/density.hpp"
#include "mbttbf/grid.hpp"

namespace mbttbf::scale {

struct Seed {
  int row = 0;
  int col = 0;

  friend bool operator==(const Seed&, const Seed&) = default;
};

/// Rounded head locations. A seed that lands on an already-taken pixel moves
/// +1 px in x (wrapping to column 0 at the right border) until it is free.
inline std::vector<Seed> seed_pixels(const density::AnnotationSet& annotations) {
  const int h = annotations.height, w = annotations.width;
  if (h <= 0 || w <= 0) throw DomainError("annotation set has no image size");
  if (annotations.size() > static_cast<std::size_t>(h) * w)
    throw DomainError("more heads than pixels");
  Grid<char> taken(h, w, 0);
  std::vector<Seed> seeds;
  seeds.reserve(annotations.size());
  for (const auto& p : annotations.points) {
    int r = std::clamp(static_cast<int>(std::lround(p.y)), 0, h - 1);
    int c = std::clamp(static_cast<int>(std::lround(p.x)), 0, w - 1);
    while (taken(r, c)) {
      if (++c == w) {
        c = 0;
        r = (r + 1) % h;  // whole row taken: continue on the next one
      }
    }
    taken(r, c) = 1;
    seeds.push_back({r, c});
  }
  return seeds;
}

struct DistanceField {
  Grid<double> dist;
};

namespace detail {

// Exact 1-D squared distance transform (lower envelope of parabolas).
inline void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
                   std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  int k = 0;
  v[0] = 0;
  z[0] = -inf;
  z[1] = inf;
  for (int q = 1; q < n; ++q) {
    if (f[q] == inf) continue;
    if (f[v[k]] == inf) {
      v[k] = q;
      continue;
    }
    double s;
    while (true) {
      s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = f[v[k]] == inf ? inf : dq * dq + f[v[k]];
  }
}

}  // namespace detail

/// Squared Euclidean distance (integer-valued) to the nearest seed.
inline Grid<double> squared_distance_transform(int h, int w, const std::vector<Seed>& seeds) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  Grid<double> g(h, w, inf);
  for (const auto& s : seeds) g(s.row, s.col) = 0.0;
  const int n = std::max(h, w);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);
  for (int c = 0; c < w; ++c) {
    f.resize(h);
    d.resize(h);
    for (int r = 0; r < h; ++r) f[r] = g(r, c);
    detail::edt_1d(f, d, v, z);
    for (int r = 0; r < h; ++r) g(r, c) = d[r];
  }
  for (int r = 0; r < h; ++r) {
    f.resize(w);
    d.resize(w);
    for (int c = 0; c < w; ++c) f[c] = g(r, c);
    detail::edt_1d(f, d, v, z);
    for (int c = 0; c < w; ++c) g(r, c) = d[c];
  }
  return g;
}

inline DistanceField distance_transform(const density::AnnotationSet& annotations) {
  if (annotations.empty()) throw DomainError("distance transform needs at least one head");
  const auto seeds = seed_pixels(annotations);
  DistanceField out{squared_distance_transform(annotations.height, annotations.width, seeds)};
  // Squared distances are exact small integers, so the root is bit-reproducible.
  for (double& v : out.dist.raw()) v = std::sqrt(v);
  return out;
}

struct WatershedLabels {
  Grid<int> labels;  // head id per pixel
};

/// Seeded watershed on the head distance field. Each flooding front carries
/// its seed, and a pixel's priority is its exact distance to that seed, so a
/// pixel is claimed in increasing field order; ties resolve by
/// (distance, row, column, seed id).
inline WatershedLabels seeded_watershed(const DistanceField& field, const density::AnnotationSet& annotations) {
  const int h = field.dist.height(), w = field.dist.width();
  if (h != annotations.height || w != annotations.width)
    throw AlignmentError("distance field and annotations cover different grids");
  const auto seeds = seed_pixels(annotations);
  WatershedLabels out{Grid<int>(h, w, -1)};
  if (seeds.empty()) return out;

  using Entry = std::tuple<std::int64_t, int, int, int>;  // (d^2, row, col, seed)
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
  auto sq = [&](int r, int c, int s) {
    const std::int64_t dr = r - seeds[s].row, dc = c - seeds[s].col;
    return dr * dr + dc * dc;
  };
  for (int s = 0; s < static_cast<int>(seeds.size()); ++s) heap.emplace(0, seeds[s].row, seeds[s].col, s);

  // 8-connected fronts: with 4-connectivity a nearest-seed cell can be cut
  // off from its seed by a neighbouring cell's diagonal staircase.
  constexpr int dr[8] = {-1, -1, -1, 0, 0, 1, 1, 1};
  constexpr int dc[8] = {-1, 0, 1, -1, 1, -1, 0, 1};
  while (!heap.empty()) {
    const auto [d2, r, c, s] = heap.top();
    heap.pop();
    if (out.labels(r, c) >= 0) continue;
    out.labels(r, c) = s;
    for (int k = 0; k < 8; ++k) {
      const int qr = r + dr[k], qc = c + dc[k];
      if (out.labels.in_bounds(qr, qc) && out.labels(qr, qc) < 0) heap.emplace(sq(qr, qc, s), qr, qc, s);
    }
  }
  return out;
}

}  // namespace mbttbf::scale
