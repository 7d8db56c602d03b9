#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <queue>
#include <vector>

#include "mbttbf/grid.hpp"

namespace mbttbf::scale {

struct SuperpixelMap {
  Grid<int> labels;
  int num_segments = 0;
  std::vector<std::array<double, 3>> mean_colors;  // RGB in [0, 1]
  std::vector<int> sizes;
};

namespace detail {

inline double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

inline std::array<double, 3> rgb_to_lab(double r, double g, double b) {
  r = srgb_to_linear(r);
  g = srgb_to_linear(g);
  b = srgb_to_linear(b);
  // D65 white point.
  const double x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
  const double y = (0.2126729 * r + 0.7151522 * g + 0.0721750 * b);
  const double z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
  auto f = [](double t) {
    constexpr double eps = 216.0 / 24389.0;
    constexpr double kappa = 24389.0 / 27.0;
    return t > eps ? std::cbrt(t) : (kappa * t + 16.0) / 116.0;
  };
  const double fx = f(x), fy = f(y), fz = f(z);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

/// Relabel so every label is one 4-connected region. For each label the
/// largest component keeps it; the other components are orphans and get
/// absorbed by their largest adjacent region. Output labels are consecutive
/// in raster order of first appearance.
inline int enforce_connectivity(Grid<int>& labels) {
  const int h = labels.height(), w = labels.width();
  Grid<int> comp(h, w, -1);
  std::vector<int> comp_label, comp_size;
  std::vector<std::pair<int, int>> stack;
  constexpr int dr[4] = {-1, 1, 0, 0};
  constexpr int dc[4] = {0, 0, -1, 1};
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (comp(r, c) >= 0) continue;
      const int id = static_cast<int>(comp_label.size());
      const int lab = labels(r, c);
      comp_label.push_back(lab);
      comp_size.push_back(0);
      stack.assign(1, {r, c});
      comp(r, c) = id;
      while (!stack.empty()) {
        auto [pr, pc] = stack.back();
        stack.pop_back();
        ++comp_size[id];
        for (int k = 0; k < 4; ++k) {
          const int qr = pr + dr[k], qc = pc + dc[k];
          if (labels.in_bounds(qr, qc) && comp(qr, qc) < 0 && labels(qr, qc) == lab) {
            comp(qr, qc) = id;
            stack.push_back({qr, qc});
          }
        }
      }
    }
  }
  const int ncomp = static_cast<int>(comp_label.size());
  // Keeper = largest component of each label (first in raster order on ties).
  std::vector<int> best_of_label;
  for (int i = 0; i < ncomp; ++i) {
    const int lab = comp_label[i];
    if (lab >= static_cast<int>(best_of_label.size())) best_of_label.resize(lab + 1, -1);
    if (best_of_label[lab] < 0 || comp_size[i] > comp_size[best_of_label[lab]]) best_of_label[lab] = i;
  }
  // Union-find over components; keepers are roots.
  std::vector<int> parent(ncomp);
  for (int i = 0; i < ncomp; ++i) parent[i] = i;
  auto find = [&](int i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  std::vector<int> merged_size = comp_size;
  std::vector<bool> settled(ncomp, false);
  for (int i = 0; i < ncomp; ++i) settled[i] = best_of_label[comp_label[i]] == i;

  // Adjacency between components.
  std::vector<std::vector<int>> adj(ncomp);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int k = 1; k < 4; k += 2) {
        const int qr = r + (k == 1 ? 1 : 0), qc = c + (k == 3 ? 1 : 0);
        if (!labels.in_bounds(qr, qc)) continue;
        const int a = comp(r, c), b = comp(qr, qc);
        if (a != b) {
          adj[a].push_back(b);
          adj[b].push_back(a);
        }
      }
  for (auto& v : adj) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }

  bool pending = true;
  while (pending) {
    pending = false;
    for (int i = 0; i < ncomp; ++i) {
      if (settled[i]) continue;
      int target = -1;
      for (int j : adj[i]) {
        if (!settled[j]) continue;
        const int root = find(j);
        if (target < 0 || merged_size[root] > merged_size[target]) target = root;
      }
      if (target < 0) {
        pending = true;
        continue;
      }
      parent[i] = target;
      merged_size[target] += comp_size[i];
      settled[i] = true;
    }
  }

  std::vector<int> new_id(ncomp, -1);
  int next = 0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const int root = find(comp(r, c));
      if (new_id[root] < 0) new_id[root] = next++;
      labels(r, c) = new_id[root];
    }
  return next;
}

inline void fill_segment_stats(SuperpixelMap& sp, const RgbImage& image) {
  sp.mean_colors.assign(sp.num_segments, {0.0, 0.0, 0.0});
  sp.sizes.assign(sp.num_segments, 0);
  for (int r = 0; r < image.height; ++r)
    for (int c = 0; c < image.width; ++c) {
      const int l = sp.labels(r, c);
      ++sp.sizes[l];
      for (int ch = 0; ch < 3; ++ch) sp.mean_colors[l][ch] += image.at(r, c, ch);
    }
  for (int l = 0; l < sp.num_segments; ++l)
    for (int ch = 0; ch < 3; ++ch) sp.mean_colors[l][ch] /= std::max(1, sp.sizes[l]);
}

}  // namespace detail

/// SLIC superpixels: grid-seeded k-means in CIELAB + position, distance
/// D^2 = d_lab^2 + (d_xy / S)^2 * compactness^2 over a 2S x 2S search window,
/// followed by connectivity enforcement.
inline SuperpixelMap slic_segment(const RgbImage& image, int k, double compactness = 10.0, int iters = 10) {
  const int h = image.height, w = image.width;
  if (k < 1 || static_cast<long>(k) > static_cast<long>(h) * w)
    throw DomainError("superpixel count must be in [1, H*W]");

  Grid<std::array<double, 3>> lab(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) lab(r, c) = detail::rgb_to_lab(image.at(r, c, 0), image.at(r, c, 1), image.at(r, c, 2));

  // Grid layout with rows * cols <= k, rows:cols following the image aspect.
  const int rows = std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(k) * h / w))));
  const int cols = std::max(1, std::min(w, k / rows));
  const int rows_used = std::min(rows, h);
  const double step = std::sqrt(static_cast<double>(h) * w / (rows_used * cols));

  struct Center {
    double l, a, b, y, x;
  };
  std::vector<Center> centers;
  auto grad_at = [&](int r, int c) {
    if (r <= 0 || c <= 0 || r >= h - 1 || c >= w - 1) return std::numeric_limits<double>::infinity();
    double g = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
      const double gx = lab(r, c + 1)[ch] - lab(r, c - 1)[ch];
      const double gy = lab(r + 1, c)[ch] - lab(r - 1, c)[ch];
      g += gx * gx + gy * gy;
    }
    return g;
  };
  for (int i = 0; i < rows_used; ++i) {
    for (int j = 0; j < cols; ++j) {
      // Cell centres in pixel-centre coordinates, so the layout is mirror
      // symmetric whenever the image is.
      double y = (i + 0.5) * h / rows_used - 0.5;
      double x = (j + 0.5) * w / cols - 0.5;
      const int r = std::clamp(static_cast<int>(std::lround(y)), 0, h - 1);
      const int c = std::clamp(static_cast<int>(std::lround(x)), 0, w - 1);
      // Nudge onto the lowest-gradient pixel of the 3x3 neighbourhood.
      int br = r, bc = c;
      double bg = grad_at(r, c);
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const double g = grad_at(r + dr, c + dc);
          if (g < bg) {
            bg = g;
            br = r + dr;
            bc = c + dc;
          }
        }
      if (br != r || bc != c) {
        y = br;
        x = bc;
      }
      const auto& px = lab(br, bc);
      centers.push_back({px[0], px[1], px[2], y, x});
    }
  }

  const int nc = static_cast<int>(centers.size());
  Grid<int> labels(h, w, 0);
  Grid<double> best(h, w);
  const double spatial_w = (compactness / step) * (compactness / step);
  const int win = static_cast<int>(std::ceil(std::max(static_cast<double>(h) / rows_used, static_cast<double>(w) / cols)));
  for (int it = 0; it < std::max(1, iters); ++it) {
    std::fill(best.raw().begin(), best.raw().end(), std::numeric_limits<double>::infinity());
    for (int ci = 0; ci < nc; ++ci) {
      const auto& ct = centers[ci];
      const int r0 = std::max(0, static_cast<int>(ct.y) - win), r1 = std::min(h - 1, static_cast<int>(ct.y) + win);
      const int c0 = std::max(0, static_cast<int>(ct.x) - win), c1 = std::min(w - 1, static_cast<int>(ct.x) + win);
      for (int r = r0; r <= r1; ++r)
        for (int c = c0; c <= c1; ++c) {
          const auto& px = lab(r, c);
          const double dl = px[0] - ct.l, da = px[1] - ct.a, db = px[2] - ct.b;
          const double dy = r - ct.y, dx = c - ct.x;
          const double d = dl * dl + da * da + db * db + spatial_w * (dx * dx + dy * dy);
          if (d < best(r, c)) {
            best(r, c) = d;
            labels(r, c) = ci;
          }
        }
    }
    // Pixels no window reached keep their previous label (label 0 on the first pass).
    std::vector<std::array<double, 5>> acc(nc, {0, 0, 0, 0, 0});
    std::vector<int> cnt(nc, 0);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const int l = labels(r, c);
        const auto& px = lab(r, c);
        acc[l][0] += px[0];
        acc[l][1] += px[1];
        acc[l][2] += px[2];
        acc[l][3] += r;
        acc[l][4] += c;
        ++cnt[l];
      }
    for (int ci = 0; ci < nc; ++ci) {
      if (cnt[ci] == 0) continue;
      const double n = cnt[ci];
      centers[ci] = {acc[ci][0] / n, acc[ci][1] / n, acc[ci][2] / n, acc[ci][3] / n, acc[ci][4] / n};
    }
  }

  SuperpixelMap sp;
  sp.labels = std::move(labels);
  sp.num_segments = detail::enforce_connectivity(sp.labels);
  detail::fill_segment_stats(sp, image);
  return sp;
}

}  // namespace mbttbf::scale
