#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "mbttbf/density.hpp"
#include "mbttbf/grid.hpp"
#include "mbttbf/scale/slic.hpp"
#include "mbttbf/scale/watershed.hpp"

namespace mbttbf::scale {

struct MrfConfig {
  double gamma = 1.0;        // Potts weight
  double color_tau = 0.1;    // colour bandwidth, RGB units in [0, 1]
  int max_sweeps = 20;
  // A superpixel joins head l only when overlap(l) * colour_similarity(l)
  // beats this; otherwise it is background.
  double background_threshold = 0.5;
};

/// Result of the superpixel/watershed fusion. Label `num_heads` is background.
struct HeadSegmentation {
  int num_heads = 0;
  Grid<int> node_of_pixel;          // superpixel node per pixel (after seed splitting)
  std::vector<int> node_labels;     // head id or num_heads (background) per node
  std::vector<long> areas;          // pixels per head
  std::vector<double> energy_trace; // energy after initialisation and after each sweep
  int sweeps = 0;
};

/// Node graph the ICM solver works on. Exposed so tests can recompute the
/// energy from its definition.
struct MrfProblem {
  int num_heads = 0;
  int num_nodes = 0;
  Grid<int> node_of_pixel;
  std::vector<int> node_size;
  std::vector<std::array<double, 3>> node_color;
  std::vector<std::vector<double>> unary;                   // [node][label], label num_heads = background
  std::vector<std::vector<std::pair<int, double>>> edges;   // [node] -> (neighbour, w_pq)
  std::vector<int> frozen;                                  // head id for seed nodes, -1 otherwise
};

namespace detail {

inline double color_dist2(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace detail

/// Builds the superpixel graph. A superpixel holding more than one seed is
/// split along watershed cells so every node anchors at most one head.
inline MrfProblem build_mrf_problem(const SuperpixelMap& sp, const WatershedLabels& ws, const RgbImage& image,
                                    const density::AnnotationSet& annotations, const MrfConfig& cfg) {
  const int h = sp.labels.height(), w = sp.labels.width();
  if (ws.labels.height() != h || ws.labels.width() != w || image.height != h || image.width != w ||
      annotations.height != h || annotations.width != w)
    throw AlignmentError("superpixels, watershed, image and annotations must share one grid");
  if (annotations.empty()) throw DomainError("MRF head segmentation needs at least one head");
  if (!(cfg.color_tau > 0.0) || cfg.gamma < 0.0 || cfg.max_sweeps <= 0)
    throw ConfigError("invalid MRF configuration");

  const auto seeds = seed_pixels(annotations);
  const int n = static_cast<int>(seeds.size());

  std::vector<int> seeds_in_sp(sp.num_segments, 0);
  for (const auto& s : seeds) ++seeds_in_sp[sp.labels(s.row, s.col)];

  MrfProblem pb;
  pb.num_heads = n;
  pb.node_of_pixel = Grid<int>(h, w, -1);
  std::map<std::pair<int, int>, int> split_ids;
  std::vector<int> plain_id(sp.num_segments, -1);
  int next = 0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const int s = sp.labels(r, c);
      int& id = seeds_in_sp[s] > 1 ? split_ids.try_emplace({s, ws.labels(r, c)}, -1).first->second : plain_id[s];
      if (id < 0) id = next++;
      pb.node_of_pixel(r, c) = id;
    }
  pb.num_nodes = next;

  // Node statistics and watershed overlap histogram.
  pb.node_size.assign(next, 0);
  pb.node_color.assign(next, {0.0, 0.0, 0.0});
  std::vector<std::map<int, int>> overlap(next);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const int p = pb.node_of_pixel(r, c);
      ++pb.node_size[p];
      for (int ch = 0; ch < 3; ++ch) pb.node_color[p][ch] += image.at(r, c, ch);
      ++overlap[p][ws.labels(r, c)];
    }
  for (int p = 0; p < next; ++p)
    for (int ch = 0; ch < 3; ++ch) pb.node_color[p][ch] /= pb.node_size[p];

  pb.frozen.assign(next, -1);
  std::vector<int> seed_node(n);
  for (int i = 0; i < n; ++i) {
    seed_node[i] = pb.node_of_pixel(seeds[i].row, seeds[i].col);
    pb.frozen[seed_node[i]] = i;
  }

  const double tau2 = cfg.color_tau * cfg.color_tau;
  pb.unary.assign(next, std::vector<double>(n + 1, 1.0));
  for (int p = 0; p < next; ++p) {
    for (const auto& [head, pixels] : overlap[p]) {
      if (head < 0) continue;
      const double frac = static_cast<double>(pixels) / pb.node_size[p];
      const double sim = std::exp(-detail::color_dist2(pb.node_color[p], pb.node_color[seed_node[head]]) / tau2);
      pb.unary[p][head] = 1.0 - frac * sim;
    }
    pb.unary[p][n] = 1.0 - cfg.background_threshold;
  }

  pb.edges.assign(next, {});
  std::vector<std::map<int, bool>> seen(next);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const int p = pb.node_of_pixel(r, c);
      for (const auto& [qr, qc] : {std::pair{r + 1, c}, std::pair{r, c + 1}}) {
        if (qr >= h || qc >= w) continue;
        const int q = pb.node_of_pixel(qr, qc);
        if (q == p || seen[p].count(q)) continue;
        seen[p][q] = seen[q][p] = true;
        const double wpq = std::exp(-detail::color_dist2(pb.node_color[p], pb.node_color[q]) / tau2);
        pb.edges[p].push_back({q, wpq});
        pb.edges[q].push_back({p, wpq});
      }
    }
  for (auto& e : pb.edges) std::sort(e.begin(), e.end());
  return pb;
}

/// E(L) = sum_p U_p(L_p) + gamma * sum_{p~q} w_pq [L_p != L_q]; each edge counted once.
inline double mrf_energy(const MrfProblem& pb, const std::vector<int>& labels, double gamma) {
  double e = 0.0;
  for (int p = 0; p < pb.num_nodes; ++p) {
    e += pb.unary[p][labels[p]];
    for (const auto& [q, wpq] : pb.edges[p])
      if (q > p && labels[p] != labels[q]) e += gamma * wpq;
  }
  return e;
}

inline int unary_argmax_label(const MrfProblem& pb, int p) {
  if (pb.frozen[p] >= 0) return pb.frozen[p];
  const auto& u = pb.unary[p];
  return static_cast<int>(std::min_element(u.begin(), u.end()) - u.begin());
}

/// Iterated conditional modes in fixed node order. Seed nodes stay on their
/// head; a node only moves on a strict energy decrease.
inline HeadSegmentation solve_mrf(const MrfProblem& pb, const MrfConfig& cfg) {
  HeadSegmentation seg;
  seg.num_heads = pb.num_heads;
  seg.node_of_pixel = pb.node_of_pixel;
  const int labels_count = pb.num_heads + 1;
  auto& L = seg.node_labels;
  L.resize(pb.num_nodes);
  for (int p = 0; p < pb.num_nodes; ++p) L[p] = unary_argmax_label(pb, p);
  seg.energy_trace.push_back(mrf_energy(pb, L, cfg.gamma));

  std::vector<double> cost(labels_count);
  for (int sweep = 0; sweep < cfg.max_sweeps && cfg.gamma > 0.0; ++sweep) {
    bool changed = false;
    for (int p = 0; p < pb.num_nodes; ++p) {
      if (pb.frozen[p] >= 0) continue;
      for (int l = 0; l < labels_count; ++l) cost[l] = pb.unary[p][l];
      for (const auto& [q, wpq] : pb.edges[p]) {
        cost[L[q]] -= cfg.gamma * wpq;  // agreeing with q saves its penalty
      }
      int best = L[p];
      for (int l = 0; l < labels_count; ++l)
        if (cost[l] < cost[best]) best = l;
      if (best != L[p]) {
        L[p] = best;
        changed = true;
      }
    }
    ++seg.sweeps;
    seg.energy_trace.push_back(mrf_energy(pb, L, cfg.gamma));
    if (!changed) break;
  }

  seg.areas.assign(pb.num_heads, 0);
  for (int p = 0; p < pb.num_nodes; ++p)
    if (L[p] < pb.num_heads) seg.areas[L[p]] += pb.node_size[p];
  return seg;
}

inline HeadSegmentation mrf_refine(const SuperpixelMap& sp, const WatershedLabels& ws, const RgbImage& image,
                                   const density::AnnotationSet& annotations, const MrfConfig& cfg = {}) {
  return solve_mrf(build_mrf_problem(sp, ws, image, annotations, cfg), cfg);
}

// ---------------------------------------------------------------- estimators

inline constexpr double kDefaultKappa = 0.3;

/// sigma_h = clip(kappa * sqrt(area_h)).
inline density::SigmaAssignment estimate_sigmas_mrf(const HeadSegmentation& seg, int height, int width,
                                                    double kappa = kDefaultKappa) {
  density::SigmaAssignment out{{}, density::SigmaMethod::mrf};
  out.sigmas.reserve(seg.areas.size());
  for (long a : seg.areas)
    out.sigmas.push_back(density::clip_sigma(kappa * std::sqrt(static_cast<double>(a)), height, width));
  return out;
}

inline density::SigmaAssignment estimate_sigmas_constant(const density::AnnotationSet& annotations, double sigma0) {
  if (!(sigma0 > 0.0)) throw DomainError("constant sigma must be positive");
  return {std::vector<double>(annotations.size(), sigma0), density::SigmaMethod::constant};
}

inline constexpr double kKnnFallbackSigma = 4.0;

/// sigma_i = clip(beta * mean distance to the k nearest other heads). k is
/// truncated to n - 1; with fewer than two heads the constant rule applies.
inline density::SigmaAssignment estimate_sigmas_knn(const density::AnnotationSet& annotations, int k = 3,
                                                    double beta = 0.3) {
  const std::size_t n = annotations.size();
  if (n < 2) {
    auto out = estimate_sigmas_constant(annotations, density::clip_sigma(kKnnFallbackSigma, annotations.height, annotations.width));
    out.method = density::SigmaMethod::knn;
    return out;
  }
  if (k < 1) throw DomainError("k must be positive");
  const std::size_t kk = std::min<std::size_t>(k, n - 1);
  density::SigmaAssignment out{std::vector<double>(n), density::SigmaMethod::knn};
  std::vector<double> d(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = annotations.points[i].x - annotations.points[j].x;
      const double dy = annotations.points[i].y - annotations.points[j].y;
      d[m++] = std::sqrt(dx * dx + dy * dy);
    }
    std::partial_sort(d.begin(), d.begin() + static_cast<long>(kk), d.end());
    double sum = 0.0;
    for (std::size_t t = 0; t < kk; ++t) sum += d[t];
    out.sigmas[i] = density::clip_sigma(beta * sum / static_cast<double>(kk), annotations.height, annotations.width);
  }
  return out;
}

struct ScaleEstimationConfig {
  int pixels_per_superpixel = 400;
  double compactness = 10.0;
  int slic_iters = 10;
  MrfConfig mrf;
  double kappa = kDefaultKappa;
};

/// Full pipeline: SLIC, distance transform, watershed, MRF fusion, sigma.
inline density::SigmaAssignment estimate_sigmas_from_image(const RgbImage& image,
                                                           const density::AnnotationSet& annotations,
                                                           const ScaleEstimationConfig& cfg = {},
                                                           HeadSegmentation* seg_out = nullptr) {
  if (annotations.empty()) return {{}, density::SigmaMethod::mrf};
  const long pixels = static_cast<long>(image.height) * image.width;
  const int k = static_cast<int>(std::clamp<long>(pixels / std::max(1, cfg.pixels_per_superpixel), 1, pixels));
  const auto sp = slic_segment(image, k, cfg.compactness, cfg.slic_iters);
  const auto field = distance_transform(annotations);
  const auto ws = seeded_watershed(field, annotations);
  auto seg = mrf_refine(sp, ws, image, annotations, cfg.mrf);
  auto sigmas = estimate_sigmas_mrf(seg, image.height, image.width, cfg.kappa);
  if (seg_out) *seg_out = std::move(seg);
  return sigmas;
}

}  // namespace mbttbf::scale
