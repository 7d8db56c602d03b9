#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <tuple>
#include <vector>

#include "mbttbf/density.hpp"
#include "mbttbf/grid.hpp"

namespace mbttbf::synth {

/// Portable generator: mt19937_64 is fully specified by the standard, and the
/// conversions below avoid the implementation-defined std distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int uniform_int(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(uniform() * (hi - lo + 1));
  }
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = mag * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return mag * std::cos(2.0 * std::numbers::pi * u2);
  }
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

struct SyntheticSceneSpec {
  int height = 64;
  int width = 64;
  int n_heads = 20;
  double r_min = 2.5;
  double r_max = 6.0;
  // Share of a head's radius decided by its row (1 = fully determined by
  // perspective, 0 = uniform random); radius grows towards the bottom.
  double perspective_gain = 0.8;
  double clutter_level = 0.3;
  std::uint64_t rng_seed = 0;
  int max_attempts_per_head = 2000;
};

struct SyntheticScene {
  RgbImage image;
  density::AnnotationSet annotations;
  std::vector<double> true_radii;
};

/// Dark soft-edged discs on a textured background. Heads never overlap and
/// their centres stay at least 2 px inside the border.
inline SyntheticScene generate_synthetic_scene(const SyntheticSceneSpec& spec) {
  if (spec.r_min < 2.0 || spec.r_max < spec.r_min) throw DomainError("need 2 <= r_min <= r_max");
  if (spec.n_heads < 0) throw DomainError("n_heads must be non-negative");
  if (spec.height < 5 || spec.width < 5) throw DomainError("scene must be at least 5x5");
  const int h = spec.height, w = spec.width;
  const double gain = std::clamp(spec.perspective_gain, 0.0, 1.0);
  const double clutter = std::clamp(spec.clutter_level, 0.0, 1.0);
  Rng rng(spec.rng_seed);

  SyntheticScene scene;
  scene.image = RgbImage(h, w);
  scene.annotations = {h, w, {}};

  // Background: warm base colour, a few low-frequency waves and pixel noise.
  const double base[3] = {0.72 + 0.1 * rng.uniform(), 0.66 + 0.1 * rng.uniform(), 0.55 + 0.1 * rng.uniform()};
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 4; ++i)
    waves.push_back({rng.uniform(0.02, 0.25), rng.uniform(0.02, 0.25), rng.uniform(0.0, 2.0 * std::numbers::pi),
                     rng.uniform(0.5, 1.0)});
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double wave = 0.0;
      for (const auto& wv : waves) wave += wv.amp * std::sin(wv.fx * c + wv.fy * r + wv.phase);
      wave /= static_cast<double>(waves.size());
      for (int ch = 0; ch < 3; ++ch) {
        const double v = base[ch] + clutter * (0.12 * wave + 0.04 * rng.normal());
        scene.image.at(r, c, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }

  struct Disc {
    double x, y, r;
  };
  std::vector<Disc> discs;
  for (int i = 0; i < spec.n_heads; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < spec.max_attempts_per_head && !placed; ++attempt) {
      const double y = rng.uniform(2.0, h - 3.0);
      const double x = rng.uniform(2.0, w - 3.0);
      const double t = (1.0 - gain) * rng.uniform() + gain * (y / (h - 1));
      const double r = spec.r_min + (spec.r_max - spec.r_min) * t;
      bool clear = true;
      for (const auto& d : discs) {
        const double dist = std::hypot(d.x - x, d.y - y);
        if (dist < d.r + r + 1.0) {
          clear = false;
          break;
        }
      }
      if (clear) {
        discs.push_back({x, y, r});
        placed = true;
      }
    }
    if (!placed)
      throw DomainError("cannot place head " + std::to_string(i) + " of " + std::to_string(spec.n_heads) +
                        " without overlap");
  }

  for (const auto& d : discs) {
    const double shade = 0.08 + 0.1 * rng.uniform();
    const double tint[3] = {shade + 0.03, shade + 0.01, shade};
    const int r0 = std::max(0, static_cast<int>(std::floor(d.y - d.r - 1))),
              r1 = std::min(h - 1, static_cast<int>(std::ceil(d.y + d.r + 1)));
    const int c0 = std::max(0, static_cast<int>(std::floor(d.x - d.r - 1))),
              c1 = std::min(w - 1, static_cast<int>(std::ceil(d.x + d.r + 1)));
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        const double alpha = std::clamp(d.r + 0.5 - std::hypot(c - d.x, r - d.y), 0.0, 1.0);
        if (alpha <= 0.0) continue;
        for (int ch = 0; ch < 3; ++ch) {
          float& px = scene.image.at(r, c, ch);
          px = static_cast<float>((1.0 - alpha) * px + alpha * tint[ch]);
        }
      }
    scene.annotations.points.push_back({d.x, d.y});
    scene.true_radii.push_back(d.r);
  }
  return scene;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = std::min(a.size(), b.size());
  if (n < 2) return 0.0;
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0 || sbb <= 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

/// Scale a head of true radius r "should" get under the area rule:
/// kappa * sqrt(pi r^2).
inline double reference_sigma(double radius, double kappa) { return kappa * std::sqrt(std::numbers::pi) * radius; }

}  // namespace mbttbf::synth
