#pragma once

#include <string>
#include <vector>

#include "mbttbf/density.hpp"
#include "mbttbf/nn/model.hpp"

namespace mbttbf::train {

struct LossConfig {
  double lambda_side = 1.0;  // weight of every side-output term
};

/// Ground truth for one image at full resolution: the complete map and its
/// four scale bands.
struct Supervision {
  density::DensityMap full;
  std::array<density::DensityMap, density::kNumBands> bands;
};

inline Supervision make_supervision(const density::AnnotationSet& annotations, const density::SigmaAssignment& sigmas) {
  Supervision s;
  s.full = density::render_density(annotations, sigmas, 1, true);
  auto part = density::partition_scale_bands(annotations, sigmas, 1, true);
  s.bands = std::move(part.band_maps);
  return s;
}

inline Supervision flip_horizontal(const Supervision& s) {
  Supervision out;
  out.full = density::flip_horizontal(s.full);
  for (int b = 0; b < density::kNumBands; ++b) out.bands[b] = density::flip_horizontal(s.bands[b]);
  return out;
}

/// Sum-pools `map` to `stride` and zero-pads it to height x width cells.
template <typename T>
nn::Tensor<T> target_tensor(const density::DensityMap& map, int stride, int height, int width) {
  const auto pooled = density::to_stride(map, stride);
  if (pooled.height() > height || pooled.width() > width)
    throw AlignmentError("target grid larger than prediction grid");
  nn::Tensor<T> t(1, height, width);
  for (int r = 0; r < pooled.height(); ++r)
    for (int c = 0; c < pooled.width(); ++c) t.at(0, r, c) = static_cast<T>(pooled.grid(r, c));
  return t;
}

inline density::DensityMap band_sum(const Supervision& s, nn::BandMask mask) {
  density::DensityMap out(s.full.height(), s.full.width(), s.full.stride);
  for (int b = 0; b < density::kNumBands; ++b) {
    if (!(mask & (1u << b))) continue;
    auto& dst = out.grid.raw();
    const auto& src = s.bands[b].grid.raw();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  return out;
}

/// Final-map mean squared error plus lambda_side times the mean squared
/// error of every side output against the summed bands it is tied to.
template <typename T>
nn::Var total_loss(nn::Tape<T>& tape, const nn::ForwardGraph& g, const Supervision& gt, const LossConfig& cfg,
                   bool use_scale_supervision) {
  const auto& pred = tape.value(g.prediction);
  nn::Var loss = tape.mse(g.prediction, target_tensor<T>(gt.full, tape.stride(g.prediction), pred.height, pred.width));
  if (!use_scale_supervision || cfg.lambda_side == 0.0) return loss;
  for (const auto& side : g.sides) {
    const auto& v = tape.value(side.map);
    nn::Var term = tape.mse(side.map, target_tensor<T>(band_sum(gt, side.bands), tape.stride(side.map), v.height, v.width));
    loss = tape.axpy(loss, term, static_cast<T>(cfg.lambda_side));
  }
  return loss;
}

}  // namespace mbttbf::train
