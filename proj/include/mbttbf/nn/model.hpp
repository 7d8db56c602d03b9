#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mbttbf/nn/parameters.hpp"
#include "mbttbf/nn/tape.hpp"
#include "mbttbf/nn/tensor.hpp"
#include "mbttbf/synthetic.hpp"

namespace mbttbf::nn {

enum class Backbone { vgg16_layout, tiny };

/// Fusion graph variants, one per panel of the fusion-topology comparison:
/// none (backbone only), flat add/concat of all taps, bottom-top only,
/// top-bottom only, single-level both ways, and the multi-level graph.
enum class Topology { NONE, FLAT_ADD, FLAT_CONCAT, BT, TB, BTTB, MBTTBF };

inline const char* to_string(Backbone b) { return b == Backbone::tiny ? "tiny" : "vgg16_layout"; }

inline Backbone backbone_from_string(const std::string& s) {
  if (s == "tiny") return Backbone::tiny;
  if (s == "vgg16_layout") return Backbone::vgg16_layout;
  throw ConfigError("unknown backbone '" + s + "'");
}

inline const char* to_string(Topology t) {
  switch (t) {
    case Topology::NONE: return "NONE";
    case Topology::FLAT_ADD: return "FLAT_ADD";
    case Topology::FLAT_CONCAT: return "FLAT_CONCAT";
    case Topology::BT: return "BT";
    case Topology::TB: return "TB";
    case Topology::BTTB: return "BTTB";
    case Topology::MBTTBF: return "MBTTBF";
  }
  return "?";
}

inline Topology topology_from_string(const std::string& s) {
  for (Topology t : {Topology::NONE, Topology::FLAT_ADD, Topology::FLAT_CONCAT, Topology::BT, Topology::TB,
                     Topology::BTTB, Topology::MBTTBF})
    if (s == to_string(t)) return t;
  throw ConfigError("unknown topology '" + s + "'");
}

struct NetworkConfig {
  Backbone backbone = Backbone::vgg16_layout;
  Topology topology = Topology::MBTTBF;
  int dr_channels = 32;
  bool use_scfb = true;
  bool use_scale_supervision = true;
  std::uint64_t rng_seed = 0;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

inline nlohmann::json to_json(const NetworkConfig& c) {
  return {{"backbone", to_string(c.backbone)},         {"topology", to_string(c.topology)},
          {"dr_channels", c.dr_channels},              {"use_scfb", c.use_scfb},
          {"use_scale_supervision", c.use_scale_supervision}, {"rng_seed", c.rng_seed}};
}

inline NetworkConfig network_config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {"backbone", "topology", "dr_channels", "use_scfb",
                                                 "use_scale_supervision", "rng_seed"};
  NetworkConfig c;
  for (const auto& [key, val] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown network key '" + key + "'");
  }
  try {
    if (j.contains("backbone")) c.backbone = backbone_from_string(j["backbone"].get<std::string>());
    if (j.contains("topology")) c.topology = topology_from_string(j["topology"].get<std::string>());
    if (j.contains("dr_channels")) c.dr_channels = j["dr_channels"].get<int>();
    if (j.contains("use_scfb")) c.use_scfb = j["use_scfb"].get<bool>();
    if (j.contains("use_scale_supervision")) c.use_scale_supervision = j["use_scale_supervision"].get<bool>();
    if (j.contains("rng_seed")) c.rng_seed = j["rng_seed"].get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("network config: ") + e.what());
  }
  if (c.dr_channels <= 0) throw ConfigError("dr_channels must be positive");
  return c;
}

/// Per-block channel widths of the backbone; taps come from blocks 3-5 plus
/// the pooled 1x1 "conv6" head.
struct BackboneLayout {
  std::vector<std::vector<int>> blocks;
  int conv6_channels;
};

inline BackboneLayout backbone_layout(Backbone b) {
  if (b == Backbone::vgg16_layout)
    return {{{64, 64}, {128, 128}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}}, 128};
  return {{{16, 16}, {32, 32}, {32, 32}, {64, 64}, {64, 64}}, 64};
}

inline constexpr std::array<int, 4> kTapStrides = {4, 8, 16, 32};
inline constexpr int kPredictionStride = 4;
inline constexpr int kAttentionHidden = 16;
// Init gains: rectified convs use 2 (He); SCFB residual convs start small so
// the cross-scale additions begin near identity; branch convs use 1 because
// the block sums its two branches.
inline constexpr double kResidualGain = 0.1;
inline constexpr double kBranchGain = 1.0;
inline constexpr double kDensityHeadGain = 1e-4;

/// Bit b set = scale band b (0 = smallest heads, supervising conv3).
using BandMask = unsigned;
inline constexpr BandMask band_bit(int conv_index) { return 1u << (conv_index - 3); }

struct SideOutput {
  std::string name;
  Var map;
  BandMask bands = 0;
};

struct ScfbVars {
  Var fused;
  Var hat_i, hat_j;    // inputs after the cross-scale residual additions
  Var side_i, side_j;  // invalid when the block is a plain concat fusion
};

/// Every named value of one forward pass, as handles into the tape.
struct ForwardGraph {
  std::array<Var, 4> raw_taps;
  std::array<Var, 4> taps;  // after dimensionality reduction
  std::map<std::string, Var> bt;
  std::map<std::string, Var> tb;
  std::map<std::string, ScfbVars> blocks;
  std::vector<Var> attention_inputs;  // already at the prediction stride
  Var attention;
  Var fused;
  Var prediction;
  std::vector<SideOutput> sides;
};

template <typename T>
struct FeatureGrid {
  Tensor<T> values;
  int stride = 1;
};

/// Materialised forward pass.
template <typename T>
struct FusionState {
  std::array<FeatureGrid<T>, 4> taps;
  std::map<std::string, FeatureGrid<T>> bt;
  std::map<std::string, FeatureGrid<T>> tb;
  std::optional<FeatureGrid<T>> attention;
  std::optional<FeatureGrid<T>> fused;
  FeatureGrid<T> prediction;
  std::vector<std::pair<std::string, FeatureGrid<T>>> sides;
};

template <typename T>
class Model {
 public:
  explicit Model(NetworkConfig cfg) : cfg_(cfg), rng_(cfg.rng_seed) {
    if (cfg_.dr_channels <= 0) throw ConfigError("dr_channels must be positive");
    // One dry run on the smallest admissible input creates every parameter
    // in graph order, so initialisation order is fixed by the graph itself.
    Tape<T> tape;
    building_ = true;
    forward(tape, Tensor<T>(3, 32, 32));
    building_ = false;
  }

  const NetworkConfig& config() const { return cfg_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }

  /// `image` must have sides divisible by 32 (see image_to_tensor).
  ForwardGraph forward(Tape<T>& tape, const Tensor<T>& image) {
    if (image.channels != 3 || image.height % 32 || image.width % 32 || image.height == 0 || image.width == 0)
      throw AlignmentError("network input must be 3 x H x W with H, W multiples of 32");
    ForwardGraph g;
    Var x = tape.input(image, 1);

    const auto layout = backbone_layout(cfg_.backbone);
    for (std::size_t b = 0; b < layout.blocks.size(); ++b) {
      if (b > 0) x = tape.maxpool2(x);
      for (std::size_t i = 0; i < layout.blocks[b].size(); ++i)
        x = tape.relu(conv(tape, x, "backbone.conv" + std::to_string(b + 1) + "_" + std::to_string(i + 1),
                           layout.blocks[b][i], 3));
      if (b >= 2) g.raw_taps[b - 2] = x;
    }
    x = tape.maxpool2(x);
    g.raw_taps[3] = tape.relu(conv(tape, x, "backbone.conv6", layout.conv6_channels, 1));

    if (cfg_.topology == Topology::NONE) {
      g.prediction = tape.relu(conv(tape, g.raw_taps[3], "predict", 1, 1));
      return g;
    }

    for (int i = 0; i < 4; ++i)
      g.taps[i] = tape.relu(conv(tape, g.raw_taps[i], "dr.conv" + std::to_string(i + 3), cfg_.dr_channels, 1));
    const auto& F = g.taps;
    auto to_pred = [&](Var v) { return tape.resample(v, kPredictionStride); };

    switch (cfg_.topology) {
      case Topology::FLAT_ADD: {
        Var acc = to_pred(F[0]);
        for (int i = 1; i < 4; ++i) acc = tape.add(acc, to_pred(F[i]));
        g.fused = acc;
        break;
      }
      case Topology::FLAT_CONCAT:
        g.fused = tape.concat({to_pred(F[0]), to_pred(F[1]), to_pred(F[2]), to_pred(F[3])});
        break;
      case Topology::BT:
        bottom_top(tape, g, false);
        g.fused = to_pred(g.bt.at("Fbt1_56"));
        break;
      case Topology::TB:
        top_bottom(tape, g, false);
        g.fused = g.tb.at("Ftb1_43");
        break;
      case Topology::BTTB:
        bottom_top(tape, g, false);
        top_bottom(tape, g, false);
        attention_fuse(tape, g, {to_pred(g.bt.at("Fbt1_56")), to_pred(g.tb.at("Ftb1_43"))});
        break;
      case Topology::MBTTBF:
        bottom_top(tape, g, true);
        top_bottom(tape, g, true);
        attention_fuse(tape, g,
                       {to_pred(g.bt.at("Fbt1_56")), to_pred(g.bt.at("Fbt2_456")), to_pred(g.tb.at("Ftb1_43")),
                        to_pred(g.tb.at("Ftb2_543"))});
        break;
      case Topology::NONE:
        break;
    }
    g.prediction = tape.relu(conv(tape, g.fused, "predict", 1, 1));
    return g;
  }

  FusionState<T> materialize(const Tape<T>& tape, const ForwardGraph& g) const {
    FusionState<T> s;
    auto grid = [&](Var v) { return FeatureGrid<T>{tape.value(v), tape.stride(v)}; };
    for (int i = 0; i < 4; ++i) s.taps[i] = grid(g.taps[i].valid() ? g.taps[i] : g.raw_taps[i]);
    for (const auto& [k, v] : g.bt) s.bt[k] = grid(v);
    for (const auto& [k, v] : g.tb) s.tb[k] = grid(v);
    if (g.attention.valid()) s.attention = grid(g.attention);
    if (g.fused.valid()) s.fused = grid(g.fused);
    s.prediction = grid(g.prediction);
    for (const auto& side : g.sides) s.sides.emplace_back(side.name, grid(side.map));
    return s;
  }

  FusionState<T> infer(const RgbImage& image) {
    Tape<T> tape;
    const auto g = forward(tape, image_to_tensor<T>(image));
    return materialize(tape, g);
  }

  /// Predicted count for an image: the sum of the density prediction.
  T predict_count(const RgbImage& image) {
    Tape<T> tape;
    const auto g = forward(tape, image_to_tensor<T>(image));
    return tape.value(g.prediction).sum();
  }

 private:
  Var conv(Tape<T>& tape, Var x, const std::string& name, int cout, int k, double gain = 2.0) {
    const int cin = tape.value(x).channels;
    const std::string wname = name + ".weight", bname = name + ".bias";
    if (!params_.contains(wname)) {
      if (!building_) throw ConfigError("parameter " + wname + " missing from model");
      auto& w = params_.add(wname, {cout, cin, k, k});
      params_.add(bname, {cout});
      // Single-channel rectified density heads start with small non-negative
      // weights over their non-negative inputs, so they begin alive and near
      // the scale of a density map.
      const bool density_head = cout == 1;
      const double std_dev = std::sqrt((density_head ? kDensityHeadGain : gain) / (cin * k * k));
      for (auto& v : w.value) {
        const double z = rng_.normal();
        v = static_cast<T>(std_dev * (density_head ? std::abs(z) : z));
      }
    }
    auto& w = params_.get(wname);
    if (w.shape[1] != cin || w.shape[0] != cout)
      throw AlignmentError(wname + ": stored shape does not match graph");
    return tape.conv2d(x, w, params_.get(bname));
  }

  /// Scale-complementary block over two adjacent-scale features. The
  /// non-target input is first resampled to the target's stride.
  ScfbVars scfb(Tape<T>& tape, const std::string& name, Var fi, Var fj, bool target_j) {
    const int target = tape.stride(target_j ? fj : fi);
    fi = tape.resample(fi, target);
    fj = tape.resample(fj, target);
    if (tape.stride(fi) != tape.stride(fj)) throw AlignmentError(name + ": stride mismatch after resampling");
    const int c = cfg_.dr_channels;
    ScfbVars out;
    Var ri = tape.relu(conv(tape, fi, name + ".c1_i", c, 3, kResidualGain));
    Var rj = tape.relu(conv(tape, fj, name + ".c1_j", c, 3, kResidualGain));
    out.hat_i = tape.add(fi, rj);
    out.hat_j = tape.add(fj, ri);
    Var gi = tape.relu(conv(tape, out.hat_i, name + ".c2_i", c, 3, kBranchGain));
    Var gj = tape.relu(conv(tape, out.hat_j, name + ".c2_j", c, 3, kBranchGain));
    out.side_i = tape.relu(conv(tape, gi, name + ".c3_i", 1, 1));
    out.side_j = tape.relu(conv(tape, gj, name + ".c3_j", 1, 1));
    out.fused = tape.add(gi, gj);
    return out;
  }

  /// Plain resample-concat-conv fusion used when SCFBs are switched off.
  ScfbVars concat_fuse(Tape<T>& tape, const std::string& name, Var fi, Var fj, bool target_j) {
    const int target = tape.stride(target_j ? fj : fi);
    fi = tape.resample(fi, target);
    fj = tape.resample(fj, target);
    ScfbVars out;
    out.hat_i = fi;
    out.hat_j = fj;
    out.fused = tape.relu(conv(tape, tape.concat({fi, fj}), name + ".fuse", cfg_.dr_channels, 3));
    return out;
  }

  Var fuse_pair(Tape<T>& tape, ForwardGraph& g, const std::string& name, Var fi, Var fj, bool target_j,
                BandMask bands_i, BandMask bands_j) {
    ScfbVars v = cfg_.use_scfb ? scfb(tape, name, fi, fj, target_j) : concat_fuse(tape, name, fi, fj, target_j);
    if (cfg_.use_scfb) {
      g.sides.push_back({name + ".side_i", v.side_i, bands_i});
      g.sides.push_back({name + ".side_j", v.side_j, bands_j});
    }
    g.blocks[name] = v;
    return v.fused;
  }

  void bottom_top(Tape<T>& tape, ForwardGraph& g, bool two_levels) {
    const auto& F = g.taps;
    // Information flows upwards: every block adopts its coarser input's stride.
    Var f34 = fuse_pair(tape, g, "bt1.scfb34", F[0], F[1], true, band_bit(3), band_bit(4));
    Var f45 = fuse_pair(tape, g, "bt1.scfb45", f34, F[2], true, band_bit(4), band_bit(5));
    Var f56 = fuse_pair(tape, g, "bt1.scfb56", f45, F[3], true, band_bit(5), band_bit(6));
    g.bt["Fbt1_34"] = f34;
    g.bt["Fbt1_45"] = f45;
    g.bt["Fbt1_56"] = f56;
    if (!two_levels) return;
    Var f345 = fuse_pair(tape, g, "bt2.scfb345", f34, f45, true, band_bit(3) | band_bit(4), band_bit(4) | band_bit(5));
    Var f456 = fuse_pair(tape, g, "bt2.scfb456", f345, f56, true, band_bit(3) | band_bit(4) | band_bit(5),
                         band_bit(5) | band_bit(6));
    g.bt["Fbt2_345"] = f345;
    g.bt["Fbt2_456"] = f456;
  }

  void top_bottom(Tape<T>& tape, ForwardGraph& g, bool two_levels) {
    const auto& F = g.taps;
    // Context flows downwards: every block adopts its finer input's stride.
    Var f65 = fuse_pair(tape, g, "tb1.scfb65", F[3], F[2], true, band_bit(6), band_bit(5));
    Var f54 = fuse_pair(tape, g, "tb1.scfb54", f65, F[1], true, band_bit(5), band_bit(4));
    Var f43 = fuse_pair(tape, g, "tb1.scfb43", f54, F[0], true, band_bit(4), band_bit(3));
    g.tb["Ftb1_65"] = f65;
    g.tb["Ftb1_54"] = f54;
    g.tb["Ftb1_43"] = f43;
    if (!two_levels) return;
    Var f654 = fuse_pair(tape, g, "tb2.scfb654", f65, f54, true, band_bit(6) | band_bit(5), band_bit(5) | band_bit(4));
    Var f543 = fuse_pair(tape, g, "tb2.scfb543", f654, f43, true, band_bit(6) | band_bit(5) | band_bit(4),
                         band_bit(4) | band_bit(3));
    g.tb["Ftb2_654"] = f654;
    g.tb["Ftb2_543"] = f543;
  }

  void attention_fuse(Tape<T>& tape, ForwardGraph& g, std::vector<Var> inputs) {
    const int k = static_cast<int>(inputs.size());
    Var h = tape.relu(conv(tape, tape.concat(inputs), "attention.conv1", kAttentionHidden, 3));
    g.attention = tape.sigmoid(conv(tape, h, "attention.conv2", k, 1, 1.0));
    g.attention_inputs = inputs;
    g.fused = tape.gated_sum(g.attention, inputs);
  }

  NetworkConfig cfg_;
  ParameterStore<T> params_;
  synth::Rng rng_;
  bool building_ = false;
};

}  // namespace mbttbf::nn
