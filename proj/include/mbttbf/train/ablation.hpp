#pragma once

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "mbttbf/nn/model.hpp"
#include "mbttbf/scale/mrf.hpp"
#include "mbttbf/synthetic.hpp"
#include "mbttbf/train/trainer.hpp"

namespace mbttbf::train {

struct AblationEntry {
  std::string name;
  nn::NetworkConfig network;
};

/// The nine-rung fusion ladder, weakest first. `base` supplies backbone,
/// DR width and seed; topology and SCFB switches are overridden.
inline std::vector<AblationEntry> ablation_ladder(const nn::NetworkConfig& base) {
  auto make = [&](const std::string& name, nn::Topology t, bool scfb, bool scale_sup) {
    nn::NetworkConfig c = base;
    c.topology = t;
    c.use_scfb = scfb;
    c.use_scale_supervision = scale_sup;
    return AblationEntry{name, c};
  };
  using nn::Topology;
  return {make("baseline", Topology::NONE, false, false),
          make("fuse-a", Topology::FLAT_ADD, false, false),
          make("fuse-c", Topology::FLAT_CONCAT, false, false),
          make("BT+fuse-c", Topology::BT, false, false),
          make("TB+fuse-c", Topology::TB, false, false),
          make("BTTB+fuse-c", Topology::BTTB, false, false),
          make("MBTTB+fuse-c", Topology::MBTTBF, false, false),
          make("MBTTB+SCFB-NS", Topology::MBTTBF, true, false),
          make("MBTTB+SCFB", Topology::MBTTBF, true, true)};
}

/// Looks up a ladder rung by its name or by the topology that defines it
/// (NONE, FLAT_ADD, FLAT_CONCAT, BT, TB, BTTB, MBTTBF).
inline AblationEntry ablation_entry(const std::string& key, const nn::NetworkConfig& base) {
  const auto ladder = ablation_ladder(base);
  for (const auto& e : ladder)
    if (e.name == key) return e;
  static const std::vector<std::pair<std::string, std::string>> aliases = {
      {"NONE", "baseline"}, {"FLAT_ADD", "fuse-a"},      {"FLAT_CONCAT", "fuse-c"},    {"BT", "BT+fuse-c"},
      {"TB", "TB+fuse-c"},  {"BTTB", "BTTB+fuse-c"},     {"MBTTBF", "MBTTB+SCFB"}};
  for (const auto& [alias, name] : aliases)
    if (alias == key) return ablation_entry(name, base);
  throw ConfigError("unknown ablation configuration '" + key + "'");
}

struct AblationRow {
  std::string config;
  std::uint64_t seed = 0;
  double mae = 0.0;
  double mse = 0.0;
  std::string error;  // non-empty when training this row failed
};

struct AblationTable {
  std::vector<AblationRow> rows;

  std::vector<std::string> configs() const {
    std::vector<std::string> out;
    for (const auto& r : rows)
      if (std::find(out.begin(), out.end(), r.config) == out.end()) out.push_back(r.config);
    return out;
  }

  /// Median over the successful seeds of one configuration (NaN if none).
  std::pair<double, double> median(const std::string& config) const {
    std::vector<double> mae, mse;
    for (const auto& r : rows)
      if (r.config == config && r.error.empty()) {
        mae.push_back(r.mae);
        mse.push_back(r.mse);
      }
    auto med = [](std::vector<double> v) {
      if (v.empty()) return std::nan("");
      std::sort(v.begin(), v.end());
      const std::size_t n = v.size();
      return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    return {med(mae), med(mse)};
  }

  std::string csv() const {
    std::ostringstream out;
    out << "config,seed,mae,mse\n";
    out << std::setprecision(9);
    for (const auto& r : rows) {
      out << r.config << ',' << r.seed << ',';
      if (r.error.empty())
        out << r.mae << ',' << r.mse << '\n';
      else
        out << "nan,nan\n";
    }
    return out.str();
  }

  /// Median MAE / MSE per configuration as a fixed-width text table.
  std::string summary() const {
    std::ostringstream out;
    out << std::left << std::setw(18) << "Method" << std::right << std::setw(10) << "MAE" << std::setw(10) << "MSE"
        << '\n';
    out << std::string(38, '-') << '\n';
    out << std::fixed << std::setprecision(3);
    for (const auto& c : configs()) {
      const auto [mae, mse] = median(c);
      out << std::left << std::setw(18) << c << std::right << std::setw(10) << mae << std::setw(10) << mse << '\n';
    }
    return out.str();
  }
};

using RowCallback = std::function<void(const AblationRow&)>;

/// Trains every entry under every seed with identical data and budget and
/// evaluates on `test_set`. With a non-empty `val_set` the weights of the
/// epoch with the lowest validation MAE are the ones tested. A failing row is
/// recorded and the rest continue.
inline AblationTable run_ablation(const std::vector<AblationEntry>& entries, const std::vector<Sample>& train_set,
                                  const std::vector<Sample>& val_set, const std::vector<Sample>& test_set,
                                  const OptimConfig& optim, const LossConfig& loss,
                                  const std::vector<std::uint64_t>& seeds, const RowCallback& on_row = {}) {
  AblationTable table;
  for (const auto& entry : entries) {
    for (std::uint64_t seed : seeds) {
      AblationRow row{entry.name, seed, 0.0, 0.0, {}};
      try {
        nn::NetworkConfig net = entry.network;
        net.rng_seed = seed;
        OptimConfig opt = optim;
        opt.rng_seed = seed;
        nn::Model<float> model(net);
        auto& params = model.params();
        std::vector<nn::Buffer<float>> best;
        double best_mae = std::numeric_limits<double>::infinity();
        train(model, train_set, val_set, opt, loss, [&](const EpochRecord& r) {
          if (val_set.empty() || !(r.val_mae < best_mae)) return;
          best_mae = r.val_mae;
          best.resize(params.count());
          for (std::size_t i = 0; i < params.count(); ++i) best[i] = params[i].value;
        });
        for (std::size_t i = 0; i < best.size(); ++i) params[i].value = best[i];
        const auto report = evaluate(model, test_set);
        row.mae = report.mae;
        row.mse = report.mse;
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      table.rows.push_back(row);
      if (on_row) on_row(row);
    }
  }
  return table;
}

struct SyntheticDatasetSpec {
  int count = 200;
  int height = 64;
  int width = 64;
  int min_heads = 2;
  int max_heads = 25;
  double r_min = 2.0;
  double r_max = 4.5;
  double perspective_gain = 0.8;
  double clutter_level = 0.3;
  std::uint64_t seed = 0;
};

/// Per-scene generator specs of a synthetic dataset; head counts and scene
/// seeds are drawn from one stream seeded by `spec.seed`.
inline std::vector<synth::SyntheticSceneSpec> synthetic_scene_specs(const SyntheticDatasetSpec& spec) {
  if (spec.count < 0 || spec.min_heads < 0 || spec.max_heads < spec.min_heads)
    throw DomainError("invalid synthetic dataset spec");
  synth::Rng rng(spec.seed);
  std::vector<synth::SyntheticSceneSpec> out;
  out.reserve(spec.count);
  for (int i = 0; i < spec.count; ++i) {
    synth::SyntheticSceneSpec s;
    s.height = spec.height;
    s.width = spec.width;
    s.n_heads = rng.uniform_int(spec.min_heads, spec.max_heads);
    s.r_min = spec.r_min;
    s.r_max = spec.r_max;
    s.perspective_gain = spec.perspective_gain;
    s.clutter_level = spec.clutter_level;
    s.rng_seed = rng.next();
    out.push_back(s);
  }
  return out;
}

/// Synthetic scenes with MRF-estimated head scales, ready for training.
inline std::vector<Sample> make_synthetic_samples(const SyntheticDatasetSpec& spec,
                                                  const scale::ScaleEstimationConfig& scale_cfg) {
  std::vector<Sample> out;
  for (const auto& s : synthetic_scene_specs(spec)) {
    auto scene = synth::generate_synthetic_scene(s);
    auto sigmas = scale::estimate_sigmas_from_image(scene.image, scene.annotations, scale_cfg);
    out.push_back(make_sample(std::move(scene.image), std::move(scene.annotations), std::move(sigmas)));
  }
  return out;
}

}  // namespace mbttbf::train
