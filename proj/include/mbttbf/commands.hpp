#pragma once

// Command implementations behind the mbttbf executable. Each command takes
// resolved options, writes under its output root and returns a process exit
// code. Output layout (relative to --out-dir):
//
//   estimate-scales  <annotation>.sigmas.json next to each annotation file,
//                    estimate-scales.config.json
//   gen-gt           gt/<stem>.density (+ .json sidecar), with --bands also
//                    gt/<stem>.band{1..4}.density, gen-gt.config.json
//   train            checkpoint.mbttbf, history.jsonl, config.json
//   eval             metrics.json, eval.config.json
//   ablate           ablation.csv, ablation.txt, config.json
//   render           render/<stem>_pred-<p>_true-<t>.png, render.config.json
//   synth            images/scene_NNNN.png, annotations/scene_NNNN.json,
//                    radii/scene_NNNN.json, <split>.json, synth.config.json

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mbttbf/density.hpp"
#include "mbttbf/io.hpp"
#include "mbttbf/nn/checkpoint.hpp"
#include "mbttbf/run_config.hpp"
#include "mbttbf/synthetic.hpp"
#include "mbttbf/train/ablation.hpp"
#include "mbttbf/train/trainer.hpp"

namespace mbttbf::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

/// Maps a caught exception to the documented exit code.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kUsage;
  if (dynamic_cast<const NumericError*>(&e)) return kNumeric;
  return kData;
}

inline std::string format_count(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << v;
  return s.str();
}

inline json sigma_json(const SigmaConfig& sigma) {
  RunConfig c;
  c.sigma = sigma;
  return to_json(c)["sigma"];
}

// ------------------------------------------------------------------ datasets

/// Sigmas for an entry: the sigma file next to the annotations if present,
/// otherwise the configured estimator.
inline density::SigmaAssignment sigmas_for(const fs::path& annotation_path, const RgbImage& image,
                                           const density::AnnotationSet& annotations, const SigmaConfig& cfg) {
  const fs::path sp = io::sigma_path_for(annotation_path);
  if (fs::exists(sp)) {
    auto sa = io::load_sigmas(sp);
    if (sa.sigmas.size() != annotations.size())
      throw AlignmentError(sp.string() + ": sigma count does not match the annotation count");
    return sa;
  }
  return estimate_sigmas(cfg, &image, annotations);
}

inline std::vector<train::Sample> load_samples(const fs::path& manifest_path, const SigmaConfig& sigma_cfg,
                                               bool with_supervision, std::ostream& log) {
  const auto manifest = io::load_manifest(manifest_path);
  std::vector<train::Sample> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    RgbImage image = io::load_image(e.image);
    auto loaded = io::load_annotations(e.annotations);
    if (loaded.clamped > 0)
      log << "warning: " << e.annotations.string() << ": " << loaded.clamped << " point(s) clamped to the image\n";
    if (image.height != loaded.annotations.height || image.width != loaded.annotations.width)
      throw FormatError(e.image.string() + ": image size does not match its annotation file");
    if (with_supervision) {
      auto sigmas = sigmas_for(e.annotations, image, loaded.annotations, sigma_cfg);
      out.push_back(train::make_sample(std::move(image), std::move(loaded.annotations), std::move(sigmas)));
    } else {
      out.push_back(train::Sample{std::move(image), std::move(loaded.annotations), {}, {}});
    }
  }
  return out;
}

// ----------------------------------------------------------- estimate-scales

struct EstimateScalesOptions {
  std::string manifest;
  std::string out_dir;  // defaults to the manifest's directory
  SigmaConfig sigma;
};

inline int cmd_estimate_scales(const EstimateScalesOptions& opt, std::ostream& out, std::ostream& err) {
  const auto manifest = io::load_manifest(opt.manifest, false);
  std::vector<double> all;
  int failures = 0;
  for (const auto& e : manifest.entries) {
    try {
      auto loaded = io::load_annotations(e.annotations);
      if (loaded.clamped > 0) err << "warning: " << e.annotations.string() << ": " << loaded.clamped << " point(s) clamped\n";
      std::optional<RgbImage> image;
      if (opt.sigma.method == density::SigmaMethod::mrf) {
        if (!fs::exists(e.image)) throw FormatError("missing image " + e.image.string());
        image = io::load_image(e.image);
      }
      const auto sa = estimate_sigmas(opt.sigma, image ? &*image : nullptr, loaded.annotations);
      io::save_sigmas(io::sigma_path_for(e.annotations), sa);
      all.insert(all.end(), sa.sigmas.begin(), sa.sigmas.end());
    } catch (const std::exception& ex) {
      ++failures;
      err << "error: " << e.annotations.string() << ": " << ex.what() << '\n';
    }
  }
  std::sort(all.begin(), all.end());
  out << "entries " << manifest.entries.size() << ", heads " << all.size();
  if (!all.empty())
    out << ", sigma min " << all.front() << " median " << density::quantile_sorted(all, 0.5) << " max " << all.back();
  out << '\n';
  const fs::path root = opt.out_dir.empty() ? fs::path(opt.manifest).parent_path() : fs::path(opt.out_dir);
  json cfg = sigma_json(opt.sigma);
  io::write_text(root / "estimate-scales.config.json",
                 json{{"manifest", opt.manifest}, {"sigma", cfg}}.dump(2) + "\n");
  return failures ? kData : kOk;
}

// -------------------------------------------------------------------- gen-gt

struct GenGtOptions {
  std::string manifest;
  std::string sigmas_dir;  // empty: sigma files next to the annotations
  int stride = 1;
  bool bands = false;
  std::string out_dir = "out";
};

inline int cmd_gen_gt(const GenGtOptions& opt, std::ostream& out, std::ostream& err) {
  if (opt.stride < 1) throw ConfigError("--stride must be at least 1");
  const auto manifest = io::load_manifest(opt.manifest, false);
  const fs::path gt_dir = fs::path(opt.out_dir) / "gt";
  int failures = 0;
  for (const auto& e : manifest.entries) {
    try {
      const auto ann = io::load_annotations(e.annotations).annotations;
      fs::path sp = io::sigma_path_for(e.annotations);
      if (!opt.sigmas_dir.empty()) sp = fs::path(opt.sigmas_dir) / sp.filename();
      if (!fs::exists(sp)) throw FormatError("missing sigma file " + sp.string());
      const auto sa = io::load_sigmas(sp);
      const std::string stem = e.annotations.stem().string();
      const auto full = density::render_density(ann, sa, opt.stride);
      io::save_density(gt_dir / (stem + ".density"), full);
      if (opt.bands) {
        const auto part = density::partition_scale_bands(ann, sa, opt.stride);
        for (int b = 0; b < density::kNumBands; ++b)
          io::save_density(gt_dir / (stem + ".band" + std::to_string(b + 1) + ".density"), part.band_maps[b]);
      }
      out << stem << " count " << ann.size() << " residual " << std::abs(density::count(full) - double(ann.size()))
          << '\n';
    } catch (const std::exception& ex) {
      ++failures;
      err << "error: " << e.annotations.string() << ": " << ex.what() << '\n';
    }
  }
  io::write_text(fs::path(opt.out_dir) / "gen-gt.config.json",
                 json{{"manifest", opt.manifest},
                      {"sigmas_dir", opt.sigmas_dir},
                      {"stride", opt.stride},
                      {"bands", opt.bands},
                      {"out_dir", opt.out_dir}}
                         .dump(2) + "\n");
  return failures ? kData : kOk;
}

// --------------------------------------------------------------------- train

inline fs::path checkpoint_path(const fs::path& out_dir) { return out_dir / "checkpoint.mbttbf"; }

inline int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  if (cfg.paths.train_manifest.empty()) throw ConfigError("paths.train_manifest is required");
  const fs::path root = cfg.paths.out_dir;
  fs::create_directories(root);
  io::write_text(root / "config.json", to_json(cfg).dump(2) + "\n");

  const auto train_set = load_samples(cfg.paths.train_manifest, cfg.sigma, true, err);
  std::vector<train::Sample> val_set;
  if (!cfg.paths.val_manifest.empty()) val_set = load_samples(cfg.paths.val_manifest, cfg.sigma, false, err);

  nn::Model<float> model(cfg.network);
  std::ofstream history(root / "history.jsonl", std::ios::binary);
  if (!history) throw FormatError("cannot write " + (root / "history.jsonl").string());
  train::train(model, train_set, val_set, cfg.optim, cfg.loss, [&](const train::EpochRecord& r) {
    history << train::to_json(r).dump() << '\n';
    history.flush();
    out << "epoch " << r.epoch << " loss " << r.train_loss;
    if (!val_set.empty()) out << " val_mae " << r.val_mae << " val_mse " << r.val_mse;
    out << '\n';
  });
  nn::save_checkpoint(checkpoint_path(root), model);
  out << "wrote " << checkpoint_path(root).string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------- eval

struct EvalOptions {
  std::string checkpoint;
  std::string manifest;
  std::string out_dir = "out";
};

inline json to_json(const train::MetricsReport& r, const io::DatasetManifest* manifest = nullptr) {
  json per = json::array();
  for (std::size_t i = 0; i < r.per_image.size(); ++i) {
    json e{{"true", r.per_image[i].first}, {"predicted", r.per_image[i].second}};
    if (manifest && i < manifest->entries.size()) e["image"] = manifest->entries[i].image.generic_string();
    per.push_back(e);
  }
  return {{"mae", r.mae}, {"mse", r.mse}, {"n_images", r.n_images}, {"per_image", per}};
}

inline int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err) {
  auto model = nn::load_checkpoint<float>(opt.checkpoint);
  const auto manifest = io::load_manifest(opt.manifest);
  const auto samples = load_samples(opt.manifest, {}, false, err);
  const auto report = train::evaluate(model, samples);
  out << "MAE " << report.mae << " MSE " << report.mse << " over " << report.n_images << " image(s)\n";
  const fs::path root = opt.out_dir;
  io::write_text(root / "metrics.json", to_json(report, &manifest).dump(2) + "\n");
  io::write_text(root / "eval.config.json",
                 json{{"checkpoint", opt.checkpoint},
                      {"manifest", opt.manifest},
                      {"out_dir", opt.out_dir},
                      {"network", nn::to_json(model.config())}}
                         .dump(2) + "\n");
  return kOk;
}

// -------------------------------------------------------------------- ablate

struct AblateOptions {
  std::vector<std::string> topologies;  // empty: the full ladder
  std::vector<std::uint64_t> seeds = {0};
};

inline int cmd_ablate(const RunConfig& cfg, const AblateOptions& opt, std::ostream& out, std::ostream& err) {
  if (cfg.paths.train_manifest.empty() || cfg.paths.test_manifest.empty())
    throw ConfigError("paths.train_manifest and paths.test_manifest are required");
  if (opt.seeds.empty()) throw ConfigError("at least one seed is required");
  std::vector<train::AblationEntry> entries;
  if (opt.topologies.empty())
    entries = train::ablation_ladder(cfg.network);
  else
    for (const auto& t : opt.topologies) entries.push_back(train::ablation_entry(t, cfg.network));

  const fs::path root = cfg.paths.out_dir;
  fs::create_directories(root);
  json effective = to_json(cfg);
  json names = json::array();
  for (const auto& e : entries) names.push_back(e.name);
  effective["ablation"] = {{"configs", names}, {"seeds", opt.seeds}};
  io::write_text(root / "config.json", effective.dump(2) + "\n");

  const auto train_set = load_samples(cfg.paths.train_manifest, cfg.sigma, true, err);
  const auto test_set = load_samples(cfg.paths.test_manifest, cfg.sigma, false, err);
  std::vector<train::Sample> val_set;
  if (!cfg.paths.val_manifest.empty()) val_set = load_samples(cfg.paths.val_manifest, cfg.sigma, false, err);
  const auto table = train::run_ablation(entries, train_set, val_set, test_set, cfg.optim, cfg.loss, opt.seeds,
                                         [&](const train::AblationRow& r) {
                                           out << r.config << " seed " << r.seed;
                                           if (r.error.empty())
                                             out << " mae " << r.mae << " mse " << r.mse << '\n';
                                           else
                                             out << " failed: " << r.error << '\n';
                                         });
  io::write_text(root / "ablation.csv", table.csv());
  io::write_text(root / "ablation.txt", table.summary());
  out << table.summary();
  bool numeric = false, failed = false;
  for (const auto& r : table.rows)
    if (!r.error.empty()) {
      failed = true;
      numeric = numeric || r.error.find("non-finite") != std::string::npos;
    }
  return failed ? (numeric ? kNumeric : kData) : kOk;
}

// -------------------------------------------------------------------- render

struct RenderOptions {
  std::string checkpoint;
  std::string image;
  std::string annotations;  // optional; enables the ground-truth panel
  std::string out_dir = "out";
  SigmaConfig sigma;
};

inline std::array<float, 3> heat_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return {static_cast<float>(std::clamp(3.0 * v, 0.0, 1.0)), static_cast<float>(std::clamp(3.0 * v - 1.0, 0.0, 1.0)),
          static_cast<float>(std::clamp(3.0 * v - 2.0, 0.0, 1.0))};
}

/// Per-pixel density of a map at `stride`, cropped to h x w.
inline Grid<double> per_pixel_density(const Grid<double>& map, int stride, int h, int w) {
  Grid<double> out(h, w);
  const double area = double(stride) * stride;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const int rr = r / stride, cc = c / stride;
      out(r, c) = map.in_bounds(rr, cc) ? map(rr, cc) / area : 0.0;
    }
  return out;
}

/// Side-by-side panels: the input, then each density on a shared colour
/// scale. An all-zero density renders black.
inline RgbImage compose_panels(const RgbImage& image, const std::vector<Grid<double>>& densities) {
  double vmax = 0.0;
  for (const auto& d : densities)
    for (double v : d.values()) vmax = std::max(vmax, v);
  const int h = image.height, w = image.width;
  const int gap = 2;
  const int n = 1 + static_cast<int>(densities.size());
  RgbImage out{h, n * w + (n - 1) * gap, {}};
  out.data.assign(static_cast<std::size_t>(out.height) * out.width * 3, 1.0f);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = std::clamp(image.at(r, c, ch), 0.0f, 1.0f);
  for (std::size_t k = 0; k < densities.size(); ++k) {
    const int x0 = static_cast<int>(k + 1) * (w + gap);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const auto col = heat_color(vmax > 0.0 ? densities[k](r, c) / vmax : 0.0);
        for (int ch = 0; ch < 3; ++ch) out.at(r, x0 + c, ch) = col[ch];
      }
  }
  return out;
}

inline int cmd_render(const RenderOptions& opt, std::ostream& out, std::ostream& err) {
  auto model = nn::load_checkpoint<float>(opt.checkpoint);
  const RgbImage image = io::load_image(opt.image);
  const auto state = model.infer(image);
  const auto& pred = state.prediction;
  Grid<double> pred_grid(pred.values.height, pred.values.width);
  for (int r = 0; r < pred.values.height; ++r)
    for (int c = 0; c < pred.values.width; ++c) pred_grid(r, c) = pred.values.at(0, r, c);
  const double pred_count = density::exact_sum(pred_grid.values());

  std::vector<Grid<double>> panels;
  std::string true_tag = "na";
  json counts{{"predicted", pred_count}};
  if (!opt.annotations.empty()) {
    auto loaded = io::load_annotations(opt.annotations);
    if (loaded.clamped > 0) err << "warning: " << loaded.clamped << " point(s) clamped\n";
    const auto sa = sigmas_for(opt.annotations, image, loaded.annotations, opt.sigma);
    const auto gt = density::render_density(loaded.annotations, sa, 1);
    panels.push_back(gt.grid);
    true_tag = format_count(double(loaded.annotations.size()));
    counts["true"] = loaded.annotations.size();
  }
  panels.push_back(per_pixel_density(pred_grid, pred.stride, image.height, image.width));

  const std::string stem = fs::path(opt.image).stem().string();
  const fs::path path = fs::path(opt.out_dir) / "render" /
                        (stem + "_pred-" + format_count(pred_count) + "_true-" + true_tag + ".png");
  io::save_png(path, compose_panels(image, panels));
  counts["panel"] = path.filename().generic_string();
  io::write_text(fs::path(opt.out_dir) / "render.config.json",
                 json{{"checkpoint", opt.checkpoint},
                      {"image", opt.image},
                      {"annotations", opt.annotations},
                      {"out_dir", opt.out_dir},
                      {"sigma", sigma_json(opt.sigma)},
                      {"counts", counts}}
                         .dump(2) + "\n");
  out << "wrote " << path.string() << '\n';
  return kOk;
}

// --------------------------------------------------------------------- synth

struct SynthOptions {
  train::SyntheticDatasetSpec spec;
  std::string split = "train";
  std::string out_dir = "out";
};

inline json to_json(const train::SyntheticDatasetSpec& s) {
  return {{"count", s.count},         {"height", s.height},   {"width", s.width},
          {"min_heads", s.min_heads}, {"max_heads", s.max_heads}, {"r_min", s.r_min},
          {"r_max", s.r_max},         {"perspective_gain", s.perspective_gain},
          {"clutter_level", s.clutter_level}, {"seed", s.seed}};
}

inline int cmd_synth(const SynthOptions& opt, std::ostream& out, std::ostream&) {
  const auto split = io::split_from_string(opt.split);
  const fs::path root = opt.out_dir;
  io::DatasetManifest manifest{split, {}};
  const auto specs = train::synthetic_scene_specs(opt.spec);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto scene = synth::generate_synthetic_scene(specs[i]);
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04zu", i);
    const fs::path img = root / "images" / (std::string(name) + ".png");
    const fs::path ann = root / "annotations" / (std::string(name) + ".json");
    io::save_png(img, scene.image);
    io::save_annotations(ann, scene.annotations);
    io::write_text(root / "radii" / (std::string(name) + ".json"), json(scene.true_radii).dump() + "\n");
    manifest.entries.push_back({img, ann});
  }
  const fs::path mpath = root / (opt.split + ".json");
  io::save_manifest(mpath, manifest);
  io::write_text(root / "synth.config.json",
                 json{{"split", opt.split}, {"out_dir", opt.out_dir}, {"dataset", to_json(opt.spec)}}.dump(2) + "\n");
  out << "wrote " << specs.size() << " scene(s) and " << mpath.string() << '\n';
  return kOk;
}

}  // namespace mbttbf::cli
