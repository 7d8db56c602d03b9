#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mbttbf/density.hpp"
#include "mbttbf/nn/model.hpp"
#include "mbttbf/scale/mrf.hpp"
#include "mbttbf/train/loss.hpp"
#include "mbttbf/train/trainer.hpp"

namespace mbttbf {

struct SigmaConfig {
  density::SigmaMethod method = density::SigmaMethod::mrf;
  double sigma0 = 4.0;
  int k = 3;
  double beta = 0.3;
  scale::ScaleEstimationConfig mrf;
};

struct PathsConfig {
  std::string train_manifest;
  std::string val_manifest;
  std::string test_manifest;
  std::string out_dir = "out";
};

/// Everything a command needs, with defaults for every field.
struct RunConfig {
  nn::NetworkConfig network;
  train::OptimConfig optim;
  train::LossConfig loss;
  PathsConfig paths;
  SigmaConfig sigma;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown key '" + key + "' in " + where);
}

template <typename V>
void read(const nlohmann::json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  const auto& m = c.sigma.mrf;
  return {
      {"network", nn::to_json(c.network)},
      {"optim",
       {{"learning_rate", c.optim.learning_rate},
        {"beta1", c.optim.beta1},
        {"beta2", c.optim.beta2},
        {"epsilon", c.optim.epsilon},
        {"epochs", c.optim.epochs},
        {"batch_size", c.optim.batch_size},
        {"rng_seed", c.optim.rng_seed},
        {"flip_probability", c.optim.flip_probability},
        {"noise_std", c.optim.noise_std}}},
      {"loss", {{"lambda_side", c.loss.lambda_side}}},
      {"paths",
       {{"train_manifest", c.paths.train_manifest},
        {"val_manifest", c.paths.val_manifest},
        {"test_manifest", c.paths.test_manifest},
        {"out_dir", c.paths.out_dir}}},
      {"sigma",
       {{"method", density::to_string(c.sigma.method)},
        {"sigma0", c.sigma.sigma0},
        {"k", c.sigma.k},
        {"beta", c.sigma.beta},
        {"kappa", m.kappa},
        {"pixels_per_superpixel", m.pixels_per_superpixel},
        {"compactness", m.compactness},
        {"slic_iters", m.slic_iters},
        {"gamma", m.mrf.gamma},
        {"color_tau", m.mrf.color_tau},
        {"max_sweeps", m.mrf.max_sweeps},
        {"background_threshold", m.mrf.background_threshold}}},
  };
}

/// Overlays `j` on `base`; unknown keys at any level are errors.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {}) {
  using detail::read;
  detail::reject_unknown(j, {"network", "optim", "loss", "paths", "sigma"}, "run config");
  RunConfig c = std::move(base);
  if (j.contains("network")) {
    nlohmann::json merged = nn::to_json(c.network);
    detail::reject_unknown(j["network"], {"backbone", "topology", "dr_channels", "use_scfb", "use_scale_supervision", "rng_seed"}, "network");
    merged.update(j["network"]);
    c.network = nn::network_config_from_json(merged);
  }
  if (j.contains("optim")) {
    const auto& o = j["optim"];
    detail::reject_unknown(o, {"learning_rate", "beta1", "beta2", "epsilon", "epochs", "batch_size", "rng_seed",
                               "flip_probability", "noise_std"}, "optim");
    read(o, "learning_rate", c.optim.learning_rate);
    read(o, "beta1", c.optim.beta1);
    read(o, "beta2", c.optim.beta2);
    read(o, "epsilon", c.optim.epsilon);
    read(o, "epochs", c.optim.epochs);
    read(o, "batch_size", c.optim.batch_size);
    read(o, "rng_seed", c.optim.rng_seed);
    read(o, "flip_probability", c.optim.flip_probability);
    read(o, "noise_std", c.optim.noise_std);
  }
  if (j.contains("loss")) {
    detail::reject_unknown(j["loss"], {"lambda_side"}, "loss");
    read(j["loss"], "lambda_side", c.loss.lambda_side);
  }
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    detail::reject_unknown(p, {"train_manifest", "val_manifest", "test_manifest", "out_dir"}, "paths");
    read(p, "train_manifest", c.paths.train_manifest);
    read(p, "val_manifest", c.paths.val_manifest);
    read(p, "test_manifest", c.paths.test_manifest);
    read(p, "out_dir", c.paths.out_dir);
  }
  if (j.contains("sigma")) {
    const auto& s = j["sigma"];
    detail::reject_unknown(s, {"method", "sigma0", "k", "beta", "kappa", "pixels_per_superpixel", "compactness",
                               "slic_iters", "gamma", "color_tau", "max_sweeps", "background_threshold"}, "sigma");
    if (s.contains("method")) {
      std::string m;
      read(s, "method", m);
      c.sigma.method = density::sigma_method_from_string(m);
    }
    read(s, "sigma0", c.sigma.sigma0);
    read(s, "k", c.sigma.k);
    read(s, "beta", c.sigma.beta);
    read(s, "kappa", c.sigma.mrf.kappa);
    read(s, "pixels_per_superpixel", c.sigma.mrf.pixels_per_superpixel);
    read(s, "compactness", c.sigma.mrf.compactness);
    read(s, "slic_iters", c.sigma.mrf.slic_iters);
    read(s, "gamma", c.sigma.mrf.mrf.gamma);
    read(s, "color_tau", c.sigma.mrf.mrf.color_tau);
    read(s, "max_sweeps", c.sigma.mrf.mrf.max_sweeps);
    read(s, "background_threshold", c.sigma.mrf.mrf.background_threshold);
  }
  if (!(c.optim.learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
  if (c.optim.batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (c.loss.lambda_side < 0.0) throw ConfigError("lambda_side must be non-negative");
  return c;
}

/// Sigmas for one image with the configured estimator.
inline density::SigmaAssignment estimate_sigmas(const SigmaConfig& cfg, const RgbImage* image,
                                                const density::AnnotationSet& annotations) {
  switch (cfg.method) {
    case density::SigmaMethod::constant:
      return scale::estimate_sigmas_constant(annotations, cfg.sigma0);
    case density::SigmaMethod::knn:
      return scale::estimate_sigmas_knn(annotations, cfg.k, cfg.beta);
    case density::SigmaMethod::mrf:
      if (!image) throw FormatError("the mrf estimator needs the image");
      if (image->height != annotations.height || image->width != annotations.width)
        throw FormatError("image size does not match the annotation file");
      return scale::estimate_sigmas_from_image(*image, annotations, cfg.mrf);
  }
  throw ConfigError("unknown sigma method");
}

}  // namespace mbttbf
