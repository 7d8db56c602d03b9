#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mbttbf/commands.hpp"

namespace {

using nlohmann::json;
using namespace mbttbf;

// Flags mirror run-config keys one-to-one ("learning_rate" -> --learning-rate).
const std::map<std::string, std::vector<std::string>> kConfigKeys = {
    {"network", {"backbone", "topology", "dr_channels", "use_scfb", "use_scale_supervision", "rng_seed"}},
    {"optim", {"learning_rate", "beta1", "beta2", "epsilon", "epochs", "batch_size", "rng_seed", "flip_probability",
               "noise_std"}},
    {"loss", {"lambda_side"}},
    {"paths", {"train_manifest", "val_manifest", "test_manifest", "out_dir"}},
    {"sigma", {"method", "sigma0", "k", "beta", "kappa", "pixels_per_superpixel", "compactness", "slic_iters", "gamma",
               "color_tau", "max_sweeps", "background_threshold"}},
};

const std::set<std::string> kStringKeys = {"backbone", "topology", "train_manifest", "val_manifest",
                                           "test_manifest", "out_dir", "method"};

std::string flag_name(const std::string& section, const std::string& key) {
  std::string name = key;
  for (char& c : name)
    if (c == '_') c = '-';
  // rng_seed exists in two sections.
  if (key == "rng_seed") name = section == "network" ? "init-seed" : "shuffle-seed";
  return "--" + name;
}

struct ConfigFlags {
  std::string config_path;
  std::map<std::pair<std::string, std::string>, std::optional<std::string>> values;

  void attach(CLI::App* app, const std::vector<std::string>& sections) {
    app->add_option("--config", config_path, "run config JSON")->check(CLI::ExistingFile);
    for (const auto& section : sections)
      for (const auto& key : kConfigKeys.at(section)) {
        auto& slot = values[{section, key}];
        app->add_option(flag_name(section, key), slot, section + "." + key)->group(section);
      }
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_path.empty()) cfg = run_config_from_json(io::read_json(config_path));
    json overlay = json::object();
    for (const auto& [where, value] : values) {
      if (!value) continue;
      json v;
      if (kStringKeys.count(where.second)) {
        v = *value;
      } else {
        v = json::parse(*value, nullptr, false);
        if (v.is_discarded()) throw ConfigError("bad value '" + *value + "' for " + flag_name(where.first, where.second));
      }
      overlay[where.first][where.second] = v;
    }
    return run_config_from_json(overlay, cfg);
  }
};

template <typename T>
std::vector<T> split_list(const std::vector<std::string>& items) {
  std::vector<T> out;
  for (const auto& item : items) {
    std::stringstream ss(item);
    std::string part;
    while (std::getline(ss, part, ','))
      if (!part.empty()) {
        if constexpr (std::is_same_v<T, std::string>)
          out.push_back(part);
        else
          out.push_back(static_cast<T>(std::stoull(part)));
      }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-level bottom-top and top-bottom feature fusion for crowd counting"};
  app.require_subcommand(1);

  ConfigFlags est_flags, train_flags, ablate_flags, render_flags;
  cli::EstimateScalesOptions est;
  auto* c_est = app.add_subcommand("estimate-scales", "write per-head sigma files next to each annotation file");
  c_est->add_option("--manifest", est.manifest, "dataset manifest")->required();
  c_est->add_option("--out-dir", est.out_dir, "where the effective config goes (default: manifest directory)");
  est_flags.attach(c_est, {"sigma"});

  cli::GenGtOptions gen;
  auto* c_gen = app.add_subcommand("gen-gt", "render density maps (and scale bands) from sigma files");
  c_gen->add_option("--manifest", gen.manifest, "dataset manifest")->required();
  c_gen->add_option("--sigmas", gen.sigmas_dir, "directory holding the sigma files (default: next to annotations)");
  c_gen->add_option("--stride", gen.stride, "output stride")->capture_default_str();
  c_gen->add_flag("--bands", gen.bands, "also write the four scale-band maps");
  c_gen->add_option("--out-dir", gen.out_dir, "output root")->capture_default_str();

  auto* c_train = app.add_subcommand("train", "train a network; writes checkpoint and history");
  train_flags.attach(c_train, {"network", "optim", "loss", "paths", "sigma"});

  cli::EvalOptions ev;
  auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  c_eval->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--manifest", ev.manifest, "dataset manifest")->required();
  c_eval->add_option("--out-dir", ev.out_dir, "output root")->capture_default_str();

  std::vector<std::string> topologies_raw, seeds_raw;
  auto* c_ablate = app.add_subcommand("ablate", "train and test a list of configurations under several seeds");
  ablate_flags.attach(c_ablate, {"network", "optim", "loss", "paths", "sigma"});
  c_ablate->add_option("--topologies", topologies_raw, "comma-separated configurations (default: full ladder)");
  c_ablate->add_option("--seeds", seeds_raw, "comma-separated seeds (default: 0)");

  cli::RenderOptions rend;
  auto* c_render = app.add_subcommand("render", "write an input / ground truth / prediction panel image");
  c_render->add_option("--checkpoint", rend.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  c_render->add_option("--image", rend.image, "input image")->required()->check(CLI::ExistingFile);
  c_render->add_option("--annotations", rend.annotations, "annotation file for the ground-truth panel");
  c_render->add_option("--out-dir", rend.out_dir, "output root")->capture_default_str();
  render_flags.attach(c_render, {"sigma"});

  cli::SynthOptions syn;
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic dataset with a manifest");
  c_synth->add_option("--count", syn.spec.count)->capture_default_str();
  c_synth->add_option("--height", syn.spec.height)->capture_default_str();
  c_synth->add_option("--width", syn.spec.width)->capture_default_str();
  c_synth->add_option("--min-heads", syn.spec.min_heads)->capture_default_str();
  c_synth->add_option("--max-heads", syn.spec.max_heads)->capture_default_str();
  c_synth->add_option("--r-min", syn.spec.r_min)->capture_default_str();
  c_synth->add_option("--r-max", syn.spec.r_max)->capture_default_str();
  c_synth->add_option("--perspective-gain", syn.spec.perspective_gain)->capture_default_str();
  c_synth->add_option("--clutter-level", syn.spec.clutter_level)->capture_default_str();
  c_synth->add_option("--seed", syn.spec.seed)->capture_default_str();
  c_synth->add_option("--split", syn.split)->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
  c_synth->add_option("--out-dir", syn.out_dir, "output root")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kOk : cli::kUsage;
  }

  try {
    if (c_est->parsed()) {
      est.sigma = est_flags.resolve().sigma;
      return cli::cmd_estimate_scales(est, std::cout, std::cerr);
    }
    if (c_gen->parsed()) return cli::cmd_gen_gt(gen, std::cout, std::cerr);
    if (c_train->parsed()) return cli::cmd_train(train_flags.resolve(), std::cout, std::cerr);
    if (c_eval->parsed()) return cli::cmd_eval(ev, std::cout, std::cerr);
    if (c_ablate->parsed()) {
      cli::AblateOptions opt;
      opt.topologies = split_list<std::string>(topologies_raw);
      if (!seeds_raw.empty()) opt.seeds = split_list<std::uint64_t>(seeds_raw);
      return cli::cmd_ablate(ablate_flags.resolve(), opt, std::cout, std::cerr);
    }
    if (c_render->parsed()) {
      rend.sigma = render_flags.resolve().sigma;
      return cli::cmd_render(rend, std::cout, std::cerr);
    }
    if (c_synth->parsed()) return cli::cmd_synth(syn, std::cout, std::cerr);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::exit_code_for(e);
  }
  return cli::kUsage;
}
