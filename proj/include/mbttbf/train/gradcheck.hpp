#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mbttbf/nn/model.hpp"
#include "mbttbf/synthetic.hpp"
#include "mbttbf/train/loss.hpp"

namespace mbttbf::train {

struct GroupError {
  std::string name;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates that straddled a kink
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  double rel_error = 0.0;
  bool frozen = false;
};

struct GradCheckReport {
  std::vector<GroupError> groups;
  double max_rel_error = 0.0;
  std::string worst_group;
};

using LossBuilder = std::function<nn::Var(nn::Tape<double>&)>;

/// Compares analytic parameter gradients with central differences, one
/// group per named parameter. Up to `coords_per_group` coordinates of each
/// group are probed (all of them for small groups). A coordinate whose +-step
/// evaluations take a different rectifier / max-pool branch than the base
/// point straddles a kink; it is skipped and another one is drawn. Group
/// error is ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-10).
inline GradCheckReport check_gradients(nn::ParameterStore<double>& params, const LossBuilder& build,
                                       std::size_t coords_per_group = 16, double step = 1e-5,
                                       std::uint64_t seed = 0) {
  params.zero_grad();
  std::uint64_t base_signature = 0;
  {
    nn::Tape<double> tape;
    const nn::Var loss = build(tape);
    base_signature = tape.branch_signature();
    tape.backward(loss);
  }
  auto eval = [&](bool& smooth) {
    nn::Tape<double> tape;
    const double v = tape.value(build(tape)).data[0];
    smooth = smooth && tape.branch_signature() == base_signature;
    return v;
  };
  synth::Rng rng(seed);
  GradCheckReport report;
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto& p = params[i];
    GroupError ge;
    ge.name = p.name;
    ge.frozen = p.frozen;
    // Candidate order: every index for small groups, random draws otherwise.
    std::vector<std::size_t> candidates;
    const std::size_t budget = 4 * coords_per_group;
    if (p.size() <= budget) {
      for (std::size_t k = 0; k < p.size(); ++k) candidates.push_back(k);
      for (std::size_t n = candidates.size(); n > 1; --n)
        std::swap(candidates[n - 1], candidates[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(n) - 1))]);
    } else {
      while (candidates.size() < budget) {
        const auto k = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(p.size()) - 1));
        if (std::find(candidates.begin(), candidates.end(), k) == candidates.end()) candidates.push_back(k);
      }
    }
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t k : candidates) {
      if (ge.checked == coords_per_group) break;
      const double analytic = p.grad[k];
      double numeric = 0.0;
      if (!p.frozen) {
        bool smooth = true;
        const double orig = p.value[k];
        p.value[k] = orig + step;
        const double up = eval(smooth);
        p.value[k] = orig - step;
        const double down = eval(smooth);
        p.value[k] = orig;
        if (!smooth) {
          ++ge.skipped;
          continue;
        }
        numeric = (up - down) / (2.0 * step);
      }
      ++ge.checked;
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
    }
    ge.analytic_norm = std::sqrt(a2);
    ge.numeric_norm = std::sqrt(n2);
    ge.rel_error = std::sqrt(diff2) / std::max({ge.analytic_norm, ge.numeric_norm, 1e-10});
    if (ge.rel_error > report.max_rel_error) {
      report.max_rel_error = ge.rel_error;
      report.worst_group = ge.name;
    }
    report.groups.push_back(ge);
  }
  return report;
}

/// Gradient check of total_loss for a network config on one image. Biases
/// start at zero, which puts every rectifier over zero-padded input exactly
/// on its kink, so they are jittered first.
inline GradCheckReport gradient_check(const nn::NetworkConfig& cfg, const RgbImage& image, const Supervision& gt,
                                      const LossConfig& loss_cfg = {}, std::size_t coords_per_group = 16,
                                      double step = 1e-5) {
  nn::Model<double> model(cfg);
  synth::Rng jitter(cfg.rng_seed ^ 0x9e3779b97f4a7c15ULL);
  auto& params = model.params();
  for (std::size_t i = 0; i < params.count(); ++i) {
    const auto& name = params[i].name;
    if (name.size() < 5 || name.compare(name.size() - 5, 5, ".bias") != 0) continue;
    for (double& v : params[i].value) v += 0.05 * jitter.normal();
  }
  const auto input = nn::image_to_tensor<double>(image);
  return check_gradients(
      model.params(),
      [&](nn::Tape<double>& tape) {
        const auto g = model.forward(tape, input);
        return total_loss(tape, g, gt, loss_cfg, cfg.use_scale_supervision);
      },
      coords_per_group, step, cfg.rng_seed);
}

}  // namespace mbttbf::train
