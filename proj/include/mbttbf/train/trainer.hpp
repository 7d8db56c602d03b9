#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mbttbf/density.hpp"
#include "mbttbf/nn/model.hpp"
#include "mbttbf/synthetic.hpp"
#include "mbttbf/train/loss.hpp"
#include "mbttbf/train/metrics.hpp"

namespace mbttbf::train {

struct OptimConfig {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int epochs = 1;
  int batch_size = 1;
  std::uint64_t rng_seed = 0;
  double flip_probability = 0.5;
  double noise_std = 0.01;  // additive Gaussian pixel noise, fraction of intensity range
};

struct Sample {
  RgbImage image;
  density::AnnotationSet annotations;
  density::SigmaAssignment sigmas;
  Supervision gt;
};

inline Sample make_sample(RgbImage image, density::AnnotationSet annotations, density::SigmaAssignment sigmas) {
  Sample s{std::move(image), std::move(annotations), std::move(sigmas), {}};
  s.gt = make_supervision(s.annotations, s.sigmas);
  return s;
}

template <typename T>
class Adam {
 public:
  explicit Adam(const OptimConfig& cfg) : cfg_(cfg) {}

  void step(nn::ParameterStore<T>& params, T grad_scale = T(1)) {
    if (m_.empty()) {
      for (std::size_t i = 0; i < params.count(); ++i) {
        m_.emplace_back(params[i].size(), 0.0);
        v_.emplace_back(params[i].size(), 0.0);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.count(); ++i) {
      auto& p = params[i];
      if (p.frozen) continue;
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double g = static_cast<double>(p.grad[k] * grad_scale);
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
        const double update = cfg_.learning_rate * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.epsilon);
        p.value[k] = static_cast<T>(static_cast<double>(p.value[k]) - update);
      }
    }
  }

 private:
  OptimConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

template <typename T>
MetricsReport evaluate(nn::Model<T>& model, const std::vector<Sample>& dataset) {
  if (dataset.empty()) throw DomainError("cannot evaluate on an empty dataset");
  std::vector<std::pair<double, double>> counts;
  counts.reserve(dataset.size());
  for (const auto& s : dataset)
    counts.emplace_back(static_cast<double>(s.annotations.size()), static_cast<double>(model.predict_count(s.image)));
  return compute_metrics(std::move(counts));
}

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  double val_mse = 0.0;
};

inline nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_mae", r.val_mae}, {"val_mse", r.val_mse}};
}

/// Random horizontal flip of image and supervision together, then additive
/// pixel noise on the image only.
template <typename T>
std::pair<nn::Tensor<T>, Supervision> augment(const Sample& s, synth::Rng& rng, const OptimConfig& cfg) {
  RgbImage img = s.image;
  const bool flip = rng.uniform() < cfg.flip_probability;
  if (flip) {
    for (int r = 0; r < img.height; ++r)
      for (int c = 0; c < img.width; ++c)
        for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = s.image.at(r, img.width - 1 - c, ch);
  }
  if (cfg.noise_std > 0.0)
    for (float& v : img.data) v = static_cast<float>(v + cfg.noise_std * rng.normal());
  return {nn::image_to_tensor<T>(img), flip ? flip_horizontal(s.gt) : s.gt};
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Adam over the training set in a seeded random order. Gradients of a batch
/// are averaged before each step.
template <typename T>
std::vector<EpochRecord> train(nn::Model<T>& model, const std::vector<Sample>& train_set,
                               const std::vector<Sample>& val_set, const OptimConfig& optim,
                               const LossConfig& loss_cfg, const EpochCallback& on_epoch = {}) {
  if (train_set.empty()) throw DomainError("training set is empty");
  if (!(optim.learning_rate >= 0.0) || optim.batch_size <= 0 || optim.epochs < 0)
    throw ConfigError("invalid optimiser configuration");
  synth::Rng rng(optim.rng_seed);
  Adam<T> adam(optim);
  auto& params = model.params();
  std::vector<EpochRecord> history;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < optim.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
    double loss_sum = 0.0;
    int in_batch = 0;
    params.zero_grad();
    for (std::size_t n = 0; n < order.size(); ++n) {
      const Sample& s = train_set[order[n]];
      auto [input, gt] = augment<T>(s, rng, optim);
      nn::Tape<T> tape;
      const auto g = model.forward(tape, input);
      const nn::Var loss = total_loss(tape, g, gt, loss_cfg, model.config().use_scale_supervision);
      const double lv = static_cast<double>(tape.value(loss).data[0]);
      if (!std::isfinite(lv)) {
        std::ostringstream msg;
        msg << "non-finite training loss at epoch " << epoch << ", sample " << order[n];
        throw NumericError(msg.str());
      }
      loss_sum += lv;
      tape.backward(loss);
      if (++in_batch == optim.batch_size || n + 1 == order.size()) {
        adam.step(params, T(1) / static_cast<T>(in_batch));
        params.zero_grad();
        in_batch = 0;
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    if (!val_set.empty()) {
      const auto m = evaluate(model, val_set);
      rec.val_mae = m.mae;
      rec.val_mse = m.mse;
    }
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

}  // namespace mbttbf::train
