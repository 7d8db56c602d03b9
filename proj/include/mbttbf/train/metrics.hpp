#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "mbttbf/density.hpp"
#include "mbttbf/grid.hpp"

namespace mbttbf::train {

struct MetricsReport {
  double mae = 0.0;
  double mse = 0.0;  // root of the mean squared count error
  int n_images = 0;
  std::vector<std::pair<double, double>> per_image;  // (true count, predicted count)
};

/// MAE = mean |y - y'|, MSE = sqrt(mean |y - y'|^2). Sums use exact
/// summation so the result does not depend on image order.
inline MetricsReport compute_metrics(std::vector<std::pair<double, double>> counts) {
  if (counts.empty()) throw DomainError("metrics need at least one image");
  std::vector<double> abs_err, sq_err;
  for (const auto& [y, yp] : counts) {
    abs_err.push_back(std::abs(y - yp));
    sq_err.push_back((y - yp) * (y - yp));
  }
  MetricsReport r;
  r.n_images = static_cast<int>(counts.size());
  r.mae = density::exact_sum(abs_err) / r.n_images;
  r.mse = std::sqrt(density::exact_sum(sq_err) / r.n_images);
  r.per_image = std::move(counts);
  return r;
}

}  // namespace mbttbf::train
