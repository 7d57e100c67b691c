#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "regle/errors.hpp"
#include "regle/models/train.hpp"
#include "regle/tensor.hpp"

namespace regle::metrics {

/// Per-seed values with mean and 95% normal-approximation half-width.
struct MetricSummary {
  std::vector<double> values;
  double mean = 0.0;
  double standard_error = 0.0;
  double ci_halfwidth = 0.0;
};

/// Mean squared error over every element of two equally shaped tensors.
inline double mean_squared_error(const Tensor<float>& x, const Tensor<float>& xhat) {
  if (x.shape() != xhat.shape()) {
    throw DimensionError("mean_squared_error: shapes " + shape_string(x.shape()) + " and " +
                         shape_string(xhat.shape()) + " differ");
  }
  if (x.empty()) throw UsageError("mean_squared_error of an empty tensor");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(xhat[i]) - x[i];
    acc += d * d;
  }
  return acc / static_cast<double>(x.size());
}

/// Reconstruction MSE of a model on a split, decoding the posterior mean.
inline double reconstruction_error(const models::ModelBundle& model, const Tensor<float>& split) {
  if (split.empty()) throw UsageError("reconstruction_error on an empty split");
  return mean_squared_error(split, models::reconstruct(model, split));
}

/// Average |Pearson r| over all unordered coordinate pairs of z[N,D].
inline double mean_abs_correlation(const Tensor<float>& z) {
  if (z.rank() != 2) throw DimensionError("mean_abs_correlation expects [N,D], got " + shape_string(z.shape()));
  const std::size_t n = z.dim(0), d = z.dim(1);
  if (n < 3) throw UsageError("mean_abs_correlation needs at least 3 rows");
  if (d < 2) throw UsageError("mean_abs_correlation needs at least 2 coordinates");
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += z(i, j);
  for (double& m : mean) m /= static_cast<double>(n);
  // Centered cross-product matrix, upper triangle including the diagonal.
  std::vector<double> c(d * d, 0.0);
  std::vector<double> row(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) row[j] = z(i, j) - mean[j];
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = a; b < d; ++b) c[a * d + b] += row[a] * row[b];
  }
  for (std::size_t j = 0; j < d; ++j) {
    if (!(c[j * d + j] > 0.0)) throw MetricError("latent coordinate " + std::to_string(j) + " has zero variance");
  }
  double acc = 0.0;
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a + 1; b < d; ++b) {
      const double r = c[a * d + b] / std::sqrt(c[a * d + a] * c[b * d + b]);
      acc += std::min(1.0, std::abs(r));
    }
  return acc / static_cast<double>(d * (d - 1) / 2);
}

inline MetricSummary aggregate_seeds(std::span<const double> values) {
  if (values.size() < 2) throw UsageError("aggregate_seeds needs at least 2 values");
  MetricSummary s;
  s.values.assign(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.standard_error = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  s.ci_halfwidth = 1.96 * s.standard_error;
  // Floating-point rounding can push the mean a hair outside the range.
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  s.mean = std::clamp(s.mean, *lo, *hi);
  return s;
}

/// Index of the median error. Even counts take the lower middle value; when
/// several entries share that value the earliest (lowest seed) wins.
inline std::size_t median_index(std::span<const double> errors) {
  if (errors.empty()) throw UsageError("median of an empty list");
  std::vector<double> sorted(errors.begin(), errors.end());
  const auto mid = sorted.begin() + static_cast<std::ptrdiff_t>((sorted.size() - 1) / 2);
  std::nth_element(sorted.begin(), mid, sorted.end());
  return static_cast<std::size_t>(std::find(errors.begin(), errors.end(), *mid) - errors.begin());
}

struct MedianSelection {
  std::size_t index = 0;
  std::vector<double> errors;
};

/// Picks the bundle with the median validation reconstruction error. Bundles
/// are expected in seed order.
inline MedianSelection select_median_model(std::span<const models::ModelBundle> bundles,
                                           const Tensor<float>& validation) {
  if (bundles.empty()) throw UsageError("select_median_model needs at least one model");
  MedianSelection out;
  for (const auto& b : bundles) out.errors.push_back(reconstruction_error(b, validation));
  out.index = median_index(out.errors);
  return out;
}

}  // namespace regle::metrics
