#pragma once

// Evaluation metrics, kernel density estimation, scaling-law fits, k-means
// over region embeddings and the two-stage linear-probe baseline.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "uicl/matrix.hpp"
#include "uicl/region_data.hpp"

namespace uicl {

double mae(std::span<const double> pred, std::span<const double> truth);
double rmse(std::span<const double> pred, std::span<const double> truth);
// Throws NumericalError when either input is constant.
double pcc(std::span<const double> pred, std::span<const double> truth);

struct MetricReport {
  std::string task;
  double mae = 0.0;
  double rmse = 0.0;
  double pcc = 0.0;
  std::size_t n = 0;
};

MetricReport evaluate(std::string task, std::span<const double> pred, std::span<const double> truth);

// Picks pred[i], truth[i] for i in `regions` before scoring.
MetricReport evaluate_subset(std::string task, std::span<const double> pred,
                             std::span<const double> truth, std::span<const std::size_t> regions);

// sum(MAE) + sum(RMSE) - sum(PCC)
double composite_loss(std::span<const MetricReport> reports);

// Epanechnikov kernel 3/4 (1 - u^2) on |u| <= 1.
double epanechnikov(double u);
std::vector<double> epanechnikov_kde(std::span<const double> samples, double bandwidth,
                                     std::span<const double> query);
// 1.06 * sd * n^(-1/5); falls back to 1 for a degenerate sample.
double silverman_bandwidth(std::span<const double> samples);

struct ScalingFit {
  double a = 0.0;
  double b = 0.0;
  double r_squared = 0.0;
};

// Least squares on log y = log a + b x; R^2 in log space.
ScalingFit fit_scaling_law(std::span<const double> x, std::span<const double> y);

struct KMeansResult {
  std::vector<std::size_t> assignments;
  Matrix centroids;
  std::vector<double> inertia_history;  // within-cluster SS after each assignment step
  std::size_t iterations = 0;
};

// Lloyd iterations from k-means++ seeding; stops at an assignment fixpoint
// or after max_iter iterations.
KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                    std::size_t max_iter = 300);

inline constexpr double kDefaultRidge = 1e-3;

// Two-stage baseline: ridge regression (unpenalized intercept) from frozen
// embeddings to the indicator on training regions, evaluated on test regions.
std::vector<double> linear_probe_baseline(const ReferenceEmbeddings& embeddings,
                                          std::span<const double> y,
                                          std::span<const std::size_t> train_idx,
                                          std::span<const std::size_t> test_idx,
                                          double ridge = kDefaultRidge);

}  // namespace uicl
