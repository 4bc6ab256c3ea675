#include <limits>

#include "uicl/analysis.hpp"
#include "uicl/errors.hpp"
#include "uicl/kernels.hpp"
#include "uicl/rng.hpp"

namespace uicl {
namespace {

Matrix plus_plus_seeding(const Matrix& points, std::size_t k, Rng& rng) {
  const auto& kern = kernels::active();
  const std::size_t n = points.rows;
  const std::size_t d = points.cols;
  Matrix centroids(k, d);
  const auto first = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
  std::copy_n(points.ptr() + first * d, d, centroids.ptr());

  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dist = kern.squared_distance(points.ptr() + i * d, centroids.ptr() + (c - 1) * d, d);
      nearest[i] = std::min(nearest[i], dist);
      total += nearest[i];
    }
    std::size_t pick = n - 1;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        target -= nearest[i];
        if (target < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      // All points coincide with chosen centroids.
      pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
    }
    std::copy_n(points.ptr() + pick * d, d, centroids.ptr() + c * d);
  }
  return centroids;
}

}  // namespace

KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, std::size_t max_iter) {
  const std::size_t n = points.rows;
  const std::size_t d = points.cols;
  if (k == 0) throw ConfigError("k must be >= 1");
  if (k > n) throw ConfigError("k (" + std::to_string(k) + ") exceeds the number of points (" +
                               std::to_string(n) + ")");
  const auto& kern = kernels::active();
  Rng rng(seed, "kmeans");

  KMeansResult r;
  r.centroids = plus_plus_seeding(points, k, rng);
  r.assignments.assign(n, k);  // k = unassigned
  std::vector<std::size_t> counts(k);
  for (std::size_t iter = 0; iter < std::max<std::size_t>(max_iter, 1); ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* x = points.ptr() + i * d;
      std::size_t best = r.assignments[i];
      double best_dist = best < k ? kern.squared_distance(x, r.centroids.ptr() + best * d, d)
                                  : std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dist = kern.squared_distance(x, r.centroids.ptr() + c * d, d);
        if (dist < best_dist) {
          best_dist = dist;
          best = c;
        }
      }
      if (best != r.assignments[i]) {
        r.assignments[i] = best;
        changed = true;
      }
      inertia += best_dist;
    }
    r.inertia_history.push_back(inertia);
    r.iterations = iter + 1;
    if (!changed) break;

    Matrix sums(k, d);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      kern.axpy(1.0, points.ptr() + i * d, sums.ptr() + r.assignments[i] * d, d);
      ++counts[r.assignments[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // keep the previous centroid
      const double inv = 1.0 / static_cast<double>(counts[c]);
      for (std::size_t j = 0; j < d; ++j) r.centroids(c, j) = sums(c, j) * inv;
    }
  }
  return r;
}

}  // namespace uicl
