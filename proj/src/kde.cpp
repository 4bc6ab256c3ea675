#include <cmath>
#include <stdexcept>

#include "uicl/analysis.hpp"
#include "uicl/errors.hpp"

namespace uicl {

double epanechnikov(double u) { return std::abs(u) <= 1.0 ? 0.75 * (1.0 - u * u) : 0.0; }

std::vector<double> epanechnikov_kde(std::span<const double> samples, double bandwidth,
                                     std::span<const double> query) {
  if (!(bandwidth > 0.0)) throw ConfigError("KDE bandwidth must be positive");
  if (samples.empty()) throw DataError("KDE needs at least one sample");
  const double norm = 1.0 / (static_cast<double>(samples.size()) * bandwidth);
  std::vector<double> density(query.size(), 0.0);
  for (std::size_t q = 0; q < query.size(); ++q) {
    double acc = 0.0;
    for (double s : samples) acc += epanechnikov((query[q] - s) / bandwidth);
    density[q] = acc * norm;
  }
  return density;
}

double silverman_bandwidth(std::span<const double> samples) {
  if (samples.size() < 2) return 1.0;
  const auto n = static_cast<double>(samples.size());
  double mean = 0.0;
  for (double s : samples) mean += s;
  mean /= n;
  double var = 0.0;
  for (double s : samples) var += (s - mean) * (s - mean);
  const double sd = std::sqrt(var / (n - 1.0));
  if (!(sd > 0.0)) return 1.0;
  return 1.06 * sd * std::pow(n, -0.2);
}

}  // namespace uicl
