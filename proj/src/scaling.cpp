#include <cmath>

#include "uicl/analysis.hpp"
#include "uicl/errors.hpp"

namespace uicl {

ScalingFit fit_scaling_law(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DataError("scaling fit: x and y differ in length");
  if (x.size() < 3) throw DataError("scaling fit needs at least 3 points");
  const auto n = static_cast<double>(x.size());
  std::vector<double> ly(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(y[i] > 0.0)) throw DataError("scaling fit needs strictly positive y");
    ly[i] = std::log(y[i]);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (ly[i] - my);
  }
  if (sxx == 0.0) throw NumericalError("scaling fit: all x values are equal");
  ScalingFit fit;
  fit.b = sxy / sxx;
  const double log_a = my - fit.b * mx;
  fit.a = std::exp(log_a);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = ly[i] - (log_a + fit.b * x[i]);
    ss_res += r * r;
    ss_tot += (ly[i] - my) * (ly[i] - my);
  }
  // A constant series is fit exactly by b = 0.
  fit.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return fit;
}

}  // namespace uicl
