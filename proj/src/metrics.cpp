#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "uicl/analysis.hpp"
#include "uicl/errors.hpp"

namespace uicl {
namespace {

void check_pair(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw DataError("metric inputs differ in length");
  if (pred.empty()) throw DataError("metric inputs are empty");
}

}  // namespace

double mae(std::span<const double> pred, std::span<const double> truth) {
  check_pair(pred, truth);
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) total += std::abs(pred[i] - truth[i]);
  return total / static_cast<double>(pred.size());
}

double rmse(std::span<const double> pred, std::span<const double> truth) {
  check_pair(pred, truth);
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - truth[i];
    total += e * e;
  }
  return std::sqrt(total / static_cast<double>(pred.size()));
}

double pcc(std::span<const double> pred, std::span<const double> truth) {
  check_pair(pred, truth);
  const auto n = static_cast<double>(pred.size());
  double mp = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    mp += pred[i];
    mt += truth[i];
  }
  mp /= n;
  mt /= n;
  double cov = 0.0, vp = 0.0, vt = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double dp = pred[i] - mp;
    const double dt = truth[i] - mt;
    cov += dp * dt;
    vp += dp * dp;
    vt += dt * dt;
  }
  if (vp == 0.0 || vt == 0.0) {
    throw NumericalError("correlation is undefined for a constant input");
  }
  return std::clamp(cov / (std::sqrt(vp) * std::sqrt(vt)), -1.0, 1.0);
}

MetricReport evaluate(std::string task, std::span<const double> pred, std::span<const double> truth) {
  return MetricReport{std::move(task), mae(pred, truth), rmse(pred, truth), pcc(pred, truth),
                      pred.size()};
}

MetricReport evaluate_subset(std::string task, std::span<const double> pred,
                             std::span<const double> truth, std::span<const std::size_t> regions) {
  std::vector<double> p, t;
  p.reserve(regions.size());
  t.reserve(regions.size());
  for (std::size_t i : regions) {
    p.push_back(pred[i]);
    t.push_back(truth[i]);
  }
  return evaluate(std::move(task), p, t);
}

double composite_loss(std::span<const MetricReport> reports) {
  if (reports.empty()) throw std::invalid_argument("composite_loss needs at least one report");
  double total = 0.0;
  for (const auto& r : reports) total += r.mae + r.rmse - r.pcc;
  return total;
}

}  // namespace uicl
