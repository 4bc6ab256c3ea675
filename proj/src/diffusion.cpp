#include "uicl/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "uicl/errors.hpp"

namespace uicl {
namespace {

void check_step(std::size_t t, const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.steps) {
    throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [1, " +
                            std::to_string(schedule.steps) + "]");
  }
}

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) {
    throw std::invalid_argument("vector length mismatch: " + std::to_string(a) + " vs " +
                                std::to_string(b));
  }
}

}  // namespace

NoiseSchedule build_schedule(std::size_t steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("diffusion steps must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw ConfigError("beta range must satisfy 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.steps = steps;
  s.beta.resize(steps);
  s.alpha.resize(steps);
  s.alpha_bar.resize(steps);
  s.sigma.resize(steps);
  double running = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    s.beta[i] = beta_start + (beta_end - beta_start) * frac;
    s.alpha[i] = 1.0 - s.beta[i];
    running *= s.alpha[i];
    s.alpha_bar[i] = running;
    s.sigma[i] = std::sqrt(s.beta[i]);
  }
  return s;
}

BetaRange default_beta_range(std::size_t steps) {
  if (steps < 1) throw ConfigError("diffusion steps must be >= 1");
  const double scale = 1000.0 / static_cast<double>(steps);
  const double end = std::min(0.02 * scale, 0.5);
  const double start = std::min(1e-4 * scale, end);
  return {start, end};
}

std::vector<double> forward_diffuse(std::span<const double> x, std::size_t t,
                                    std::span<const double> eps, const NoiseSchedule& schedule) {
  check_lengths(x.size(), eps.size());
  check_step(t, schedule);
  const double signal = std::sqrt(schedule.alpha_bar_at(t));
  const double noise = std::sqrt(1.0 - schedule.alpha_bar_at(t));
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = signal * x[i] + noise * eps[i];
  return out;
}

double reverse_step_value(double x_t, double eps_hat, std::size_t t, double z,
                          const NoiseSchedule& schedule) {
  const double coef = schedule.beta_at(t) / std::sqrt(1.0 - schedule.alpha_bar_at(t));
  return (x_t - coef * eps_hat) / std::sqrt(schedule.alpha_at(t)) + schedule.sigma_at(t) * z;
}

std::vector<double> reverse_step(std::span<const double> x_t, std::span<const double> eps_hat,
                                 std::size_t t, std::span<const double> z,
                                 const NoiseSchedule& schedule) {
  check_lengths(x_t.size(), eps_hat.size());
  check_lengths(x_t.size(), z.size());
  check_step(t, schedule);
  std::vector<double> out(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    out[i] = reverse_step_value(x_t[i], eps_hat[i], t, z[i], schedule);
  }
  return out;
}

double sample_mask_ratio(Rng& rng) {
  while (true) {
    const double r = rng.normal(kMaskRatioMean, kMaskRatioStd);
    if (r >= kMaskRatioLow && r <= kMaskRatioHigh) return r;
  }
}

std::size_t MaskVector::masked_count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

MaskVector MaskVector::from_bits(std::vector<std::uint8_t> bits) {
  for (auto& b : bits) {
    if (b > 1) throw DataError("mask bits must be 0 or 1");
  }
  MaskVector m;
  m.bits = std::move(bits);
  m.ratio = m.bits.empty() ? 0.0
                           : static_cast<double>(m.masked_count()) /
                                 static_cast<double>(m.bits.size());
  return m;
}

MaskVector make_mask(std::size_t n, double ratio, Rng& rng) {
  if (n < 2) throw std::invalid_argument("mask needs at least 2 positions");
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("mask ratio must be in (0, 1)");
  const auto target = static_cast<long long>(std::llround(ratio * static_cast<double>(n)));
  const auto count = static_cast<std::size_t>(
      std::clamp<long long>(target, 1, static_cast<long long>(n) - 1));

  // Partial Fisher-Yates: the first `count` entries are a uniform subset.
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(n - 1)));
    std::swap(ids[i], ids[j]);
  }
  MaskVector mask;
  mask.bits.assign(n, 0);
  for (std::size_t i = 0; i < count; ++i) mask.bits[ids[i]] = 1;
  mask.ratio = static_cast<double>(count) / static_cast<double>(n);
  return mask;
}

}  // namespace uicl
