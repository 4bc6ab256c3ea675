#pragma once

// DDPM noise schedule, forward corruption, single reverse step, and the
// random-mask sampler used during pretraining.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "uicl/rng.hpp"

namespace uicl {

// Arrays are indexed by step t in 1..T at position t - 1.
struct NoiseSchedule {
  std::size_t steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> sigma;

  double beta_at(std::size_t t) const { return beta.at(t - 1); }
  double alpha_at(std::size_t t) const { return alpha.at(t - 1); }
  double alpha_bar_at(std::size_t t) const { return alpha_bar.at(t - 1); }
  double sigma_at(std::size_t t) const { return sigma.at(t - 1); }
};

// Linear beta interpolation from beta_start (t = 1) to beta_end (t = T).
NoiseSchedule build_schedule(std::size_t steps, double beta_start, double beta_end);

// Default endpoints for a T-step linear schedule: 1e-4 and 0.02 at T = 1000,
// scaled by 1000 / T for shorter chains (beta_end capped at 0.5).
struct BetaRange {
  double start;
  double end;
};
BetaRange default_beta_range(std::size_t steps);

// sqrt(abar_t) x + sqrt(1 - abar_t) eps
std::vector<double> forward_diffuse(std::span<const double> x, std::size_t t,
                                    std::span<const double> eps, const NoiseSchedule& schedule);

// (x_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t) + sigma_t z
std::vector<double> reverse_step(std::span<const double> x_t, std::span<const double> eps_hat,
                                 std::size_t t, std::span<const double> z,
                                 const NoiseSchedule& schedule);

// Scalar form of reverse_step for one coordinate.
double reverse_step_value(double x_t, double eps_hat, std::size_t t, double z,
                          const NoiseSchedule& schedule);

inline constexpr double kMaskRatioMean = 0.5;
inline constexpr double kMaskRatioStd = 1.0;
inline constexpr double kMaskRatioLow = 0.01;
inline constexpr double kMaskRatioHigh = 0.99;

// Draw from N(0.5, 1) truncated to [0.01, 0.99] by rejection.
double sample_mask_ratio(Rng& rng);

// bits[i] = 1 marks a masked (unknown) region, 0 an observed one.
struct MaskVector {
  std::vector<std::uint8_t> bits;
  double ratio = 0.0;  // realized fraction of masked positions

  std::size_t size() const { return bits.size(); }
  std::size_t masked_count() const;
  bool masked(std::size_t i) const { return bits[i] != 0; }

  static MaskVector from_bits(std::vector<std::uint8_t> bits);
};

// Masks exactly clamp(round(ratio * n), 1, n - 1) positions chosen uniformly
// without replacement.
MaskVector make_mask(std::size_t n, double ratio, Rng& rng);

}  // namespace uicl
