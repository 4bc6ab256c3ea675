#pragma once

// Training-free prediction for a partially observed profile: unknown regions
// start as N(0, 1) noise and are denoised from T to 1 while observed regions
// stay pinned to their values; K independent chains are averaged.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "uicl/diffusion.hpp"
#include "uicl/masked_dit.hpp"
#include "uicl/region_data.hpp"

namespace uicl {

inline constexpr std::size_t kDefaultRounds = 10;

struct InferenceRequest {
  std::vector<double> observed_values;  // normalized; entries under the mask are ignored
  MaskVector mask;                      // 1 = unknown, to predict
  std::size_t rounds = kDefaultRounds;
  std::uint64_t seed = 0;

  void validate(std::size_t n_regions) const;  // throws ConfigError
};

struct PredictionEnsemble {
  Matrix samples;  // rounds x N
  std::vector<double> mean_prediction;
  std::vector<double> per_region_std;  // population std over the rounds
};

std::vector<double> init_noisy_profile(const InferenceRequest& request, Rng& rng);

std::vector<double> reverse_chain(const InferenceRequest& request, const ModelParameters& params,
                                  const NoiseSchedule& schedule, Rng& rng);

// Chain k uses the sub-stream ("chain", k) of request.seed, so chains are
// independent of each other and of the thread count.
PredictionEnsemble predict(const InferenceRequest& request, const ModelParameters& params,
                           const NoiseSchedule& schedule, std::size_t threads = 1);

// {"mask", "mean", "std", "samples", "norm_mean", "norm_std"}
void write_prediction_json(const std::filesystem::path& path, const PredictionEnsemble& ensemble,
                           const MaskVector& mask, const std::optional<NormStats>& stats);

struct PredictionFile {
  MaskVector mask;
  std::vector<double> mean;
  std::vector<double> std;
  Matrix samples;
  std::optional<NormStats> stats;
};

PredictionFile read_prediction_json(const std::filesystem::path& path);

// Reads {"mask": [0/1 ...]} or {"unknown": [region ids]}.
MaskVector load_mask_file(const std::filesystem::path& path, std::size_t n_regions);

}  // namespace uicl
