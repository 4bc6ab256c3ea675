#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "uicl/diffusion.hpp"
#include "uicl/masked_dit.hpp"
#include "uicl/region_data.hpp"

namespace uicl {

struct TrainConfig {
  double lr = 4e-4;
  std::size_t epochs = 1000;
  std::size_t batch_size = 128;
  double lambda_mask = 0.3;
  double lambda_align = 0.1;
  std::uint64_t seed = 0;
  // 0 selects default_beta_range(T).
  double beta_start = 0.0;
  double beta_end = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t val_every = 10;
  double val_fraction = 0.1;  // share of profiles held out for model selection
  double max_grad_norm = 0.0;  // 0 disables clipping
  std::size_t threads = 1;

  void validate() const;  // throws ConfigError
};

NoiseSchedule schedule_for(const ModelConfig& model, const TrainConfig& train);

struct LossReport {
  double total = 0.0;
  double noise = 0.0;
  double mask = 0.0;
  double align = 0.0;
  std::size_t epoch = 0;
  std::size_t step = 0;
};

inline constexpr double kProbabilityClamp = 1e-7;

// Mean squared error over masked positions only.
double noise_loss(std::span<const double> eps_true, std::span<const double> eps_hat,
                  const MaskVector& mask);
// d(noise_loss)/d(eps_hat), scaled by `weight`, written into `grad`.
void noise_loss_grad(std::span<const double> eps_true, std::span<const double> eps_hat,
                     const MaskVector& mask, double weight, std::span<double> grad);

// Binary cross-entropy of sigmoid(logits) against the mask bits, probabilities
// clamped to [1e-7, 1 - 1e-7], averaged over all positions.
double mask_loss(std::span<const double> logits, const MaskVector& mask);
void mask_loss_grad(std::span<const double> logits, const MaskVector& mask, double weight,
                    std::span<double> grad);

// Mean over regions of 1 - cos(e_hat_i, ref_i). Rows of e_hat with norm below
// 1e-12 count as cosine 0.
double align_loss(const Matrix& e_hat, const ReferenceEmbeddings& ref);
void align_loss_grad(const Matrix& e_hat, const ReferenceEmbeddings& ref, double weight,
                     Matrix& grad);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

void adam_update(std::span<double> params, std::span<const double> grad, AdamState& state,
                 const TrainConfig& config);

// One optimizer step on a batch of normalized profiles. For each profile a
// mask ratio, mask, step t and noise are drawn from `rng` in batch order; the
// per-example gradients are summed in batch order and averaged.
LossReport train_step(std::span<const std::span<const double>> batch, ModelParameters& params,
                      AdamState& opt, const TrainConfig& config, const NoiseSchedule& schedule,
                      const ReferenceEmbeddings* ref, Rng& rng);

// Masked-position noise loss at mask ratio 0.5 and steps {T/4, T/2, 3T/4},
// with masks and noise fixed by `seed`.
double validation_noise_loss(std::span<const std::span<const double>> profiles,
                             const ModelParameters& params, const NoiseSchedule& schedule,
                             std::uint64_t seed);

struct TrainResult {
  ModelParameters final_params;
  ModelParameters best_params;
  std::vector<LossReport> curve;  // one row per epoch
  std::vector<std::pair<std::size_t, double>> validation;  // (epoch, loss)
  std::size_t best_epoch = 0;
};

// Full pretraining run. When `out_dir` is non-empty writes final.ckpt,
// best.ckpt, loss_curve.csv and val_curve.csv there.
TrainResult train(const ProfileMatrix& matrix, const ModelConfig& model,
                  const TrainConfig& config, const ReferenceEmbeddings* ref,
                  const std::filesystem::path& out_dir);

void write_loss_curve(const std::filesystem::path& path, const std::vector<LossReport>& curve);

}  // namespace uicl
