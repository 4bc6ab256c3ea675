#pragma once

// Masked diffusion transformer over regions.
//
// Input rows are region embeddings plus a value encoding (observed value for
// observed regions, noisy value for masked ones). L DiT-style blocks follow,
// each gated and modulated by six timestep-conditioned control vectors:
//
//   mod(X, beta, gamma) = X * tanh(beta) + gamma
//   Hc = H  + alpha1 * MHSA(LN(mod(H,  beta1, gamma1)))
//   H' = Hc + alpha2 * FFN (LN(mod(Hc, beta2, gamma2)))
//
// The output head modulates the last block, normalizes it and predicts the
// per-region noise and mask logit. An alignment MLP projects the activations
// after block floor(L/2) onto the reference-embedding space.
//
// All parameters live in one flat buffer; ParameterLayout maps named tensors
// to offsets so optimizers and checkpoints can treat them uniformly.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uicl/diffusion.hpp"
#include "uicl/matrix.hpp"

namespace uicl {

inline constexpr std::size_t kTimeFeatures = 128;
inline constexpr std::size_t kFfnExpansion = 4;
inline constexpr double kLayerNormEps = 1e-5;
// Bias of the tanh-gated scale chunks at init; tanh(1) ~ 0.76.
inline constexpr double kModulationScaleBias = 1.0;
// Region embeddings start an order of magnitude above the value vector so the
// layer norm over R_i + p_i v keeps p_i roughly linear instead of sign-only.
inline constexpr double kRegionEmbedInitStd = 0.3;

struct ModelConfig {
  std::size_t n_regions = 0;
  std::size_t hidden_dim = 128;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t ref_dim = 0;  // 0 disables the alignment MLP
  std::size_t steps = 1000;

  void validate() const;  // throws ConfigError
  std::size_t align_tap() const { return n_layers / 2; }
  std::size_t head_dim() const { return hidden_dim / n_heads; }
  bool operator==(const ModelConfig&) const = default;
};

struct LinearSlot {
  std::size_t weight = 0;  // in x out, row-major
  std::size_t bias = 0;    // out
  std::size_t in = 0;
  std::size_t out = 0;
};

struct NormSlot {
  std::size_t scale = 0;
  std::size_t offset = 0;
  std::size_t dim = 0;
};

struct BlockSlots {
  NormSlot norm1;
  LinearSlot query, key, value, attn_out;
  NormSlot norm2;
  LinearSlot ffn_in, ffn_out;
  LinearSlot adaln;  // D -> 6D: alpha1, beta1, gamma1, alpha2, beta2, gamma2
};

struct TensorInfo {
  std::string name;
  std::string group;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

class ParameterLayout {
 public:
  ParameterLayout() = default;
  explicit ParameterLayout(const ModelConfig& config);

  std::size_t region_embed = 0;  // N x D
  std::size_t value_vec = 0;     // D
  LinearSlot time_in, time_out;  // 128 -> D -> D
  std::vector<BlockSlots> blocks;
  LinearSlot out_adaln;  // D -> 2D: beta_o, gamma_o
  NormSlot out_norm;
  LinearSlot noise_head, mask_head;  // D -> 1
  std::optional<LinearSlot> align_hidden, align_out;  // D -> D -> D'

  // Checkpoint order.
  std::vector<TensorInfo> tensors;
  std::size_t total = 0;

  std::vector<std::string> groups() const;

 private:
  std::size_t add(const std::string& name, const std::string& group, std::size_t rows,
                  std::size_t cols);
  LinearSlot add_linear(const std::string& name, const std::string& group, std::size_t in,
                        std::size_t out);
  NormSlot add_norm(const std::string& name, const std::string& group, std::size_t dim);
};

// Closed-form parameter count for a configuration.
std::size_t parameter_count(const ModelConfig& config);

struct ModelParameters {
  ModelConfig config;
  ParameterLayout layout;
  std::vector<double> values;

  const double* at(std::size_t offset) const { return values.data() + offset; }
  double* at(std::size_t offset) { return values.data() + offset; }
};

// Same shape as ModelParameters::values.
struct ParameterGradients {
  std::vector<double> values;

  explicit ParameterGradients(std::size_t n = 0) : values(n, 0.0) {}
};

// N(0, 0.02^2) weights (region embeddings kRegionEmbedInitStd), zero biases, unit norm scales. Gate chunks (alpha) of
// every modulation MLP and both prediction heads start at zero so each block
// is an identity residual and eps_hat = 0; the tanh scale chunks start at
// kModulationScaleBias so the gated branches receive signal.
ModelParameters init_parameters(const ModelConfig& config, std::uint64_t seed);

// Every entry random (norm scales around 1). For gradient checks, where
// zero-initialized tensors would hide errors.
ModelParameters init_parameters_random(const ModelConfig& config, std::uint64_t seed,
                                       double stddev);

Matrix embed_input(std::span<const double> p_obs, std::span<const double> p_noisy,
                   const MaskVector& mask, const ModelParameters& params);

// X * tanh(beta) + gamma, beta and gamma broadcast over rows.
Matrix modulate(const Matrix& x, std::span<const double> beta, std::span<const double> gamma);

std::vector<double> timestep_features(std::size_t t);

struct BlockTrace {
  Matrix input;
  std::vector<double> control;  // 6D
  std::vector<double> tanh_beta1, tanh_beta2;
  Matrix mod1, norm1_hat, norm1_out;
  std::vector<double> norm1_rstd;
  Matrix query, key, value;
  std::vector<Matrix> probs;  // per head, N x N
  Matrix context, attn;
  Matrix mid;
  Matrix mod2, norm2_hat, norm2_out;
  std::vector<double> norm2_rstd;
  Matrix ffn_pre, ffn_act, ffn_out;
};

struct ForwardTrace {
  std::size_t t = 0;
  bool recorded = false;
  std::vector<double> time_features, time_pre, time_act, cond, cond_act;
  Matrix h0;
  std::vector<BlockTrace> blocks;
  Matrix h_mid;
  Matrix h_last;
  std::vector<double> out_control;  // 2D: beta_o, gamma_o
  std::vector<double> tanh_beta_out;
  Matrix out_mod, out_hat, h_out;
  std::vector<double> out_rstd;
  std::vector<double> eps_hat;
  std::vector<double> mask_logits;
  Matrix align_pre, align_act, e_hat;
};

// Runs the encoder blocks. Throws NumericalError naming the layer when an
// activation becomes non-finite. Intermediate activations are kept only when
// `record` is set.
ForwardTrace encoder_forward(const Matrix& h0, std::size_t t, const ModelParameters& params,
                             bool record);

// Fills eps_hat, mask_logits and (when ref_dim > 0) e_hat on the trace.
void heads_forward(ForwardTrace& trace, const ModelParameters& params);

// embed_input + encoder_forward + heads_forward.
ForwardTrace model_forward(std::span<const double> p_obs, std::span<const double> p_noisy,
                           const MaskVector& mask, std::size_t t,
                           const ModelParameters& params, bool record);

struct OutputGradients {
  std::vector<double> eps_hat;      // N, or empty for zero
  std::vector<double> mask_logits;  // N, or empty for zero
  Matrix e_hat;                     // N x D', or empty for zero
};

// Reverse-mode gradients of <upstream, outputs> for every parameter. The
// region-embedding and value-vector gradients need the embedded values, so
// the caller passes the same inputs given to model_forward.
ParameterGradients backward(const ForwardTrace& trace, const OutputGradients& upstream,
                            std::span<const double> p_obs, std::span<const double> p_noisy,
                            const MaskVector& mask, const ModelParameters& params);
// Same as backward() but reuses the storage of `grad`, which is resized and
// overwritten.
void backward_into(const ForwardTrace& trace, const OutputGradients& upstream,
                   std::span<const double> p_obs, std::span<const double> p_noisy,
                   const MaskVector& mask, const ModelParameters& params,
                   ParameterGradients& grad);

// Checkpoint: "UICL", u32 version 1, six u32 config fields (N, D, L, heads,
// D', T), every tensor in layout order as little-endian f32, then the CRC32
// of everything before it.
void save_checkpoint(const ModelParameters& params, const std::filesystem::path& path);
ModelParameters load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const ModelParameters& params);
ModelParameters decode_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace uicl
