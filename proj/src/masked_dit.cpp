#include "uicl/masked_dit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "dit_ops.hpp"
#include "uicl/errors.hpp"
#include "uicl/kernels.hpp"
#include "uicl/rng.hpp"

namespace uicl {

void ModelConfig::validate() const {
  if (n_regions < 2) throw ConfigError("model needs at least 2 regions");
  if (hidden_dim == 0) throw ConfigError("hidden_dim must be positive");
  if (n_layers < 1) throw ConfigError("model needs at least one layer");
  if (n_heads == 0 || hidden_dim % n_heads != 0) {
    throw ConfigError("hidden_dim must be divisible by n_heads");
  }
  if (ref_dim > 0 && align_tap() < 1) {
    throw ConfigError("alignment needs at least 2 layers (tap layer floor(L/2) >= 1)");
  }
  if (steps < 1) throw ConfigError("diffusion steps must be >= 1");
}

ParameterLayout::ParameterLayout(const ModelConfig& config) {
  config.validate();
  const std::size_t n = config.n_regions;
  const std::size_t d = config.hidden_dim;
  region_embed = add("region_embed", "region_embed", n, d);
  value_vec = add("value_vec", "value_vec", 1, d);
  time_in = add_linear("time_mlp.in", "time_mlp", kTimeFeatures, d);
  time_out = add_linear("time_mlp.out", "time_mlp", d, d);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    BlockSlots b;
    b.norm1 = add_norm(p + "norm1", p + "norm1", d);
    b.query = add_linear(p + "query", p + "attention", d, d);
    b.key = add_linear(p + "key", p + "attention", d, d);
    b.value = add_linear(p + "value", p + "attention", d, d);
    b.attn_out = add_linear(p + "attn_out", p + "attention", d, d);
    b.norm2 = add_norm(p + "norm2", p + "norm2", d);
    b.ffn_in = add_linear(p + "ffn_in", p + "ffn", d, kFfnExpansion * d);
    b.ffn_out = add_linear(p + "ffn_out", p + "ffn", kFfnExpansion * d, d);
    b.adaln = add_linear(p + "adaln", p + "adaln", d, 6 * d);
    blocks.push_back(b);
  }
  out_adaln = add_linear("out_adaln", "out_adaln", d, 2 * d);
  out_norm = add_norm("out_norm", "out_norm", d);
  noise_head = add_linear("noise_head", "noise_head", d, 1);
  mask_head = add_linear("mask_head", "mask_head", d, 1);
  if (config.ref_dim > 0) {
    align_hidden = add_linear("align_mlp.hidden", "align_mlp", d, d);
    align_out = add_linear("align_mlp.out", "align_mlp", d, config.ref_dim);
  }
}

std::size_t ParameterLayout::add(const std::string& name, const std::string& group,
                                 std::size_t rows, std::size_t cols) {
  tensors.push_back(TensorInfo{name, group, total, rows, cols});
  const std::size_t offset = total;
  total += rows * cols;
  return offset;
}

LinearSlot ParameterLayout::add_linear(const std::string& name, const std::string& group,
                                       std::size_t in, std::size_t out) {
  LinearSlot s;
  s.in = in;
  s.out = out;
  s.weight = add(name + ".weight", group, in, out);
  s.bias = add(name + ".bias", group, 1, out);
  return s;
}

NormSlot ParameterLayout::add_norm(const std::string& name, const std::string& group,
                                   std::size_t dim) {
  NormSlot s;
  s.dim = dim;
  s.scale = add(name + ".scale", group, 1, dim);
  s.offset = add(name + ".offset", group, 1, dim);
  return s;
}

std::vector<std::string> ParameterLayout::groups() const {
  std::vector<std::string> out;
  for (const auto& t : tensors) {
    if (out.empty() || out.back() != t.group) out.push_back(t.group);
  }
  return out;
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.hidden_dim;
  const std::size_t f = kFfnExpansion * d;
  const auto linear = [](std::size_t in, std::size_t out) { return in * out + out; };
  const std::size_t block = 2 * (2 * d) + 4 * linear(d, d) + linear(d, f) + linear(f, d) +
                            linear(d, 6 * d);
  std::size_t total = c.n_regions * d + d + linear(kTimeFeatures, d) + linear(d, d) +
                      c.n_layers * block + linear(d, 2 * d) + 2 * d + 2 * linear(d, 1);
  if (c.ref_dim > 0) total += linear(d, d) + linear(d, c.ref_dim);
  return total;
}

namespace {

void fill_normal(std::vector<double>& values, const TensorInfo& t, Rng& rng, double stddev) {
  for (std::size_t i = 0; i < t.size(); ++i) values[t.offset + i] = stddev * rng.normal();
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

ModelParameters init_parameters(const ModelConfig& config, std::uint64_t seed) {
  ModelParameters p{config, ParameterLayout(config), {}};
  p.values.assign(p.layout.total, 0.0);
  Rng rng(seed, "init");
  for (const auto& t : p.layout.tensors) {
    const bool zero_group = t.group == "noise_head" || t.group == "mask_head" ||
                            t.group == "out_adaln" || ends_with(t.group, ".adaln");
    if (ends_with(t.name, ".scale")) {
      std::fill_n(p.values.begin() + static_cast<std::ptrdiff_t>(t.offset), t.size(), 1.0);
    } else if (ends_with(t.name, ".bias") || ends_with(t.name, ".offset") || zero_group) {
      // zero
    } else {
      fill_normal(p.values, t, rng, t.group == "region_embed" ? kRegionEmbedInitStd : 0.02);
    }
  }
  // Scale chunks of the modulation MLPs: beta1/beta2 at [D, 2D) and
  // [4D, 5D) of each block's 6D output, beta_o at [0, D) of the output MLP.
  const std::size_t d = config.hidden_dim;
  for (const auto& b : p.layout.blocks) {
    std::fill_n(p.at(b.adaln.bias) + d, d, kModulationScaleBias);
    std::fill_n(p.at(b.adaln.bias) + 4 * d, d, kModulationScaleBias);
  }
  std::fill_n(p.at(p.layout.out_adaln.bias), d, kModulationScaleBias);
  return p;
}

ModelParameters init_parameters_random(const ModelConfig& config, std::uint64_t seed,
                                       double stddev) {
  ModelParameters p{config, ParameterLayout(config), {}};
  p.values.assign(p.layout.total, 0.0);
  Rng rng(seed, "init-random");
  for (const auto& t : p.layout.tensors) {
    fill_normal(p.values, t, rng, stddev);
    if (ends_with(t.name, ".scale")) {
      for (std::size_t i = 0; i < t.size(); ++i) p.values[t.offset + i] += 1.0;
    }
  }
  return p;
}

Matrix embed_input(std::span<const double> p_obs, std::span<const double> p_noisy,
                   const MaskVector& mask, const ModelParameters& params) {
  const std::size_t n = params.config.n_regions;
  const std::size_t d = params.config.hidden_dim;
  if (p_obs.size() != n || p_noisy.size() != n || mask.size() != n) {
    throw std::invalid_argument("embed_input: inputs must have one entry per region");
  }
  Matrix h(n, d);
  std::copy_n(params.at(params.layout.region_embed), n * d, h.data.begin());
  const double* v = params.at(params.layout.value_vec);
  const auto& k = kernels::active();
  for (std::size_t i = 0; i < n; ++i) {
    const double value = mask.masked(i) ? p_noisy[i] : p_obs[i];
    k.axpy(value, v, h.ptr() + i * d, d);
  }
  return h;
}

Matrix modulate(const Matrix& x, std::span<const double> beta, std::span<const double> gamma) {
  if (beta.size() != x.cols || gamma.size() != x.cols) {
    throw std::invalid_argument("modulate: control vectors must match the feature width");
  }
  std::vector<double> scale(x.cols);
  for (std::size_t j = 0; j < x.cols; ++j) scale[j] = std::tanh(beta[j]);
  Matrix out(x.rows, x.cols);
  kernels::active().scale_shift_rows(x.ptr(), scale.data(), gamma.data(), out.ptr(), x.rows,
                                     x.cols);
  return out;
}

std::vector<double> timestep_features(std::size_t t) {
  const std::size_t half = kTimeFeatures / 2;
  std::vector<double> out(kTimeFeatures);
  const double log_max = std::log(10000.0);
  for (std::size_t k = 0; k < half; ++k) {
    const double freq = std::exp(-log_max * static_cast<double>(k) / static_cast<double>(half));
    const double arg = static_cast<double>(t) * freq;
    out[k] = std::cos(arg);
    out[half + k] = std::sin(arg);
  }
  return out;
}

namespace {

void check_finite(const Matrix& m, const std::string& where) {
  for (double v : m.data) {
    if (!std::isfinite(v)) throw NumericalError("non-finite activation in " + where);
  }
}

BlockTrace block_forward(const Matrix& h, const BlockSlots& slots,
                         std::span<const double> cond_act, const ModelParameters& params) {
  const std::size_t n = h.rows;
  const std::size_t d = h.cols;
  const std::size_t heads = params.config.n_heads;
  const std::size_t dh = d / heads;
  const auto& k = kernels::active();

  BlockTrace b;
  b.input = h;
  b.control.assign(6 * d, 0.0);
  ops::linear_vector(cond_act, params, slots.adaln, b.control);
  const double* alpha1 = b.control.data();
  const double* beta1 = alpha1 + d;
  const double* gamma1 = beta1 + d;
  const double* alpha2 = gamma1 + d;
  const double* beta2 = alpha2 + d;
  const double* gamma2 = beta2 + d;

  b.tanh_beta1.resize(d);
  b.tanh_beta2.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    b.tanh_beta1[j] = std::tanh(beta1[j]);
    b.tanh_beta2[j] = std::tanh(beta2[j]);
  }

  // Attention branch.
  b.mod1 = Matrix(n, d);
  k.scale_shift_rows(h.ptr(), b.tanh_beta1.data(), gamma1, b.mod1.ptr(), n, d);
  ops::layer_norm_forward(b.mod1, params, slots.norm1, b.norm1_hat, b.norm1_out, b.norm1_rstd);
  b.query = ops::linear(b.norm1_out, params, slots.query);
  b.key = ops::linear(b.norm1_out, params, slots.key);
  b.value = ops::linear(b.norm1_out, params, slots.value);

  b.context = Matrix(n, d);
  b.probs.resize(heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix qh(n, dh), kh(n, dh), vh(n, dh), ch(n, dh);
  for (std::size_t head = 0; head < heads; ++head) {
    ops::copy_columns(b.query, head * dh, qh);
    ops::copy_columns(b.key, head * dh, kh);
    ops::copy_columns(b.value, head * dh, vh);
    Matrix& p = b.probs[head];
    p = Matrix(n, n);
    k.gemm_nt(qh.ptr(), kh.ptr(), p.ptr(), n, dh, n, false);
    for (double& s : p.data) s *= inv_sqrt;
    ops::softmax_rows(p);
    k.gemm_nn(p.ptr(), vh.ptr(), ch.ptr(), n, n, dh, false);
    ops::store_columns(ch, head * dh, b.context);
  }
  b.attn = ops::linear(b.context, params, slots.attn_out);

  b.mid = h;
  for (std::size_t i = 0; i < n; ++i) {
    double* row = b.mid.ptr() + i * d;
    const double* a = b.attn.ptr() + i * d;
    for (std::size_t j = 0; j < d; ++j) row[j] += alpha1[j] * a[j];
  }

  // Feed-forward branch.
  b.mod2 = Matrix(n, d);
  k.scale_shift_rows(b.mid.ptr(), b.tanh_beta2.data(), gamma2, b.mod2.ptr(), n, d);
  ops::layer_norm_forward(b.mod2, params, slots.norm2, b.norm2_hat, b.norm2_out, b.norm2_rstd);
  b.ffn_pre = ops::linear(b.norm2_out, params, slots.ffn_in);
  ops::silu_into(b.ffn_pre, b.ffn_act);
  b.ffn_out = ops::linear(b.ffn_act, params, slots.ffn_out);
  return b;
}

}  // namespace

ForwardTrace encoder_forward(const Matrix& h0, std::size_t t, const ModelParameters& params,
                             bool record) {
  const ModelConfig& cfg = params.config;
  const std::size_t d = cfg.hidden_dim;
  if (h0.rows != cfg.n_regions || h0.cols != d) {
    throw std::invalid_argument("encoder_forward: h0 must be N x D");
  }
  if (t < 1 || t > cfg.steps) {
    throw std::out_of_range("encoder_forward: step " + std::to_string(t) + " outside [1, T]");
  }
  check_finite(h0, "input embedding");

  ForwardTrace tr;
  tr.t = t;
  tr.recorded = record;
  tr.h0 = h0;
  tr.time_features = timestep_features(t);
  tr.time_pre.assign(d, 0.0);
  ops::linear_vector(tr.time_features, params, params.layout.time_in, tr.time_pre);
  tr.time_act = tr.time_pre;
  for (double& v : tr.time_act) v = ops::silu(v);
  tr.cond.assign(d, 0.0);
  ops::linear_vector(tr.time_act, params, params.layout.time_out, tr.cond);
  tr.cond_act = tr.cond;
  for (double& v : tr.cond_act) v = ops::silu(v);

  Matrix h = h0;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    BlockTrace b = block_forward(h, params.layout.blocks[l], tr.cond_act, params);
    const double* alpha2 = b.control.data() + 3 * d;
    h = b.mid;
    for (std::size_t i = 0; i < h.rows; ++i) {
      double* row = h.ptr() + i * d;
      const double* f = b.ffn_out.ptr() + i * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += alpha2[j] * f[j];
    }
    check_finite(h, "layer " + std::to_string(l + 1));
    if (l + 1 == cfg.align_tap()) tr.h_mid = h;
    if (record) tr.blocks.push_back(std::move(b));
  }
  tr.h_last = std::move(h);
  return tr;
}

void heads_forward(ForwardTrace& tr, const ModelParameters& params) {
  const ModelConfig& cfg = params.config;
  const ParameterLayout& lay = params.layout;
  const std::size_t n = cfg.n_regions;
  const std::size_t d = cfg.hidden_dim;

  tr.out_control.assign(2 * d, 0.0);
  ops::linear_vector(tr.cond_act, params, lay.out_adaln, tr.out_control);
  tr.tanh_beta_out.resize(d);
  for (std::size_t j = 0; j < d; ++j) tr.tanh_beta_out[j] = std::tanh(tr.out_control[j]);
  tr.out_mod = Matrix(n, d);
  kernels::active().scale_shift_rows(tr.h_last.ptr(), tr.tanh_beta_out.data(),
                                     tr.out_control.data() + d, tr.out_mod.ptr(), n, d);
  ops::layer_norm_forward(tr.out_mod, params, lay.out_norm, tr.out_hat, tr.h_out, tr.out_rstd);

  const Matrix eps = ops::linear(tr.h_out, params, lay.noise_head);
  const Matrix logits = ops::linear(tr.h_out, params, lay.mask_head);
  tr.eps_hat = eps.data;
  tr.mask_logits = logits.data;

  if (lay.align_hidden) {
    if (tr.h_mid.rows != n) throw std::logic_error("heads_forward: alignment tap missing");
    tr.align_pre = ops::linear(tr.h_mid, params, *lay.align_hidden);
    tr.align_act = tr.align_pre;
    for (double& v : tr.align_act.data) v = ops::silu(v);
    tr.e_hat = ops::linear(tr.align_act, params, *lay.align_out);
  }
  for (double v : tr.eps_hat) {
    if (!std::isfinite(v)) throw NumericalError("non-finite noise prediction");
  }
}

ForwardTrace model_forward(std::span<const double> p_obs, std::span<const double> p_noisy,
                           const MaskVector& mask, std::size_t t,
                           const ModelParameters& params, bool record) {
  ForwardTrace tr = encoder_forward(embed_input(p_obs, p_noisy, mask, params), t, params, record);
  heads_forward(tr, params);
  return tr;
}

}  // namespace uicl
