#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dit_ops.hpp"
#include "uicl/kernels.hpp"
#include "uicl/masked_dit.hpp"

namespace uicl {
namespace {

// out = x * tanh(beta) + gamma. Adds dx into `dx`, writes d(beta) and
// d(gamma) into the control-gradient slices.
void modulate_backward(const Matrix& x, const std::vector<double>& tanh_beta,
                       const Matrix& dout, Matrix& dx, double* dbeta, double* dgamma) {
  const std::size_t n = x.rows;
  const std::size_t d = x.cols;
  const auto& k = kernels::active();
  std::vector<double> corr(d, 0.0);
  k.column_dots(dout.ptr(), x.ptr(), corr.data(), n, d);
  for (std::size_t j = 0; j < d; ++j) dbeta[j] += corr[j] * (1.0 - tanh_beta[j] * tanh_beta[j]);
  k.column_sums(dout.ptr(), dgamma, n, d);
  for (std::size_t i = 0; i < n; ++i) {
    double* dr = dx.ptr() + i * d;
    const double* gr = dout.ptr() + i * d;
    for (std::size_t j = 0; j < d; ++j) dr[j] += gr[j] * tanh_beta[j];
  }
}

// Backpropagates through one block. `dh` holds d(output) on entry and
// d(input) on exit; control gradients feed d(cond_act).
void block_backward(const BlockTrace& b, const BlockSlots& slots, const ModelParameters& params,
                    std::span<const double> cond_act, Matrix& dh, std::vector<double>& dcond_act,
                    ParameterGradients& g) {
  const std::size_t n = b.input.rows;
  const std::size_t d = b.input.cols;
  const std::size_t heads = params.config.n_heads;
  const std::size_t dh_width = d / heads;
  const auto& k = kernels::active();
  const double* alpha1 = b.control.data();
  const double* alpha2 = b.control.data() + 3 * d;

  std::vector<double> dcontrol(6 * d, 0.0);
  double* dalpha1 = dcontrol.data();
  double* dbeta1 = dalpha1 + d;
  double* dgamma1 = dbeta1 + d;
  double* dalpha2 = dgamma1 + d;
  double* dbeta2 = dalpha2 + d;
  double* dgamma2 = dbeta2 + d;

  // H' = mid + alpha2 * ffn_out
  Matrix dmid = dh;
  Matrix dffn(n, d);
  k.column_dots(dh.ptr(), b.ffn_out.ptr(), dalpha2, n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) dffn(i, j) = dh(i, j) * alpha2[j];
  }
  Matrix dact(n, slots.ffn_out.in);
  ops::linear_backward(b.ffn_act.ptr(), dffn.ptr(), n, params, slots.ffn_out, g, dact.ptr());
  ops::scale_by_silu_grad(b.ffn_pre, dact);
  Matrix dnorm2(n, d);
  ops::linear_backward(b.norm2_out.ptr(), dact.ptr(), n, params, slots.ffn_in, g, dnorm2.ptr());
  const Matrix dmod2 = ops::layer_norm_backward(b.norm2_hat, b.norm2_rstd, dnorm2, params,
                                                slots.norm2, g);
  modulate_backward(b.mid, b.tanh_beta2, dmod2, dmid, dbeta2, dgamma2);

  // mid = input + alpha1 * attn
  dh = dmid;
  Matrix dattn(n, d);
  k.column_dots(dmid.ptr(), b.attn.ptr(), dalpha1, n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) dattn(i, j) = dmid(i, j) * alpha1[j];
  }
  Matrix dcontext(n, d);
  ops::linear_backward(b.context.ptr(), dattn.ptr(), n, params, slots.attn_out, g,
                       dcontext.ptr());

  Matrix dq(n, d), dk(n, d), dv(n, d);
  Matrix qh(n, dh_width), kh(n, dh_width), vh(n, dh_width), dch(n, dh_width);
  Matrix dqh(n, dh_width), dkh(n, dh_width), dvh(n, dh_width);
  Matrix dp(n, n);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh_width));
  for (std::size_t head = 0; head < heads; ++head) {
    const Matrix& p = b.probs[head];
    ops::copy_columns(b.query, head * dh_width, qh);
    ops::copy_columns(b.key, head * dh_width, kh);
    ops::copy_columns(b.value, head * dh_width, vh);
    ops::copy_columns(dcontext, head * dh_width, dch);

    k.gemm_nt(dch.ptr(), vh.ptr(), dp.ptr(), n, dh_width, n, false);
    std::fill(dvh.data.begin(), dvh.data.end(), 0.0);
    k.gemm_tn(p.ptr(), dch.ptr(), dvh.ptr(), n, n, dh_width);
    // Softmax Jacobian, then the 1/sqrt(d) score scale.
    for (std::size_t i = 0; i < n; ++i) {
      double* dr = dp.ptr() + i * n;
      const double* pr = p.ptr() + i * n;
      const double row_dot = k.dot(dr, pr, n);
      for (std::size_t j = 0; j < n; ++j) dr[j] = pr[j] * (dr[j] - row_dot) * inv_sqrt;
    }
    k.gemm_nn(dp.ptr(), kh.ptr(), dqh.ptr(), n, n, dh_width, false);
    std::fill(dkh.data.begin(), dkh.data.end(), 0.0);
    k.gemm_tn(dp.ptr(), qh.ptr(), dkh.ptr(), n, n, dh_width);

    ops::store_columns(dqh, head * dh_width, dq);
    ops::store_columns(dkh, head * dh_width, dk);
    ops::store_columns(dvh, head * dh_width, dv);
  }

  Matrix dnorm1(n, d);
  Matrix tmp(n, d);
  ops::linear_backward(b.norm1_out.ptr(), dq.ptr(), n, params, slots.query, g, dnorm1.ptr());
  ops::linear_backward(b.norm1_out.ptr(), dk.ptr(), n, params, slots.key, g, tmp.ptr());
  k.axpy(1.0, tmp.ptr(), dnorm1.ptr(), dnorm1.size());
  ops::linear_backward(b.norm1_out.ptr(), dv.ptr(), n, params, slots.value, g, tmp.ptr());
  k.axpy(1.0, tmp.ptr(), dnorm1.ptr(), dnorm1.size());
  const Matrix dmod1 = ops::layer_norm_backward(b.norm1_hat, b.norm1_rstd, dnorm1, params,
                                                slots.norm1, g);
  modulate_backward(b.input, b.tanh_beta1, dmod1, dh, dbeta1, dgamma1);

  std::vector<double> dc(slots.adaln.in, 0.0);
  ops::linear_backward(cond_act.data(), dcontrol.data(), 1, params, slots.adaln, g, dc.data());
  k.axpy(1.0, dc.data(), dcond_act.data(), dc.size());
}

}  // namespace

ParameterGradients backward(const ForwardTrace& tr, const OutputGradients& up,
                            std::span<const double> p_obs, std::span<const double> p_noisy,
                            const MaskVector& mask, const ModelParameters& params) {
  ParameterGradients g;
  backward_into(tr, up, p_obs, p_noisy, mask, params, g);
  return g;
}

void backward_into(const ForwardTrace& tr, const OutputGradients& up,
                   std::span<const double> p_obs, std::span<const double> p_noisy,
                   const MaskVector& mask, const ModelParameters& params,
                   ParameterGradients& g) {
  const ModelConfig& cfg = params.config;
  const ParameterLayout& lay = params.layout;
  const std::size_t n = cfg.n_regions;
  const std::size_t d = cfg.hidden_dim;
  if (!tr.recorded || tr.blocks.size() != cfg.n_layers) {
    throw std::invalid_argument("backward needs a trace recorded with record=true");
  }
  if (tr.h0.rows != n || tr.h0.cols != d || tr.eps_hat.size() != n) {
    throw std::invalid_argument("backward: trace shape does not match the parameters");
  }
  if (p_obs.size() != n || p_noisy.size() != n || mask.size() != n) {
    throw std::invalid_argument("backward: inputs must have one entry per region");
  }
  const auto& k = kernels::active();
  g.values.resize(lay.total);
  std::fill(g.values.begin(), g.values.end(), 0.0);
  std::vector<double> dcond_act(d, 0.0);

  // Prediction heads.
  Matrix dh_out(n, d);
  if (!up.eps_hat.empty()) {
    ops::linear_backward(tr.h_out.ptr(), up.eps_hat.data(), n, params, lay.noise_head, g,
                         dh_out.ptr());
  }
  if (!up.mask_logits.empty()) {
    Matrix tmp(n, d);
    ops::linear_backward(tr.h_out.ptr(), up.mask_logits.data(), n, params, lay.mask_head, g,
                         tmp.ptr());
    k.axpy(1.0, tmp.ptr(), dh_out.ptr(), tmp.size());
  }
  const Matrix dout_mod = ops::layer_norm_backward(tr.out_hat, tr.out_rstd, dh_out, params,
                                                   lay.out_norm, g);
  Matrix dh(n, d);
  std::vector<double> dout_control(2 * d, 0.0);
  modulate_backward(tr.h_last, tr.tanh_beta_out, dout_mod, dh, dout_control.data(),
                    dout_control.data() + d);
  {
    std::vector<double> dc(d, 0.0);
    ops::linear_backward(tr.cond_act.data(), dout_control.data(), 1, params, lay.out_adaln, g,
                         dc.data());
    k.axpy(1.0, dc.data(), dcond_act.data(), d);
  }

  // Alignment MLP on the tap activations.
  Matrix dh_mid;
  if (lay.align_hidden && up.e_hat.size() > 0) {
    if (up.e_hat.rows != n || up.e_hat.cols != cfg.ref_dim) {
      throw std::invalid_argument("backward: e_hat gradient must be N x D'");
    }
    Matrix dact(n, d);
    ops::linear_backward(tr.align_act.ptr(), up.e_hat.ptr(), n, params, *lay.align_out, g,
                         dact.ptr());
    for (std::size_t i = 0; i < dact.size(); ++i) {
      dact.data[i] *= ops::silu_grad(tr.align_pre.data[i]);
    }
    dh_mid = Matrix(n, d);
    ops::linear_backward(tr.h_mid.ptr(), dact.ptr(), n, params, *lay.align_hidden, g,
                         dh_mid.ptr());
  }

  for (std::size_t l = cfg.n_layers; l-- > 0;) {
    if (l + 1 == cfg.align_tap() && dh_mid.rows == n) k.axpy(1.0, dh_mid.ptr(), dh.ptr(), dh.size());
    block_backward(tr.blocks[l], lay.blocks[l], params, tr.cond_act, dh, dcond_act, g);
  }

  // Timestep MLP.
  std::vector<double> dcond(d);
  for (std::size_t j = 0; j < d; ++j) dcond[j] = dcond_act[j] * ops::silu_grad(tr.cond[j]);
  std::vector<double> dtime_act(d, 0.0);
  ops::linear_backward(tr.time_act.data(), dcond.data(), 1, params, lay.time_out, g,
                       dtime_act.data());
  for (std::size_t j = 0; j < d; ++j) dtime_act[j] *= ops::silu_grad(tr.time_pre[j]);
  ops::linear_backward(tr.time_features.data(), dtime_act.data(), 1, params, lay.time_in, g,
                       nullptr);

  // Input embedding.
  double* dregion = g.values.data() + lay.region_embed;
  k.axpy(1.0, dh.ptr(), dregion, n * d);
  double* dvalue = g.values.data() + lay.value_vec;
  for (std::size_t i = 0; i < n; ++i) {
    const double value = mask.masked(i) ? p_noisy[i] : p_obs[i];
    k.axpy(value, dh.ptr() + i * d, dvalue, d);
  }
}

}  // namespace uicl
