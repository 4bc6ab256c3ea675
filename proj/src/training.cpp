#include "uicl/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "uicl/errors.hpp"
#include "uicl/kernels.hpp"

namespace uicl {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lambda_mask >= 0.0) || !(lambda_align >= 0.0)) {
    throw ConfigError("loss weights lambda_mask and lambda_align must be >= 0");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("adam betas must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam eps must be positive");
  if (val_every < 1) throw ConfigError("val_every must be >= 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ConfigError("val_fraction must be in [0, 1)");
  }
  if (!(max_grad_norm >= 0.0)) throw ConfigError("max_grad_norm must be >= 0");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

NoiseSchedule schedule_for(const ModelConfig& model, const TrainConfig& train) {
  BetaRange range = default_beta_range(model.steps);
  if (train.beta_start > 0.0) range.start = train.beta_start;
  if (train.beta_end > 0.0) range.end = train.beta_end;
  return build_schedule(model.steps, range.start, range.end);
}

double noise_loss(std::span<const double> eps_true, std::span<const double> eps_hat,
                  const MaskVector& mask) {
  if (eps_true.size() != mask.size() || eps_hat.size() != mask.size()) {
    throw std::invalid_argument("noise_loss: length mismatch");
  }
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask.masked(i)) continue;
    const double e = eps_true[i] - eps_hat[i];
    total += e * e;
    ++count;
  }
  if (count == 0) throw std::invalid_argument("noise_loss: mask has no masked positions");
  return total / static_cast<double>(count);
}

void noise_loss_grad(std::span<const double> eps_true, std::span<const double> eps_hat,
                     const MaskVector& mask, double weight, std::span<double> grad) {
  const std::size_t count = mask.masked_count();
  if (count == 0) throw std::invalid_argument("noise_loss: mask has no masked positions");
  const double scale = 2.0 * weight / static_cast<double>(count);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    grad[i] = mask.masked(i) ? scale * (eps_hat[i] - eps_true[i]) : 0.0;
  }
}

namespace {

double clamped_sigmoid(double logit, bool& clamped) {
  const double p = 1.0 / (1.0 + std::exp(-logit));
  clamped = p < kProbabilityClamp || p > 1.0 - kProbabilityClamp;
  return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
}

}  // namespace

double mask_loss(std::span<const double> logits, const MaskVector& mask) {
  if (logits.size() != mask.size()) throw std::invalid_argument("mask_loss: length mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    bool clamped = false;
    const double p = clamped_sigmoid(logits[i], clamped);
    total -= mask.masked(i) ? std::log(p) : std::log(1.0 - p);
  }
  return total / static_cast<double>(mask.size());
}

void mask_loss_grad(std::span<const double> logits, const MaskVector& mask, double weight,
                    std::span<double> grad) {
  const double scale = weight / static_cast<double>(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    bool clamped = false;
    const double p = clamped_sigmoid(logits[i], clamped);
    grad[i] = clamped ? 0.0 : scale * (p - (mask.masked(i) ? 1.0 : 0.0));
  }
}

double align_loss(const Matrix& e_hat, const ReferenceEmbeddings& ref) {
  const Matrix& e = ref.matrix;
  if (e_hat.rows != e.rows || e_hat.cols != e.cols) {
    throw std::invalid_argument("align_loss: e_hat and reference shapes differ");
  }
  const auto& k = kernels::active();
  double total = 0.0;
  for (std::size_t i = 0; i < e.rows; ++i) {
    const double* a = e_hat.ptr() + i * e.cols;
    const double* r = e.ptr() + i * e.cols;
    const double na = std::sqrt(k.dot(a, a, e.cols));
    const double nr = std::sqrt(k.dot(r, r, e.cols));
    const double cosine = na < 1e-12 ? 0.0 : k.dot(a, r, e.cols) / (na * nr);
    total += 1.0 - cosine;
  }
  return total / static_cast<double>(e.rows);
}

void align_loss_grad(const Matrix& e_hat, const ReferenceEmbeddings& ref, double weight,
                     Matrix& grad) {
  const Matrix& e = ref.matrix;
  if (e_hat.rows != e.rows || e_hat.cols != e.cols) {
    throw std::invalid_argument("align_loss: e_hat and reference shapes differ");
  }
  const auto& k = kernels::active();
  grad = Matrix(e.rows, e.cols);
  const double scale = weight / static_cast<double>(e.rows);
  for (std::size_t i = 0; i < e.rows; ++i) {
    const double* a = e_hat.ptr() + i * e.cols;
    const double* r = e.ptr() + i * e.cols;
    const double na = std::sqrt(k.dot(a, a, e.cols));
    if (na < 1e-12) continue;
    const double nr = std::sqrt(k.dot(r, r, e.cols));
    const double cosine = k.dot(a, r, e.cols) / (na * nr);
    double* g = grad.ptr() + i * e.cols;
    for (std::size_t j = 0; j < e.cols; ++j) {
      g[j] = -scale * (r[j] / (na * nr) - cosine * a[j] / (na * na));
    }
  }
}

void adam_update(std::span<double> params, std::span<const double> grad, AdamState& state,
                 const TrainConfig& config) {
  if (params.size() != grad.size() || state.m.size() != params.size()) {
    throw std::invalid_argument("adam_update: size mismatch");
  }
  ++state.step;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * grad[i];
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.adam_eps);
  }
}

namespace {

struct ExampleDraw {
  MaskVector mask;
  std::size_t t = 1;
  std::vector<double> eps;
};

struct ExampleResult {
  double total = 0.0;
  double noise = 0.0;
  double mask = 0.0;
  double align = 0.0;
};

ExampleResult run_example(std::span<const double> profile, const ExampleDraw& draw,
                          const ModelParameters& params, const TrainConfig& config,
                          const NoiseSchedule& schedule, const ReferenceEmbeddings* ref,
                          ParameterGradients& grad) {
  const std::size_t n = profile.size();
  const std::vector<double> noisy = forward_diffuse(profile, draw.t, draw.eps, schedule);
  const ForwardTrace tr = model_forward(profile, noisy, draw.mask, draw.t, params, true);

  ExampleResult r;
  r.noise = noise_loss(draw.eps, tr.eps_hat, draw.mask);
  r.mask = mask_loss(tr.mask_logits, draw.mask);
  OutputGradients up;
  up.eps_hat.assign(n, 0.0);
  up.mask_logits.assign(n, 0.0);
  noise_loss_grad(draw.eps, tr.eps_hat, draw.mask, 1.0, up.eps_hat);
  mask_loss_grad(tr.mask_logits, draw.mask, config.lambda_mask, up.mask_logits);
  const bool use_align = ref != nullptr && config.lambda_align > 0.0;
  if (use_align) {
    r.align = align_loss(tr.e_hat, *ref);
    align_loss_grad(tr.e_hat, *ref, config.lambda_align, up.e_hat);
  }
  r.total = r.noise + config.lambda_mask * r.mask + config.lambda_align * r.align;
  if (!std::isfinite(r.total)) {
    std::ostringstream msg;
    msg << "non-finite loss (noise=" << r.noise << ", mask=" << r.mask << ", align=" << r.align
        << ", t=" << draw.t << ")";
    throw NumericalError(msg.str());
  }
  backward_into(tr, up, profile, noisy, draw.mask, params, grad);
  return r;
}

// Runs fn(i) for i in [0, count) with up to `threads` concurrent workers.
template <typename Fn>
void run_parallel(std::size_t count, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(count);
  for (std::size_t start = 0; start < count; start += threads) {
    const std::size_t end = std::min(count, start + threads);
    workers.clear();
    for (std::size_t i = start + 1; i < end; ++i) {
      workers.emplace_back([&, i] {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    }
    try {
      fn(start);
    } catch (...) {
      errors[start] = std::current_exception();
    }
    for (auto& w : workers) w.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

LossReport train_step(std::span<const std::span<const double>> batch, ModelParameters& params,
                      AdamState& opt, const TrainConfig& config, const NoiseSchedule& schedule,
                      const ReferenceEmbeddings* ref, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const std::size_t n = params.config.n_regions;
  if (ref != nullptr && (ref->matrix.rows != n || ref->matrix.cols != params.config.ref_dim)) {
    throw ConfigError("reference embeddings must be N x ref_dim");
  }
  if (opt.m.size() != params.values.size()) opt = AdamState(params.values.size());

  std::vector<ExampleDraw> draws(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch[b].size() != n) throw DataError("train_step: profile length differs from N");
    ExampleDraw& d = draws[b];
    d.mask = make_mask(n, sample_mask_ratio(rng), rng);
    d.t = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(schedule.steps)));
    d.eps.resize(n);
    for (double& e : d.eps) e = rng.normal();
  }

  std::vector<ExampleResult> results(batch.size());
  const std::size_t wave = std::max<std::size_t>(1, config.threads);
  // One gradient buffer per worker slot, reused across waves.
  std::vector<ParameterGradients> slot_grads(std::min(wave, batch.size()));
  std::vector<double> grad(params.values.size(), 0.0);
  LossReport report;
  // Results are reduced in batch order after each wave so the sum does not
  // depend on the thread count.
  for (std::size_t start = 0; start < batch.size(); start += wave) {
    const std::size_t end = std::min(batch.size(), start + wave);
    run_parallel(end - start, wave, [&](std::size_t i) {
      results[start + i] = run_example(batch[start + i], draws[start + i], params, config,
                                       schedule, ref, slot_grads[i]);
    });
    for (std::size_t b = start; b < end; ++b) {
      const ExampleResult& r = results[b];
      report.total += r.total;
      report.noise += r.noise;
      report.mask += r.mask;
      report.align += r.align;
      kernels::active().axpy(1.0, slot_grads[b - start].values.data(), grad.data(), grad.size());
    }
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  report.total *= inv_b;
  report.noise *= inv_b;
  report.mask *= inv_b;
  report.align *= inv_b;
  for (double& g : grad) g *= inv_b;

  if (config.max_grad_norm > 0.0) {
    double norm2 = 0.0;
    for (double g : grad) norm2 += g * g;
    const double norm = std::sqrt(norm2);
    if (norm > config.max_grad_norm) {
      const double s = config.max_grad_norm / norm;
      for (double& g : grad) g *= s;
    }
  }
  adam_update(params.values, grad, opt, config);
  report.step = opt.step;
  return report;
}

double validation_noise_loss(std::span<const std::span<const double>> profiles,
                             const ModelParameters& params, const NoiseSchedule& schedule,
                             std::uint64_t seed) {
  if (profiles.empty()) throw std::invalid_argument("validation needs at least one profile");
  const std::size_t steps = schedule.steps;
  const std::size_t grid[3] = {std::max<std::size_t>(1, steps / 4),
                               std::max<std::size_t>(1, steps / 2),
                               std::max<std::size_t>(1, 3 * steps / 4)};
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t j = 0; j < profiles.size(); ++j) {
    const auto profile = profiles[j];
    Rng mask_rng(seed, "val-mask", j);
    const MaskVector mask = make_mask(profile.size(), 0.5, mask_rng);
    for (std::size_t g = 0; g < 3; ++g) {
      Rng noise_rng(seed, "val-noise", 3 * j + g);
      std::vector<double> eps(profile.size());
      for (double& e : eps) e = noise_rng.normal();
      const auto noisy = forward_diffuse(profile, grid[g], eps, schedule);
      const ForwardTrace tr = model_forward(profile, noisy, mask, grid[g], params, false);
      total += noise_loss(eps, tr.eps_hat, mask);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

void write_loss_curve(const std::filesystem::path& path, const std::vector<LossReport>& curve) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "epoch,step,total,noise,mask,align\n";
  for (const auto& r : curve) {
    out << r.epoch << ',' << r.step << ',' << r.total << ',' << r.noise << ',' << r.mask << ','
        << r.align << '\n';
  }
}

TrainResult train(const ProfileMatrix& matrix, const ModelConfig& model,
                  const TrainConfig& config, const ReferenceEmbeddings* ref,
                  const std::filesystem::path& out_dir) {
  config.validate();
  model.validate();
  if (matrix.regions.count != model.n_regions) {
    throw ConfigError("profile matrix has " + std::to_string(matrix.regions.count) +
                      " regions but the model expects " + std::to_string(model.n_regions));
  }
  if (matrix.profiles.empty()) throw DataError("training needs at least one profile");
  if (ref != nullptr && (ref->matrix.rows != model.n_regions || ref->matrix.cols != model.ref_dim)) {
    throw ConfigError("reference embeddings must be N x ref_dim");
  }
  const NoiseSchedule schedule = schedule_for(model, config);

  // Hold out a fixed subset of profiles for model selection.
  std::vector<std::size_t> order(matrix.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(config.seed, "val-profiles");
  std::shuffle(order.begin(), order.end(), split_rng.engine());
  std::size_t n_val = 0;
  if (config.val_fraction > 0.0 && matrix.size() >= 2) {
    n_val = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(config.val_fraction * static_cast<double>(matrix.size()))),
        1, matrix.size() - 1);
  }
  std::vector<std::span<const double>> val_profiles, train_profiles;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& values = matrix.profiles[order[i]].values;
    (i < n_val ? val_profiles : train_profiles).emplace_back(values);
  }

  TrainResult result{init_parameters(model, derive_seed(config.seed, "model-init")), {}, {}, {}, 0};
  ModelParameters& params = result.final_params;
  result.best_params = params;
  AdamState opt(params.values.size());
  double best_val = std::numeric_limits<double>::infinity();
  const std::uint64_t val_seed = derive_seed(config.seed, "validation");

  std::vector<std::size_t> perm(train_profiles.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::vector<std::span<const double>> batch;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng shuffle_rng(config.seed, "epoch-shuffle", epoch);
    std::shuffle(perm.begin(), perm.end(), shuffle_rng.engine());
    LossReport epoch_report;
    epoch_report.epoch = epoch;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < perm.size(); start += config.batch_size) {
      const std::size_t end = std::min(perm.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(train_profiles[perm[i]]);
      Rng step_rng(config.seed, "train-step", opt.step);
      try {
        const LossReport r = train_step(batch, params, opt, config, schedule, ref, step_rng);
        const double w = static_cast<double>(batch.size());
        epoch_report.total += w * r.total;
        epoch_report.noise += w * r.noise;
        epoch_report.mask += w * r.mask;
        epoch_report.align += w * r.align;
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(opt.step + 1) + ": " + e.what());
      }
      seen += batch.size();
    }
    const double inv = 1.0 / static_cast<double>(seen);
    epoch_report.total *= inv;
    epoch_report.noise *= inv;
    epoch_report.mask *= inv;
    epoch_report.align *= inv;
    epoch_report.step = opt.step;
    result.curve.push_back(epoch_report);

    if (!val_profiles.empty() && (epoch % config.val_every == 0 || epoch == config.epochs)) {
      const double v = validation_noise_loss(val_profiles, params, schedule, val_seed);
      result.validation.emplace_back(epoch, v);
      if (v < best_val) {
        best_val = v;
        result.best_params = params;
        result.best_epoch = epoch;
      }
    }
  }
  if (val_profiles.empty()) {
    result.best_params = params;
    result.best_epoch = config.epochs;
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    save_checkpoint(result.final_params, out_dir / "final.ckpt");
    save_checkpoint(result.best_params, out_dir / "best.ckpt");
    write_loss_curve(out_dir / "loss_curve.csv", result.curve);
    std::ofstream val(out_dir / "val_curve.csv");
    val.precision(17);
    val << "epoch,val_noise\n";
    for (const auto& [e, v] : result.validation) val << e << ',' << v << '\n';
  }
  return result;
}

}  // namespace uicl
