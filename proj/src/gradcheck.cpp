#include "uicl/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "uicl/diffusion.hpp"
#include "uicl/errors.hpp"
#include "uicl/rng.hpp"
#include "uicl/training.hpp"

namespace uicl {
namespace {

struct Fixture {
  std::vector<double> profile;
  std::vector<double> noisy;
  std::vector<double> eps;
  MaskVector mask;
  std::size_t t = 1;
  ReferenceEmbeddings ref;
  TrainConfig weights;
};

double objective(const Fixture& f, const ModelParameters& params, ForwardTrace* keep) {
  ForwardTrace tr = model_forward(f.profile, f.noisy, f.mask, f.t, params, keep != nullptr);
  double total = noise_loss(f.eps, tr.eps_hat, f.mask) +
                 f.weights.lambda_mask * mask_loss(tr.mask_logits, f.mask);
  if (params.config.ref_dim > 0) total += f.weights.lambda_align * align_loss(tr.e_hat, f.ref);
  if (keep != nullptr) *keep = std::move(tr);
  return total;
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  options.model.validate();
  if (!(options.step > 0.0)) throw ConfigError("gradcheck step must be positive");
  const std::size_t n = options.model.n_regions;
  ModelParameters params = init_parameters_random(options.model, options.seed, options.init_stddev);
  const NoiseSchedule schedule = build_schedule(options.model.steps,
                                                default_beta_range(options.model.steps).start,
                                                default_beta_range(options.model.steps).end);

  Rng rng(options.seed, "gradcheck");
  Fixture f;
  f.profile.resize(n);
  for (double& v : f.profile) v = rng.normal();
  f.mask = make_mask(n, 0.5, rng);
  f.t = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(schedule.steps)));
  f.eps.resize(n);
  for (double& v : f.eps) v = rng.normal();
  f.noisy = forward_diffuse(f.profile, f.t, f.eps, schedule);
  if (options.model.ref_dim > 0) {
    f.ref.matrix = Matrix(n, options.model.ref_dim);
    for (double& v : f.ref.matrix.data) v = rng.normal();
    f.ref.source = "gradcheck";
  }

  ForwardTrace tr;
  objective(f, params, &tr);
  OutputGradients up;
  up.eps_hat.assign(n, 0.0);
  up.mask_logits.assign(n, 0.0);
  noise_loss_grad(f.eps, tr.eps_hat, f.mask, 1.0, up.eps_hat);
  mask_loss_grad(tr.mask_logits, f.mask, f.weights.lambda_mask, up.mask_logits);
  if (options.model.ref_dim > 0) {
    align_loss_grad(tr.e_hat, f.ref, f.weights.lambda_align, up.e_hat);
  }
  ParameterGradients analytic = backward(tr, up, f.profile, f.noisy, f.mask, params);

  GradcheckReport report;
  report.passed = true;
  for (const auto& group : params.layout.groups()) {
    GradcheckGroup g{group, 0, 0.0, 0.0};
    for (const auto& t : params.layout.tensors) {
      if (t.group != group) continue;
      for (std::size_t i = t.offset; i < t.offset + t.size(); ++i) {
        if (group == options.corrupt_group) analytic.values[i] *= 1.5;
        const double saved = params.values[i];
        params.values[i] = saved + options.step;
        const double up_loss = objective(f, params, nullptr);
        params.values[i] = saved - options.step;
        const double down_loss = objective(f, params, nullptr);
        params.values[i] = saved;
        const double fd = (up_loss - down_loss) / (2.0 * options.step);
        const double a = analytic.values[i];
        const double abs_err = std::abs(a - fd);
        const double denom = std::max({std::abs(a), std::abs(fd), options.denominator_floor});
        g.max_abs_error = std::max(g.max_abs_error, abs_err);
        g.max_rel_error = std::max(g.max_rel_error, abs_err / denom);
        ++g.count;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, g.max_rel_error);
    report.groups.push_back(std::move(g));
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace uicl
