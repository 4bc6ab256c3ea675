#include "uicl/inference.hpp"

#include <cmath>
#include <fstream>
#include <thread>

#include "json.hpp"
#include "uicl/errors.hpp"

namespace uicl {
namespace {

using nlohmann::json;

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace

void InferenceRequest::validate(std::size_t n_regions) const {
  if (observed_values.size() != n_regions || mask.size() != n_regions) {
    throw ConfigError("inference request must have one value and one mask bit per region");
  }
  const std::size_t unknown = mask.masked_count();
  if (unknown == 0) throw ConfigError("inference request has no unknown regions");
  if (unknown == n_regions) throw ConfigError("inference request needs at least one observed region");
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  for (std::size_t i = 0; i < n_regions; ++i) {
    if (!mask.masked(i) && !std::isfinite(observed_values[i])) {
      throw DataError("observed value at region " + std::to_string(i) + " is not finite");
    }
  }
}

std::vector<double> init_noisy_profile(const InferenceRequest& request, Rng& rng) {
  std::vector<double> p = request.observed_values;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (request.mask.masked(i)) p[i] = rng.normal();
  }
  return p;
}

std::vector<double> reverse_chain(const InferenceRequest& request, const ModelParameters& params,
                                  const NoiseSchedule& schedule, Rng& rng) {
  const std::size_t n = params.config.n_regions;
  request.validate(n);
  if (schedule.steps != params.config.steps) {
    throw DataError("schedule has " + std::to_string(schedule.steps) +
                    " steps but the checkpoint was trained with " +
                    std::to_string(params.config.steps));
  }
  std::vector<double> p = init_noisy_profile(request, rng);
  for (std::size_t t = schedule.steps; t >= 1; --t) {
    const ForwardTrace tr = model_forward(request.observed_values, p, request.mask, t, params, false);
    for (std::size_t i = 0; i < n; ++i) {
      if (!request.mask.masked(i)) {
        p[i] = request.observed_values[i];
        continue;
      }
      const double z = t > 1 ? rng.normal() : 0.0;
      p[i] = reverse_step_value(p[i], tr.eps_hat[i], t, z, schedule);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) throw NumericalError("reverse chain produced a non-finite value");
  }
  return p;
}

PredictionEnsemble predict(const InferenceRequest& request, const ModelParameters& params,
                           const NoiseSchedule& schedule, std::size_t threads) {
  const std::size_t n = params.config.n_regions;
  request.validate(n);
  const std::size_t k_rounds = request.rounds;
  PredictionEnsemble out;
  out.samples = Matrix(k_rounds, n);

  auto run_chain = [&](std::size_t k) {
    Rng rng(request.seed, "chain", k);
    const auto sample = reverse_chain(request, params, schedule, rng);
    std::copy(sample.begin(), sample.end(), out.samples.row(k).begin());
  };
  if (threads <= 1) {
    for (std::size_t k = 0; k < k_rounds; ++k) run_chain(k);
  } else {
    std::vector<std::exception_ptr> errors(k_rounds);
    for (std::size_t start = 0; start < k_rounds; start += threads) {
      std::vector<std::thread> workers;
      for (std::size_t k = start; k < std::min(k_rounds, start + threads); ++k) {
        workers.emplace_back([&, k] {
          try {
            run_chain(k);
          } catch (...) {
            errors[k] = std::current_exception();
          }
        });
      }
      for (auto& w : workers) w.join();
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  out.mean_prediction.assign(n, 0.0);
  out.per_region_std.assign(n, 0.0);
  const double inv_k = 1.0 / static_cast<double>(k_rounds);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t k = 0; k < k_rounds; ++k) mean += out.samples(k, i);
    mean *= inv_k;
    double var = 0.0;
    for (std::size_t k = 0; k < k_rounds; ++k) {
      const double d = out.samples(k, i) - mean;
      var += d * d;
    }
    out.mean_prediction[i] = mean;
    out.per_region_std[i] = std::sqrt(var * inv_k);
  }
  // Observed columns are constant, so the mean reproduces the input exactly.
  for (std::size_t i = 0; i < n; ++i) {
    if (!request.mask.masked(i)) {
      out.mean_prediction[i] = request.observed_values[i];
      out.per_region_std[i] = 0.0;
    }
  }
  return out;
}

void write_prediction_json(const std::filesystem::path& path, const PredictionEnsemble& ensemble,
                           const MaskVector& mask, const std::optional<NormStats>& stats) {
  json doc;
  doc["mask"] = mask.bits;
  doc["mean"] = ensemble.mean_prediction;
  doc["std"] = ensemble.per_region_std;
  doc["samples"] = json::array();
  for (std::size_t k = 0; k < ensemble.samples.rows; ++k) {
    const auto r = ensemble.samples.row(k);
    doc["samples"].push_back(std::vector<double>(r.begin(), r.end()));
  }
  if (stats) {
    doc["norm_mean"] = stats->mean;
    doc["norm_std"] = stats->std;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << doc.dump() << '\n';
}

PredictionFile read_prediction_json(const std::filesystem::path& path) {
  const json doc = read_json_file(path);
  PredictionFile f;
  try {
    f.mask = MaskVector::from_bits(doc.at("mask").get<std::vector<std::uint8_t>>());
    f.mean = doc.at("mean").get<std::vector<double>>();
    f.std = doc.value("std", std::vector<double>{});
    const auto samples = doc.value("samples", std::vector<std::vector<double>>{});
    if (!samples.empty()) {
      f.samples = Matrix(samples.size(), samples[0].size());
      for (std::size_t k = 0; k < samples.size(); ++k) {
        if (samples[k].size() != f.samples.cols) throw DataError(path.string() + ": ragged samples");
        std::copy(samples[k].begin(), samples[k].end(), f.samples.row(k).begin());
      }
    }
    if (doc.contains("norm_mean") && doc.contains("norm_std")) {
      f.stats = NormStats{doc["norm_mean"].get<double>(), doc["norm_std"].get<double>()};
    }
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (f.mean.size() != f.mask.size()) throw DataError(path.string() + ": mask/mean length mismatch");
  return f;
}

MaskVector load_mask_file(const std::filesystem::path& path, std::size_t n_regions) {
  const json doc = read_json_file(path);
  std::vector<std::uint8_t> bits(n_regions, 0);
  try {
    if (doc.contains("mask")) {
      bits = doc["mask"].get<std::vector<std::uint8_t>>();
      if (bits.size() != n_regions) {
        throw DataError(path.string() + ": mask must have " + std::to_string(n_regions) + " bits");
      }
    } else if (doc.contains("unknown")) {
      for (std::size_t id : doc["unknown"].get<std::vector<std::size_t>>()) {
        if (id >= n_regions) throw DataError(path.string() + ": unknown region id " + std::to_string(id));
        bits[id] = 1;
      }
    } else {
      throw DataError(path.string() + ": expected a \"mask\" or \"unknown\" field");
    }
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return MaskVector::from_bits(std::move(bits));
}

}  // namespace uicl
