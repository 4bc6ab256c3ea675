#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "uicl/analysis.hpp"
#include "uicl/config.hpp"
#include "uicl/errors.hpp"
#include "uicl/gradcheck.hpp"
#include "uicl/inference.hpp"
#include "uicl/kernels.hpp"
#include "uicl/training.hpp"

namespace uicl::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string flag_for(const std::string& key) {
  if (key == "T") return "--T";
  std::string s = key;
  std::replace(s.begin(), s.end(), '_', '-');
  return "--" + s;
}

// Per-command state: the run configuration plus which keys were set by the
// user (flag or config file) rather than left at their defaults.
struct Context {
  RunConfig cfg;
  std::string config_path;
  std::set<std::string> explicit_keys;
  CLI::App* app = nullptr;

  template <typename T>
  CLI::Option* bind(T& field, const std::string& key, const std::string& help) {
    return app->add_option(flag_for(key), field, help)->capture_default_str();
  }

  void bind_config() {
    app->add_option("--config", config_path, "key = value file using RunConfig field names");
  }

  // Config file values fill every key not given on the command line.
  void resolve() {
    for (const auto& key : run_config_keys()) {
      const CLI::Option* opt = app->get_option_no_throw(flag_for(key));
      if (opt != nullptr && opt->count() > 0) explicit_keys.insert(key);
    }
    if (config_path.empty()) return;
    for (const auto& [key, value] : load_config_file(config_path)) {
      if (explicit_keys.count(key) > 0) continue;
      set_run_config_value(cfg, key, value);
      explicit_keys.insert(key);
    }
  }

  bool is_explicit(const std::string& key) const { return explicit_keys.count(key) > 0; }
};

void require_file(const fs::path& path, const std::string& flag) {
  if (path.empty()) throw ConfigError(flag + " is required");
  if (!fs::is_regular_file(path)) throw ConfigError(flag + ": no such file " + path.string());
}

void require_output(const fs::path& path, const std::string& flag) {
  if (path.empty()) throw ConfigError(flag + " is required");
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

void emit_json(const json& doc, const fs::path& out) {
  if (out.empty()) {
    std::cout << doc.dump(2) << '\n';
  } else {
    write_text(out, doc.dump(2) + "\n");
  }
}

const Profile& pick_profile(const ProfileMatrix& m, const std::string& indicator,
                            const fs::path& path) {
  if (indicator.empty()) {
    if (m.size() != 1) {
      throw ConfigError(path.string() + " has " + std::to_string(m.size()) +
                        " indicator columns; choose one with --indicator");
    }
    return m.profiles.front();
  }
  for (const auto& p : m.profiles) {
    if (p.indicator_name == indicator) return p;
  }
  throw ConfigError(path.string() + " has no indicator column '" + indicator + "'");
}

ProfileMatrix load_any_profiles(const fs::path& path, std::size_t n_regions) {
  return load_profiles(path, RegionSet::with_count(n_regions));
}

// Prediction files are on the normalized scale; the echoed stats map back.
std::vector<double> to_input_scale(std::vector<double> values,
                                   const std::optional<NormStats>& stats) {
  if (stats) {
    for (double& v : values) v = v * stats->std + stats->mean;
  }
  return values;
}

NoiseSchedule schedule_from(const RunConfig& cfg, std::size_t steps) {
  BetaRange range = default_beta_range(steps);
  if (cfg.beta_start > 0.0) range.start = cfg.beta_start;
  if (cfg.beta_end > 0.0) range.end = cfg.beta_end;
  return build_schedule(steps, range.start, range.end);
}

std::string format_seconds(double s) {
  std::ostringstream out;
  out.precision(2);
  out << std::fixed << s << " s";
  return out.str();
}

// gen-synth ---------------------------------------------------------------

struct GenSynthArgs {
  std::size_t tasks = 0;
};

void add_gen_synth(CLI::App& root, Context& ctx, GenSynthArgs& args) {
  ctx.app = root.add_subcommand("gen-synth", "Generate a synthetic latent-factor city");
  ctx.bind(ctx.cfg.regions, "regions", "Number of regions N (>= 2)");
  ctx.bind(ctx.cfg.profiles, "profiles", "Number of pretraining profiles M");
  ctx.bind(ctx.cfg.latent, "latent", "Latent factor dimension");
  ctx.bind(ctx.cfg.noise_std, "noise_std", "Observation noise standard deviation");
  ctx.bind(ctx.cfg.seed, "seed", "Global seed");
  ctx.bind(ctx.cfg.out, "out", "Output directory");
  ctx.app->add_option("--tasks", args.tasks,
                      "Extra indicator profiles from the same latent factors, one task_<k>.csv each")
      ->capture_default_str();
  ctx.bind_config();
}

int cmd_gen_synth(Context& ctx, const GenSynthArgs& args) {
  const RunConfig& c = ctx.cfg;
  require_output(c.out, "--out");
  RegionSet::with_count(c.regions);
  if (c.profiles < 1) throw ConfigError("--profiles must be >= 1");
  if (!(c.noise_std >= 0.0)) throw ConfigError("--noise-std must be >= 0");
  const SyntheticCity city =
      generate_synthetic_city(c.regions, c.profiles + args.tasks, c.latent, c.noise_std, c.seed);
  const Split split = make_split(city.matrix.regions, {0.6, 0.2, 0.2}, c.seed);

  ProfileMatrix pretrain = city.matrix;
  pretrain.profiles.resize(c.profiles);
  pretrain.source_tags.resize(c.profiles);

  fs::create_directories(c.out);
  save_profile_matrix_json(c.out / "profiles.json", pretrain);
  save_reference_embeddings(c.out / "reference.json", city.latent);
  save_split(c.out / "split.json", split);
  for (std::size_t k = 0; k < args.tasks; ++k) {
    Profile task = city.matrix.profiles[c.profiles + k];
    task.indicator_name = "task_" + std::to_string(k);
    save_profile_csv(c.out / (task.indicator_name + ".csv"), task);
  }
  std::cout << "wrote " << c.profiles << " profiles over " << c.regions << " regions to "
            << c.out.string() << '\n';
  return 0;
}

// train ------------------------------------------------------------------

void add_train(CLI::App& root, Context& ctx) {
  ctx.app = root.add_subcommand("train", "Pretrain the masked diffusion transformer");
  RunConfig& c = ctx.cfg;
  ctx.bind(c.data, "data", "Profile matrix JSON or profile CSV");
  ctx.bind(c.ref, "ref", "Reference embeddings JSON (enables alignment)");
  ctx.bind(c.out, "out", "Output directory for checkpoints and curves");
  ctx.bind(c.dim, "dim", "Hidden dimension D");
  ctx.bind(c.layers, "layers", "Encoder layers L");
  ctx.bind(c.heads, "heads", "Attention heads");
  ctx.bind(c.T, "T", "Diffusion steps");
  ctx.bind(c.beta_start, "beta_start", "First beta; 0 = 1e-4 * 1000/T");
  ctx.bind(c.beta_end, "beta_end", "Last beta; 0 = min(0.02 * 1000/T, 0.5)");
  ctx.bind(c.lr, "lr", "Adam learning rate");
  ctx.bind(c.epochs, "epochs", "Training epochs");
  ctx.bind(c.batch_size, "batch_size", "Profiles per optimizer step");
  ctx.bind(c.lambda_mask, "lambda_mask", "Mask-prediction loss weight");
  ctx.bind(c.lambda_align, "lambda_align", "Alignment loss weight (used only with --ref)");
  ctx.bind(c.adam_beta1, "adam_beta1", "Adam first-moment decay");
  ctx.bind(c.adam_beta2, "adam_beta2", "Adam second-moment decay");
  ctx.bind(c.adam_eps, "adam_eps", "Adam epsilon");
  ctx.bind(c.val_every, "val_every", "Epochs between validation passes");
  ctx.bind(c.val_fraction, "val_fraction", "Share of profiles held out for model selection");
  ctx.bind(c.max_grad_norm, "max_grad_norm", "Global gradient-norm clip; 0 disables");
  ctx.bind(c.threads, "threads", "Worker threads for batch examples");
  ctx.bind(c.seed, "seed", "Global seed");
  ctx.bind_config();
}

int cmd_train(Context& ctx) {
  RunConfig c = ctx.cfg;
  require_file(c.data, "--data");
  require_output(c.out, "--out");
  if (!c.ref.empty()) require_file(c.ref, "--ref");
  if (c.ref.empty() && ctx.is_explicit("lambda_align") && c.lambda_align > 0.0) {
    throw ConfigError("--lambda-align " + get_run_config_value(c, "lambda_align") +
                      " needs reference embeddings; pass --ref or set --lambda-align 0");
  }
  if (c.ref.empty()) c.lambda_align = 0.0;
  const TrainConfig train_cfg = c.train_config();
  train_cfg.validate();

  const std::size_t n = peek_region_count(c.data);
  ProfileMatrix matrix = load_any_profiles(c.data, n);
  for (auto& p : matrix.profiles) p = normalize(p);

  std::optional<ReferenceEmbeddings> ref;
  if (!c.ref.empty() && c.lambda_align > 0.0) {
    ref = load_reference_embeddings(c.ref);
    if (ref->matrix.rows != n) {
      throw DataError(c.ref.string() + ": " + std::to_string(ref->matrix.rows) +
                      " rows but the data has " + std::to_string(n) + " regions");
    }
  }
  const ModelConfig model = c.model_config(n, ref ? ref->matrix.cols : 0);
  model.validate();

  fs::create_directories(c.out);
  write_text(c.out / "config.txt", format_run_config(c));
  const auto start = std::chrono::steady_clock::now();
  const TrainResult result = train(matrix, model, train_cfg, ref ? &*ref : nullptr, c.out);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const LossReport& last = result.curve.back();
  std::cout << "trained " << parameter_count(model) << " parameters for " << c.epochs
            << " epochs in " << format_seconds(secs) << "; final loss " << last.total
            << " (noise " << last.noise << ", mask " << last.mask << ", align " << last.align
            << "); best epoch " << result.best_epoch << '\n';
  return 0;
}

// infer ------------------------------------------------------------------

struct InferArgs {
  fs::path checkpoint;
  fs::path profile;
  fs::path mask_file;
  std::string indicator;
};

void add_infer(CLI::App& root, Context& ctx, InferArgs& args) {
  ctx.app = root.add_subcommand("infer", "Predict unobserved regions with K reverse chains");
  RunConfig& c = ctx.cfg;
  ctx.app->add_option("--checkpoint", args.checkpoint, "Trained checkpoint")->required();
  ctx.app->add_option("--profile", args.profile, "Profile CSV; masked cells are ignored")
      ->required();
  ctx.app->add_option("--mask-file", args.mask_file,
                      "JSON {\"mask\": [0/1 per region]} or {\"unknown\": [region ids]}")
      ->required();
  ctx.app->add_option("--indicator", args.indicator, "Column to use when the CSV has several");
  ctx.bind(c.rounds, "rounds", "Number of reverse chains K");
  ctx.bind(c.beta_start, "beta_start", "First beta; must match training");
  ctx.bind(c.beta_end, "beta_end", "Last beta; must match training");
  ctx.bind(c.threads, "threads", "Worker threads for chains");
  ctx.bind(c.seed, "seed", "Global seed");
  ctx.bind(c.out, "out", "Prediction JSON path");
  ctx.bind_config();
}

int cmd_infer(Context& ctx, const InferArgs& args) {
  const RunConfig& c = ctx.cfg;
  require_file(args.checkpoint, "--checkpoint");
  require_file(args.profile, "--profile");
  require_file(args.mask_file, "--mask-file");
  require_output(c.out, "--out");
  if (c.rounds < 1) throw ConfigError("--rounds must be >= 1");
  if (c.threads < 1) throw ConfigError("--threads must be >= 1");

  const ModelParameters params = load_checkpoint(args.checkpoint);
  const std::size_t n = params.config.n_regions;
  const ProfileMatrix matrix = load_any_profiles(args.profile, n);
  const Profile& raw = pick_profile(matrix, args.indicator, args.profile);
  const MaskVector mask = load_mask_file(args.mask_file, n);

  std::vector<std::size_t> observed;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.masked(i)) observed.push_back(i);
  }
  InferenceRequest request;
  request.mask = mask;
  request.rounds = c.rounds;
  request.seed = c.seed;
  request.observed_values.assign(n, 0.0);
  if (!observed.empty()) request.observed_values = normalize_with_subset(raw, observed).values;
  request.validate(n);
  const NormStats stats = *normalize_with_subset(raw, observed).stats;

  const NoiseSchedule schedule = schedule_from(c, params.config.steps);
  const PredictionEnsemble ens = predict(request, params, schedule, c.threads);
  ensure_parent(c.out);
  write_prediction_json(c.out, ens, mask, stats);
  std::cout << "predicted " << mask.masked_count() << " of " << n << " regions with "
            << c.rounds << " rounds -> " << c.out.string() << '\n';
  return 0;
}

// eval -------------------------------------------------------------------

struct EvalArgs {
  std::vector<fs::path> preds;
  fs::path truth;
  fs::path split;
  std::string indicator;
  std::string task;
  fs::path out;
};

void add_eval(CLI::App& root, Context& ctx, EvalArgs& args) {
  ctx.app = root.add_subcommand("eval", "Score predictions against ground truth");
  ctx.app->add_option("--pred", args.preds,
                      "Prediction JSON; repeat once per seed to report the mean over seeds")
      ->required();
  ctx.app->add_option("--truth", args.truth, "Ground-truth profile CSV")->required();
  ctx.app->add_option("--split", args.split,
                      "Split JSON; scores its test regions instead of the masked regions");
  ctx.app->add_option("--indicator", args.indicator, "Column to use when the CSV has several");
  ctx.app->add_option("--task", args.task, "Task label in the report (default: indicator name)");
  ctx.app->add_option("--out", args.out, "Report JSON path (default: stdout)");
}

int cmd_eval(const EvalArgs& args) {
  for (const auto& p : args.preds) require_file(p, "--pred");
  require_file(args.truth, "--truth");
  if (!args.split.empty()) require_file(args.split, "--split");

  std::vector<PredictionFile> preds;
  for (const auto& p : args.preds) preds.push_back(read_prediction_json(p));
  const std::size_t n = preds.front().mean.size();
  const ProfileMatrix matrix = load_any_profiles(args.truth, n);
  const Profile& truth = pick_profile(matrix, args.indicator, args.truth);
  const std::string task = args.task.empty() ? truth.indicator_name : args.task;
  std::optional<Split> split;
  if (!args.split.empty()) split = load_split(args.split, n);

  json report;
  report["task"] = task;
  report["per_seed"] = json::array();
  std::vector<MetricReport> reports;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const PredictionFile& p = preds[s];
    if (p.mean.size() != n) throw DataError(args.preds[s].string() + ": region count differs");
    std::vector<std::size_t> regions;
    if (split) {
      regions = split->test_idx;
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        if (p.mask.masked(i)) regions.push_back(i);
      }
    }
    const MetricReport r = evaluate_subset(task, to_input_scale(p.mean, p.stats), truth.values, regions);
    reports.push_back(r);
    report["per_seed"].push_back(
        {{"pred", args.preds[s].string()}, {"mae", r.mae}, {"rmse", r.rmse}, {"pcc", r.pcc}, {"n", r.n}});
  }
  double mae_sum = 0.0, rmse_sum = 0.0, pcc_sum = 0.0;
  for (const auto& r : reports) {
    mae_sum += r.mae;
    rmse_sum += r.rmse;
    pcc_sum += r.pcc;
  }
  const double inv = 1.0 / static_cast<double>(reports.size());
  report["mae"] = mae_sum * inv;
  report["rmse"] = rmse_sum * inv;
  report["pcc"] = pcc_sum * inv;
  report["n"] = reports.front().n;
  report["seeds"] = reports.size();
  emit_json(report, args.out);
  return 0;
}

// analyze ----------------------------------------------------------------

struct AnalyzeArgs {
  fs::path samples;
  std::size_t region = 0;
  std::size_t grid = 512;
  double bandwidth = 0.0;
  fs::path points;
  fs::path checkpoint;
  std::size_t k = 5;
  std::size_t max_iter = 300;
  fs::path ref;
  fs::path truth;
  fs::path split;
  std::string indicator;
  double ridge = kDefaultRidge;
  std::uint64_t seed = 0;
  fs::path out;
};

struct AnalyzeApps {
  CLI::App* kde = nullptr;
  CLI::App* scaling = nullptr;
  CLI::App* cluster = nullptr;
  CLI::App* probe = nullptr;
};

AnalyzeApps add_analyze(CLI::App& root, AnalyzeArgs& a) {
  CLI::App* an = root.add_subcommand("analyze", "Post-hoc analyses");
  an->require_subcommand(1);
  AnalyzeApps apps;

  apps.kde = an->add_subcommand("kde", "Epanechnikov density of one region's samples");
  apps.kde->add_option("--samples", a.samples, "Prediction JSON with samples")->required();
  apps.kde->add_option("--region", a.region, "Region id")->required();
  apps.kde->add_option("--grid", a.grid, "Grid points")->capture_default_str();
  apps.kde->add_option("--bandwidth", a.bandwidth, "Kernel bandwidth; 0 = Silverman's rule")
      ->capture_default_str();
  apps.kde->add_option("--out", a.out, "Density CSV (x,density)")->required();

  apps.scaling = an->add_subcommand("scaling", "Fit y = a * exp(b x) in log space");
  apps.scaling->add_option("--points", a.points, "CSV with header x,y")->required();
  apps.scaling->add_option("--out", a.out, "Fit JSON (default: stdout)");

  apps.cluster = an->add_subcommand("cluster", "k-means over learned region embeddings");
  apps.cluster->add_option("--checkpoint", a.checkpoint, "Trained checkpoint")->required();
  apps.cluster->add_option("--k", a.k, "Number of clusters")->capture_default_str();
  apps.cluster->add_option("--max-iter", a.max_iter, "Lloyd iteration cap")->capture_default_str();
  apps.cluster->add_option("--seed", a.seed, "Seeding stream")->capture_default_str();
  apps.cluster->add_option("--out", a.out, "Assignment CSV (region_id,cluster)")->required();

  apps.probe = an->add_subcommand("probe", "Linear-probe baseline on frozen embeddings");
  apps.probe->add_option("--ref", a.ref, "Reference embeddings JSON")->required();
  apps.probe->add_option("--truth", a.truth, "Indicator profile CSV")->required();
  apps.probe->add_option("--split", a.split, "Split JSON; fits on train+val, scores test")
      ->required();
  apps.probe->add_option("--indicator", a.indicator, "Column to use when the CSV has several");
  apps.probe->add_option("--ridge", a.ridge, "Ridge penalty")->capture_default_str();
  apps.probe->add_option("--out", a.out, "Report JSON (default: stdout)");
  return apps;
}

int cmd_kde(const AnalyzeArgs& a) {
  require_file(a.samples, "--samples");
  require_output(a.out, "--out");
  if (a.grid < 2) throw ConfigError("--grid must be >= 2");
  if (!(a.bandwidth >= 0.0)) throw ConfigError("--bandwidth must be >= 0");
  const PredictionFile pred = read_prediction_json(a.samples);
  if (pred.samples.rows == 0) throw DataError(a.samples.string() + ": no samples");
  if (a.region >= pred.samples.cols) {
    throw ConfigError("--region " + std::to_string(a.region) + " out of range");
  }
  std::vector<double> values(pred.samples.rows);
  for (std::size_t k = 0; k < values.size(); ++k) values[k] = pred.samples(k, a.region);
  values = to_input_scale(std::move(values), pred.stats);
  const double h = a.bandwidth > 0.0 ? a.bandwidth : silverman_bandwidth(values);
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it - h;
  const double hi = *hi_it + h;
  std::vector<double> grid(a.grid);
  for (std::size_t i = 0; i < a.grid; ++i) {
    grid[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(a.grid - 1);
  }
  const auto density = epanechnikov_kde(values, h, grid);
  std::ostringstream csv;
  csv.precision(17);
  csv << "x,density\n";
  for (std::size_t i = 0; i < grid.size(); ++i) csv << grid[i] << ',' << density[i] << '\n';
  write_text(a.out, csv.str());
  std::cout << "kde over " << values.size() << " samples, bandwidth " << h << " -> "
            << a.out.string() << '\n';
  return 0;
}

std::pair<std::vector<double>, std::vector<double>> read_points(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  std::vector<double> x, y;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream cells(line);
    double xv = 0.0, yv = 0.0;
    char comma = 0;
    if (!(cells >> xv >> comma >> yv) || comma != ',') {
      throw DataError(path.string() + ":" + std::to_string(row) + ": expected 'x,y'");
    }
    x.push_back(xv);
    y.push_back(yv);
  }
  return {x, y};
}

int cmd_scaling(const AnalyzeArgs& a) {
  require_file(a.points, "--points");
  const auto [x, y] = read_points(a.points);
  const ScalingFit fit = fit_scaling_law(x, y);
  emit_json({{"a", fit.a}, {"b", fit.b}, {"r2", fit.r_squared}, {"points", x.size()}}, a.out);
  return 0;
}

int cmd_cluster(const AnalyzeArgs& a) {
  require_file(a.checkpoint, "--checkpoint");
  require_output(a.out, "--out");
  if (a.k < 1) throw ConfigError("--k must be >= 1");
  const ModelParameters params = load_checkpoint(a.checkpoint);
  const ModelConfig& cfg = params.config;
  if (a.k > cfg.n_regions) {
    throw ConfigError("--k " + std::to_string(a.k) + " exceeds the " +
                      std::to_string(cfg.n_regions) + " regions");
  }
  Matrix embed(cfg.n_regions, cfg.hidden_dim);
  std::copy_n(params.at(params.layout.region_embed), embed.size(), embed.ptr());
  const KMeansResult r = kmeans(embed, a.k, a.seed, a.max_iter);
  std::ostringstream csv;
  csv << "region_id,cluster\n";
  for (std::size_t i = 0; i < r.assignments.size(); ++i) csv << i << ',' << r.assignments[i] << '\n';
  write_text(a.out, csv.str());
  std::cout << "k-means with k=" << a.k << " converged in " << r.iterations
            << " iterations, inertia " << r.inertia_history.back() << " -> " << a.out.string()
            << '\n';
  return 0;
}

int cmd_probe(const AnalyzeArgs& a) {
  require_file(a.ref, "--ref");
  require_file(a.truth, "--truth");
  require_file(a.split, "--split");
  if (!(a.ridge >= 0.0)) throw ConfigError("--ridge must be >= 0");
  const ReferenceEmbeddings ref = load_reference_embeddings(a.ref);
  const std::size_t n = ref.matrix.rows;
  const ProfileMatrix matrix = load_any_profiles(a.truth, n);
  const Profile& truth = pick_profile(matrix, a.indicator, a.truth);
  const Split split = load_split(a.split, n);
  std::vector<std::size_t> fit_idx = split.train_idx;
  fit_idx.insert(fit_idx.end(), split.val_idx.begin(), split.val_idx.end());
  std::sort(fit_idx.begin(), fit_idx.end());

  const auto pred = linear_probe_baseline(ref, truth.values, fit_idx, split.test_idx, a.ridge);
  std::vector<double> truth_test;
  for (std::size_t i : split.test_idx) truth_test.push_back(truth.values[i]);
  const MetricReport r = evaluate(truth.indicator_name, pred, truth_test);
  json preds = json::object();
  for (std::size_t j = 0; j < pred.size(); ++j) preds[std::to_string(split.test_idx[j])] = pred[j];
  emit_json({{"task", r.task},
             {"mae", r.mae},
             {"rmse", r.rmse},
             {"pcc", r.pcc},
             {"n", r.n},
             {"ridge", a.ridge},
             {"predictions", preds}},
            a.out);
  return 0;
}

// gradcheck ----------------------------------------------------------------

void add_gradcheck(CLI::App& root, GradcheckOptions& g) {
  CLI::App* app = root.add_subcommand("gradcheck", "Finite-difference check of the backward pass");
  app->add_option("--regions", g.model.n_regions, "Regions N")->capture_default_str();
  app->add_option("--dim", g.model.hidden_dim, "Hidden dimension D")->capture_default_str();
  app->add_option("--layers", g.model.n_layers, "Encoder layers L")->capture_default_str();
  app->add_option("--heads", g.model.n_heads, "Attention heads")->capture_default_str();
  app->add_option("--ref-dim", g.model.ref_dim, "Alignment width D'; 0 disables")
      ->capture_default_str();
  app->add_option("--T", g.model.steps, "Diffusion steps")->capture_default_str();
  app->add_option("--seed", g.seed, "Seed for parameters and inputs")->capture_default_str();
  app->add_option("--step", g.step, "Central-difference step")->capture_default_str();
  app->add_option("--tolerance", g.tolerance, "Maximum relative error")->capture_default_str();
  app->add_option("--corrupt", g.corrupt_group,
                  "Negative control: scale this group's analytic gradient by 1.5");
}

int cmd_gradcheck(const GradcheckOptions& g) {
  if (!g.corrupt_group.empty()) {
    const auto groups = ParameterLayout(g.model).groups();
    if (std::find(groups.begin(), groups.end(), g.corrupt_group) == groups.end()) {
      throw ConfigError("--corrupt: unknown parameter group '" + g.corrupt_group + "'");
    }
  }
  const GradcheckReport r = run_gradcheck(g);
  std::printf("%-24s %8s %12s %12s\n", "group", "count", "max_abs", "max_rel");
  for (const auto& grp : r.groups) {
    std::printf("%-24s %8zu %12.3e %12.3e\n", grp.name.c_str(), grp.count, grp.max_abs_error,
                grp.max_rel_error);
  }
  std::printf("max relative error %.3e (tolerance %.1e): %s\n", r.max_rel_error, g.tolerance,
              r.passed ? "PASS" : "FAIL");
  return r.passed ? 0 : 4;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Urban in-context learning with a masked diffusion transformer"};
  app.name(args.empty() ? "uicl" : fs::path(args.front()).filename().string());
  app.require_subcommand(1);
  std::string isa;
  app.add_option("--isa", isa, "Kernel set: scalar or avx2 (default: best available)");

  Context gen_ctx, train_ctx, infer_ctx;
  GenSynthArgs gen_args;
  add_gen_synth(app, gen_ctx, gen_args);
  add_train(app, train_ctx);
  InferArgs infer_args;
  add_infer(app, infer_ctx, infer_args);
  Context eval_ctx;
  EvalArgs eval_args;
  add_eval(app, eval_ctx, eval_args);
  AnalyzeArgs analyze_args;
  const AnalyzeApps analyze = add_analyze(app, analyze_args);
  GradcheckOptions grad_opts;
  add_gradcheck(app, grad_opts);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (!isa.empty()) {
      try {
        kernels::force_isa(kernels::parse_isa(isa));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("--isa: ") + e.what());
      }
    }
    if (gen_ctx.app->parsed()) {
      gen_ctx.resolve();
      return cmd_gen_synth(gen_ctx, gen_args);
    }
    if (train_ctx.app->parsed()) {
      train_ctx.resolve();
      return cmd_train(train_ctx);
    }
    if (infer_ctx.app->parsed()) {
      infer_ctx.resolve();
      return cmd_infer(infer_ctx, infer_args);
    }
    if (eval_ctx.app->parsed()) return cmd_eval(eval_args);
    if (analyze.kde->parsed()) return cmd_kde(analyze_args);
    if (analyze.scaling->parsed()) return cmd_scaling(analyze_args);
    if (analyze.cluster->parsed()) return cmd_cluster(analyze_args);
    if (analyze.probe->parsed()) return cmd_probe(analyze_args);
    return cmd_gradcheck(grad_opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 4;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  }
}

}  // namespace uicl::cli
