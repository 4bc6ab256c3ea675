#pragma once

// Run configuration shared by every CLI command. The config file is plain
// `key = value` text whose keys are exactly the RunConfig field names; `#`
// starts a comment.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "uicl/masked_dit.hpp"
#include "uicl/training.hpp"

namespace uicl {

struct RunConfig {
  // synthetic city
  std::size_t regions = 64;
  std::size_t profiles = 200;
  std::size_t latent = 8;
  double noise_std = 0.1;
  // model
  std::size_t dim = 128;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t T = 1000;
  // schedule, 0 = default linear range for T
  double beta_start = 0.0;
  double beta_end = 0.0;
  // training
  double lr = 4e-4;
  std::size_t epochs = 1000;
  std::size_t batch_size = 128;
  double lambda_mask = 0.3;
  double lambda_align = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t val_every = 10;
  double val_fraction = 0.1;
  double max_grad_norm = 0.0;
  std::size_t threads = 1;
  // inference
  std::size_t rounds = 10;
  // global
  std::uint64_t seed = 0;
  // paths
  std::filesystem::path data;
  std::filesystem::path ref;
  std::filesystem::path out;

  ModelConfig model_config(std::size_t n_regions, std::size_t ref_dim) const;
  TrainConfig train_config() const;
};

// Every key accepted in a config file, in declaration order.
const std::vector<std::string>& run_config_keys();

// Throws ConfigError for an unknown key or an unparsable value.
void set_run_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_run_config_value(const RunConfig& config, const std::string& key);

// Parses `key = value` lines. Duplicate or unknown keys are ConfigErrors;
// `source` labels error messages.
std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& source);
std::map<std::string, std::string> load_config_file(const std::filesystem::path& path);

// Effective configuration, one `key = value` line per field.
std::string format_run_config(const RunConfig& config);

}  // namespace uicl
