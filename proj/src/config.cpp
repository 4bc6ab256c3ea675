#include "uicl/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "uicl/errors.hpp"

namespace uicl {
namespace {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, v);
  if (text.empty() || res.ec != std::errc{} || res.ptr != end) {
    throw ConfigError("invalid value '" + text + "' for " + key);
  }
  return v;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field number_field(std::string key, T RunConfig::*member) {
  return Field{key,
               [key, member](RunConfig& c, const std::string& v) {
                 c.*member = parse_number<T>(key, v);
               },
               [member](const RunConfig& c) {
                 if constexpr (std::is_floating_point_v<T>) {
                   return format_double(c.*member);
                 } else {
                   return std::to_string(c.*member);
                 }
               }};
}

Field path_field(std::string key, std::filesystem::path RunConfig::*member) {
  return Field{key, [member](RunConfig& c, const std::string& v) { c.*member = v; },
               [member](const RunConfig& c) { return (c.*member).string(); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      number_field("regions", &RunConfig::regions),
      number_field("profiles", &RunConfig::profiles),
      number_field("latent", &RunConfig::latent),
      number_field("noise_std", &RunConfig::noise_std),
      number_field("dim", &RunConfig::dim),
      number_field("layers", &RunConfig::layers),
      number_field("heads", &RunConfig::heads),
      number_field("T", &RunConfig::T),
      number_field("beta_start", &RunConfig::beta_start),
      number_field("beta_end", &RunConfig::beta_end),
      number_field("lr", &RunConfig::lr),
      number_field("epochs", &RunConfig::epochs),
      number_field("batch_size", &RunConfig::batch_size),
      number_field("lambda_mask", &RunConfig::lambda_mask),
      number_field("lambda_align", &RunConfig::lambda_align),
      number_field("adam_beta1", &RunConfig::adam_beta1),
      number_field("adam_beta2", &RunConfig::adam_beta2),
      number_field("adam_eps", &RunConfig::adam_eps),
      number_field("val_every", &RunConfig::val_every),
      number_field("val_fraction", &RunConfig::val_fraction),
      number_field("max_grad_norm", &RunConfig::max_grad_norm),
      number_field("threads", &RunConfig::threads),
      number_field("rounds", &RunConfig::rounds),
      number_field("seed", &RunConfig::seed),
      path_field("data", &RunConfig::data),
      path_field("ref", &RunConfig::ref),
      path_field("out", &RunConfig::out),
  };
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

ModelConfig RunConfig::model_config(std::size_t n_regions, std::size_t ref_dim) const {
  ModelConfig m;
  m.n_regions = n_regions;
  m.hidden_dim = dim;
  m.n_layers = layers;
  m.n_heads = heads;
  m.ref_dim = ref_dim;
  m.steps = T;
  return m;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.lr = lr;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.lambda_mask = lambda_mask;
  t.lambda_align = lambda_align;
  t.seed = seed;
  t.beta_start = beta_start;
  t.beta_end = beta_end;
  t.adam_beta1 = adam_beta1;
  t.adam_beta2 = adam_beta2;
  t.adam_eps = adam_eps;
  t.val_every = val_every;
  t.val_fraction = val_fraction;
  t.max_grad_norm = max_grad_norm;
  t.threads = threads;
  return t;
}

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void set_run_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  field(key).set(config, value);
}

std::string get_run_config_value(const RunConfig& config, const std::string& key) {
  return field(key).get(config);
}

std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& source) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      field(key);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
    if (!out.emplace(key, value).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    // Check the value parses without keeping the result.
    RunConfig scratch;
    try {
      set_run_config_value(scratch, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  return out;
}

std::map<std::string, std::string> load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path.string());
}

std::string format_run_config(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

}  // namespace uicl
