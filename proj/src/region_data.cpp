#include "uicl/region_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "uicl/errors.hpp"
#include "uicl/rng.hpp"

namespace uicl {
namespace {

using nlohmann::json;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    cells.push_back(trim(line.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string location(const std::filesystem::path& path, std::size_t row, std::size_t col) {
  return path.string() + ":" + std::to_string(row) + ":" + std::to_string(col);
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

std::vector<double> finite_values(const json& arr, std::size_t expected,
                                  const std::string& where) {
  if (!arr.is_array() || arr.size() != expected) {
    throw DataError(where + ": expected " + std::to_string(expected) + " values");
  }
  std::vector<double> out;
  out.reserve(expected);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) {
      throw DataError(where + ": non-numeric value at index " + std::to_string(i));
    }
    const double v = arr[i].get<double>();
    if (!std::isfinite(v)) {
      throw DataError(where + ": non-finite value at index " + std::to_string(i));
    }
    out.push_back(v);
  }
  return out;
}

ProfileMatrix load_csv(const std::filesystem::path& path, const RegionSet& regions) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  // Owned copies: `line` is reused for the data rows.
  std::vector<std::string> header;
  for (const auto cell : split_commas(line)) header.emplace_back(cell);
  if (header.size() < 2 || header[0] != "region_id") {
    throw DataError(location(path, 1, 1) + ": header must start with 'region_id'");
  }
  const std::size_t n_cols = header.size() - 1;

  std::vector<std::vector<double>> columns(n_cols, std::vector<double>(regions.count));
  std::vector<bool> seen(regions.count, false);
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != header.size()) {
      throw DataError(location(path, row, cells.size()) + ": ragged row, expected " +
                      std::to_string(header.size()) + " cells");
    }
    std::int64_t id = -1;
    const auto id_res = std::from_chars(cells[0].data(), cells[0].data() + cells[0].size(), id);
    if (id_res.ec != std::errc{} || id_res.ptr != cells[0].data() + cells[0].size()) {
      throw DataError(location(path, row, 1) + ": region id is not an integer");
    }
    if (id < 0 || static_cast<std::size_t>(id) >= regions.count) {
      throw DataError(location(path, row, 1) + ": unknown region id " + std::to_string(id));
    }
    if (seen[id]) {
      throw DataError(location(path, row, 1) + ": duplicate region id " + std::to_string(id));
    }
    seen[id] = true;
    for (std::size_t c = 0; c < n_cols; ++c) {
      const auto cell = cells[c + 1];
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || res.ec != std::errc{} || res.ptr != cell.data() + cell.size() ||
          !std::isfinite(v)) {
        throw DataError(location(path, row, c + 2) + ": non-numeric cell '" +
                        std::string(cell) + "'");
      }
      columns[c][id] = v;
    }
  }
  for (std::size_t i = 0; i < regions.count; ++i) {
    if (!seen[i]) throw DataError(path.string() + ": region " + std::to_string(i) + " missing");
  }

  ProfileMatrix out;
  out.regions = regions;
  for (std::size_t c = 0; c < n_cols; ++c) {
    out.profiles.push_back(Profile{std::move(columns[c]), header[c + 1], {}});
    out.source_tags.push_back(SourceTag::kIndicator);
  }
  return out;
}

ProfileMatrix load_matrix_json(const std::filesystem::path& path, const RegionSet& regions) {
  const json doc = read_json(path);
  if (!doc.contains("regions") || !doc.contains("profiles") || !doc["profiles"].is_array()) {
    throw DataError(path.string() + ": expected {\"regions\", \"profiles\"}");
  }
  const auto n = doc["regions"].get<std::size_t>();
  if (n != regions.count) {
    throw DataError(path.string() + ": file has " + std::to_string(n) + " regions, expected " +
                    std::to_string(regions.count));
  }
  ProfileMatrix out;
  out.regions = regions;
  for (std::size_t p = 0; p < doc["profiles"].size(); ++p) {
    const json& entry = doc["profiles"][p];
    const std::string where = path.string() + ": profile " + std::to_string(p);
    Profile profile;
    profile.indicator_name = entry.value("name", "profile_" + std::to_string(p));
    profile.values = finite_values(entry.at("values"), n, where);
    if (entry.contains("norm_mean") && entry.contains("norm_std")) {
      profile.stats = NormStats{entry["norm_mean"].get<double>(), entry["norm_std"].get<double>()};
    }
    out.profiles.push_back(std::move(profile));
    out.source_tags.push_back(parse_source_tag(entry.value("tag", "indicator")));
  }
  return out;
}

}  // namespace

RegionSet RegionSet::with_count(std::size_t n) {
  if (n < 2) throw ConfigError("a region set needs at least 2 regions");
  return RegionSet{n, {}};
}

std::string_view to_string(SourceTag tag) {
  switch (tag) {
    case SourceTag::kPoiCategory: return "poi-category";
    case SourceTag::kMobilityInflow: return "mobility-inflow";
    case SourceTag::kMobilityOutflow: return "mobility-outflow";
    case SourceTag::kSynthetic: return "synthetic";
    case SourceTag::kIndicator: return "indicator";
  }
  return "indicator";
}

SourceTag parse_source_tag(std::string_view text) {
  for (auto tag : {SourceTag::kPoiCategory, SourceTag::kMobilityInflow,
                   SourceTag::kMobilityOutflow, SourceTag::kSynthetic, SourceTag::kIndicator}) {
    if (to_string(tag) == text) return tag;
  }
  throw DataError("unknown source tag '" + std::string(text) + "'");
}

std::size_t peek_region_count(const std::filesystem::path& path) {
  if (path.extension() == ".json") {
    const json doc = read_json(path);
    if (!doc.contains("regions") || !doc["regions"].is_number_unsigned()) {
      throw DataError(path.string() + ": missing integer field \"regions\"");
    }
    return doc["regions"].get<std::size_t>();
  }
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t rows = 0;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  while (std::getline(in, line)) {
    if (!trim(line).empty()) ++rows;
  }
  return rows;
}

ProfileMatrix load_profiles(const std::filesystem::path& path, const RegionSet& regions) {
  if (path.extension() == ".json") return load_matrix_json(path, regions);
  return load_csv(path, regions);
}

void save_profile_csv(const std::filesystem::path& path, const Profile& profile) {
  std::string text = "region_id," + profile.indicator_name + "\n";
  for (std::size_t i = 0; i < profile.values.size(); ++i) {
    text += std::to_string(i) + "," + format_double(profile.values[i]) + "\n";
  }
  write_text(path, text);
}

void save_profile_matrix_json(const std::filesystem::path& path, const ProfileMatrix& matrix) {
  json doc;
  doc["regions"] = matrix.regions.count;
  doc["profiles"] = json::array();
  for (std::size_t p = 0; p < matrix.profiles.size(); ++p) {
    const Profile& profile = matrix.profiles[p];
    json entry{{"name", profile.indicator_name},
               {"tag", std::string(to_string(matrix.source_tags.at(p)))},
               {"values", profile.values}};
    if (profile.stats) {
      entry["norm_mean"] = profile.stats->mean;
      entry["norm_std"] = profile.stats->std;
    }
    doc["profiles"].push_back(std::move(entry));
  }
  write_text(path, doc.dump() + "\n");
}

ReferenceEmbeddings load_reference_embeddings(const std::filesystem::path& path) {
  const json doc = read_json(path);
  if (!doc.contains("rows") || !doc["rows"].is_array() || doc["rows"].empty()) {
    throw DataError(path.string() + ": expected a non-empty \"rows\" array");
  }
  const json& rows = doc["rows"];
  const std::size_t dim = rows[0].is_array() ? rows[0].size() : 0;
  if (dim == 0) throw DataError(path.string() + ": embedding rows must be non-empty arrays");
  ReferenceEmbeddings ref;
  ref.source = doc.value("source", path.filename().string());
  ref.matrix = Matrix(rows.size(), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto values = finite_values(rows[i], dim, path.string() + ": row " + std::to_string(i));
    std::copy(values.begin(), values.end(), ref.matrix.row(i).begin());
    double norm2 = 0.0;
    for (double v : values) norm2 += v * v;
    if (norm2 == 0.0) {
      throw DataError(path.string() + ": row " + std::to_string(i) + " has zero norm");
    }
  }
  return ref;
}

void save_reference_embeddings(const std::filesystem::path& path, const ReferenceEmbeddings& ref) {
  json doc;
  doc["source"] = ref.source;
  doc["rows"] = json::array();
  for (std::size_t i = 0; i < ref.matrix.rows; ++i) {
    const auto r = ref.matrix.row(i);
    doc["rows"].push_back(std::vector<double>(r.begin(), r.end()));
  }
  write_text(path, doc.dump() + "\n");
}

void save_split(const std::filesystem::path& path, const Split& split) {
  const json doc{{"train", split.train_idx},
                 {"val", split.val_idx},
                 {"test", split.test_idx},
                 {"seed", split.seed}};
  write_text(path, doc.dump() + "\n");
}

Split load_split(const std::filesystem::path& path, std::size_t n_regions) {
  const json doc = read_json(path);
  Split split;
  try {
    split.train_idx = doc.at("train").get<std::vector<std::size_t>>();
    split.val_idx = doc.at("val").get<std::vector<std::size_t>>();
    split.test_idx = doc.at("test").get<std::vector<std::size_t>>();
    split.seed = doc.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  std::vector<int> count(n_regions, 0);
  for (const auto* part : {&split.train_idx, &split.val_idx, &split.test_idx}) {
    for (std::size_t id : *part) {
      if (id >= n_regions) {
        throw DataError(path.string() + ": unknown region id " + std::to_string(id));
      }
      ++count[id];
    }
  }
  for (std::size_t i = 0; i < n_regions; ++i) {
    if (count[i] != 1) {
      throw DataError(path.string() + ": region " + std::to_string(i) +
                      " must appear in exactly one split part");
    }
  }
  return split;
}

Profile normalize(const Profile& profile) {
  std::vector<std::size_t> all(profile.values.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return normalize_with_subset(profile, all);
}

Profile normalize_with_subset(const Profile& profile, const std::vector<std::size_t>& subset) {
  if (subset.size() < 2) throw DataError("normalization needs at least 2 values");
  double mean = 0.0;
  for (std::size_t i : subset) mean += profile.values.at(i);
  mean /= static_cast<double>(subset.size());
  double var = 0.0;
  for (std::size_t i : subset) {
    const double d = profile.values[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(subset.size());
  double sd = std::sqrt(var);
  // Relative threshold so rounding noise on a constant profile counts as constant.
  const bool constant = !(sd > 1e-12 * std::max(1.0, std::abs(mean)));
  if (constant) sd = 1.0;

  Profile out = profile;
  for (double& v : out.values) v = (v - mean) / sd;
  if (constant) {
    for (std::size_t i : subset) out.values[i] = 0.0;
  }
  out.stats = NormStats{mean, sd};
  return out;
}

Profile denormalize(const Profile& profile) {
  if (!profile.stats) {
    throw DataError("profile '" + profile.indicator_name + "' has no normalization stats");
  }
  Profile out = profile;
  for (double& v : out.values) v = v * profile.stats->std + profile.stats->mean;
  out.stats.reset();
  return out;
}

Split make_split(const RegionSet& regions, std::array<double, 3> fractions, std::uint64_t seed) {
  const std::size_t n = regions.count;
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ConfigError("split fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

  std::array<std::size_t, 3> sizes{};
  sizes[0] = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
  sizes[1] = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
  sizes[0] = std::min(sizes[0], n);
  sizes[1] = std::min(sizes[1], n - sizes[0]);
  sizes[2] = n - sizes[0] - sizes[1];
  if (n >= 3) {
    for (std::size_t part = 0; part < 3; ++part) {
      if (sizes[part] > 0) continue;
      const auto donor = static_cast<std::size_t>(
          std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
      --sizes[donor];
      ++sizes[part];
    }
  } else if (sizes[0] == 0 || sizes[2] == 0) {
    sizes = {1, 0, 1};
  }

  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  Rng rng(seed, "split");
  std::shuffle(ids.begin(), ids.end(), rng.engine());

  Split split;
  split.seed = seed;
  auto it = ids.begin();
  split.train_idx.assign(it, it + static_cast<std::ptrdiff_t>(sizes[0]));
  it += static_cast<std::ptrdiff_t>(sizes[0]);
  split.val_idx.assign(it, it + static_cast<std::ptrdiff_t>(sizes[1]));
  it += static_cast<std::ptrdiff_t>(sizes[1]);
  split.test_idx.assign(it, ids.end());
  for (auto* part : {&split.train_idx, &split.val_idx, &split.test_idx}) {
    std::sort(part->begin(), part->end());
  }
  return split;
}

SyntheticCity generate_synthetic_city(std::size_t n_regions, std::size_t n_profiles,
                                      std::size_t latent_dim, double noise_std,
                                      std::uint64_t seed) {
  if (n_regions < 2) throw ConfigError("synthetic city needs at least 2 regions");
  if (latent_dim == 0 || latent_dim >= n_regions) {
    throw ConfigError("latent_dim must be in [1, n_regions)");
  }
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be >= 0");

  Rng factor_rng(seed, "synthetic-factors");
  Matrix z(n_regions, latent_dim);
  for (double& v : z.data) v = factor_rng.normal();
  // Centering the factor columns keeps every noiseless profile inside span(Z)
  // after its mean is removed.
  for (std::size_t c = 0; c < latent_dim; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n_regions; ++r) mean += z(r, c);
    mean /= static_cast<double>(n_regions);
    for (std::size_t r = 0; r < n_regions; ++r) z(r, c) -= mean;
  }

  SyntheticCity city;
  city.matrix.regions = RegionSet::with_count(n_regions);
  Rng profile_rng(seed, "synthetic-profiles");
  std::vector<double> loading(latent_dim);
  for (std::size_t p = 0; p < n_profiles; ++p) {
    for (double& w : loading) w = profile_rng.normal();
    Profile raw;
    raw.indicator_name = "synthetic_" + std::to_string(p);
    raw.values.resize(n_regions);
    for (std::size_t r = 0; r < n_regions; ++r) {
      double v = 0.0;
      for (std::size_t c = 0; c < latent_dim; ++c) v += z(r, c) * loading[c];
      raw.values[r] = v;
    }
    for (double& v : raw.values) v += noise_std * profile_rng.normal();
    city.matrix.profiles.push_back(normalize(raw));
    city.matrix.source_tags.push_back(SourceTag::kSynthetic);
  }
  city.latent.matrix = std::move(z);
  city.latent.source = "synthetic-latent-factors";
  return city;
}

}  // namespace uicl
