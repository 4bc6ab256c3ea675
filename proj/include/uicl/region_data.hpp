#pragma once

// Region and profile data model: ingestion, z-score normalization, region
// splits and the synthetic-city generator used as ground truth.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "uicl/matrix.hpp"

namespace uicl {

// A fixed partition of a city into `count` regions with dense ids 0..count-1.
struct RegionSet {
  std::size_t count = 0;
  std::vector<std::string> names;  // empty, or one name per region

  static RegionSet with_count(std::size_t n);
};

struct NormStats {
  double mean = 0.0;
  double std = 1.0;
};

struct Profile {
  std::vector<double> values;
  std::string indicator_name;
  std::optional<NormStats> stats;  // set by normalize()
};

enum class SourceTag { kPoiCategory, kMobilityInflow, kMobilityOutflow, kSynthetic, kIndicator };

std::string_view to_string(SourceTag tag);
SourceTag parse_source_tag(std::string_view text);

struct ProfileMatrix {
  RegionSet regions;
  std::vector<Profile> profiles;
  std::vector<SourceTag> source_tags;  // parallel to profiles

  std::size_t size() const { return profiles.size(); }
};

struct Split {
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> val_idx;
  std::vector<std::size_t> test_idx;
  std::uint64_t seed = 0;
};

// External region representation used as an alignment target and by the
// linear-probe baseline. One row per region.
struct ReferenceEmbeddings {
  Matrix matrix;
  std::string source;
};

// Reads a profile CSV (`region_id,<indicator>[,<indicator>...]`) or a profile
// matrix JSON, chosen by file extension. Every region must appear exactly
// once; missing or non-numeric cells are rejected with row/column location.
ProfileMatrix load_profiles(const std::filesystem::path& path, const RegionSet& regions);

// Region count declared by a matrix JSON, or the number of data rows of a CSV.
std::size_t peek_region_count(const std::filesystem::path& path);

void save_profile_csv(const std::filesystem::path& path, const Profile& profile);
void save_profile_matrix_json(const std::filesystem::path& path, const ProfileMatrix& matrix);

ReferenceEmbeddings load_reference_embeddings(const std::filesystem::path& path);
void save_reference_embeddings(const std::filesystem::path& path, const ReferenceEmbeddings& ref);

void save_split(const std::filesystem::path& path, const Split& split);
Split load_split(const std::filesystem::path& path, std::size_t n_regions);

// Per-profile z-score. A constant profile maps to zeros with std recorded as 1.
Profile normalize(const Profile& profile);
// Moments over a subset of positions; other entries are still transformed.
Profile normalize_with_subset(const Profile& profile, const std::vector<std::size_t>& subset);
// values * std + mean. Throws DataError when the profile carries no stats.
Profile denormalize(const Profile& profile);

// Shuffles region ids with `seed` and cuts them into train/val/test with
// sizes rounded from `fractions`; every part is non-empty when N >= 3.
Split make_split(const RegionSet& regions, std::array<double, 3> fractions, std::uint64_t seed);

struct SyntheticCity {
  ProfileMatrix matrix;
  ReferenceEmbeddings latent;  // the column-centered factor matrix Z
};

// Linear latent-factor city: p = Z w + noise, normalized per profile.
SyntheticCity generate_synthetic_city(std::size_t n_regions, std::size_t n_profiles,
                                      std::size_t latent_dim, double noise_std,
                                      std::uint64_t seed);

}  // namespace uicl
