#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <functional>
#include <cmath>
#include <fstream>
#include <set>

#include "test_support.hpp"
#include "uicl/errors.hpp"
#include "uicl/region_data.hpp"

namespace uicl {
namespace {

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double pop_std_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

TEST(LoadProfiles, ReadsThreeRegionCsv) {
  test::TempDir dir("rd");
  write_file(dir / "p.csv", "region_id,crime\n0,1\n1,2\n2,3\n");
  const auto m = load_profiles(dir / "p.csv", RegionSet::with_count(3));
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m.profiles[0].values, (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(m.profiles[0].indicator_name, "crime");
}

TEST(LoadProfiles, KeepsLongColumnNamesAcrossLongRows) {
  test::TempDir dir("rd");
  write_file(dir / "p.csv",
             "region_id,median_house_price_index_2023,violent_crime_rate_per_capita\n"
             "0,123456.78901234567,0.000123456789012345\n1,234567.89012345678,0.25\n");
  const auto m = load_profiles(dir / "p.csv", RegionSet::with_count(2));
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.profiles[0].indicator_name, "median_house_price_index_2023");
  EXPECT_EQ(m.profiles[1].indicator_name, "violent_crime_rate_per_capita");
}

TEST(LoadProfiles, RowOrderDoesNotMatter) {
  test::TempDir dir("rd");
  write_file(dir / "p.csv", "region_id,a,b\n2,3,30\n0,1,10\n1,2,20\n");
  const auto m = load_profiles(dir / "p.csv", RegionSet::with_count(3));
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.profiles[1].values, (std::vector<double>{10, 20, 30}));
}

TEST(LoadProfiles, RejectsUnknownRegionWithLocation) {
  test::TempDir dir("rd");
  write_file(dir / "p.csv", "region_id,x\n0,1\n99,2\n2,3\n");
  const auto msg = error_of([&] { load_profiles(dir / "p.csv", RegionSet::with_count(3)); });
  EXPECT_NE(msg.find("unknown region id 99"), std::string::npos) << msg;
  EXPECT_NE(msg.find(":3:1"), std::string::npos) << msg;
}

TEST(LoadProfiles, RejectsRaggedNonNumericMissingAndDuplicate) {
  test::TempDir dir("rd");
  const auto regions = RegionSet::with_count(3);
  write_file(dir / "ragged.csv", "region_id,x\n0,1\n1\n2,3\n");
  EXPECT_NE(error_of([&] { load_profiles(dir / "ragged.csv", regions); }).find("ragged"),
            std::string::npos);
  write_file(dir / "nan.csv", "region_id,x\n0,1\n1,abc\n2,3\n");
  const auto msg = error_of([&] { load_profiles(dir / "nan.csv", regions); });
  EXPECT_NE(msg.find("non-numeric"), std::string::npos);
  EXPECT_NE(msg.find(":3:2"), std::string::npos) << msg;
  write_file(dir / "empty_cell.csv", "region_id,x\n0,1\n1,\n2,3\n");
  EXPECT_THROW(load_profiles(dir / "empty_cell.csv", regions), DataError);
  write_file(dir / "inf.csv", "region_id,x\n0,1\n1,inf\n2,3\n");
  EXPECT_THROW(load_profiles(dir / "inf.csv", regions), DataError);
  write_file(dir / "missing.csv", "region_id,x\n0,1\n2,3\n");
  EXPECT_NE(error_of([&] { load_profiles(dir / "missing.csv", regions); }).find("missing"),
            std::string::npos);
  write_file(dir / "dup.csv", "region_id,x\n0,1\n0,2\n2,3\n");
  EXPECT_NE(error_of([&] { load_profiles(dir / "dup.csv", regions); }).find("duplicate"),
            std::string::npos);
  EXPECT_THROW(load_profiles(dir / "absent.csv", regions), DataError);
}

TEST(LoadProfiles, CsvRoundTripIsBitIdentical) {
  test::TempDir dir("rd");
  Profile p{test::random_vector(64, 5, 1e3), "v", {}};
  p.values[3] = 1.0 / 3.0;
  p.values[4] = -0.0;
  p.values[5] = 5e-310;  // subnormal
  save_profile_csv(dir / "p.csv", p);
  const auto m = load_profiles(dir / "p.csv", RegionSet::with_count(64));
  ASSERT_EQ(m.profiles[0].values.size(), 64u);
  for (std::size_t i = 0; i < 64; ++i) {
    EXPECT_EQ(std::bit_cast<std::uint64_t>(m.profiles[0].values[i]),
              std::bit_cast<std::uint64_t>(p.values[i]))
        << i;
  }
}

TEST(LoadProfiles, MatrixJsonRoundTripIsBitIdentical) {
  test::TempDir dir("rd");
  const auto city = generate_synthetic_city(64, 7, 4, 0.3, 2);
  save_profile_matrix_json(dir / "m.json", city.matrix);
  EXPECT_EQ(peek_region_count(dir / "m.json"), 64u);
  const auto back = load_profiles(dir / "m.json", RegionSet::with_count(64));
  ASSERT_EQ(back.size(), 7u);
  for (std::size_t p = 0; p < 7; ++p) {
    EXPECT_EQ(back.profiles[p].values, city.matrix.profiles[p].values);
    EXPECT_EQ(back.profiles[p].indicator_name, city.matrix.profiles[p].indicator_name);
    ASSERT_TRUE(back.profiles[p].stats.has_value());
    EXPECT_EQ(back.profiles[p].stats->mean, city.matrix.profiles[p].stats->mean);
    EXPECT_EQ(back.source_tags[p], SourceTag::kSynthetic);
  }
  EXPECT_THROW(load_profiles(dir / "m.json", RegionSet::with_count(65)), DataError);
}

TEST(LoadProfiles, PeekCountsCsvRows) {
  test::TempDir dir("rd");
  write_file(dir / "p.csv", "region_id,x\n0,1\n1,2\n\n2,3\n");
  EXPECT_EQ(peek_region_count(dir / "p.csv"), 3u);
}

TEST(ReferenceEmbeddings, RoundTrip) {
  test::TempDir dir("rd");
  ReferenceEmbeddings ref{test::random_matrix(10, 3, 4), "test"};
  save_reference_embeddings(dir / "r.json", ref);
  const auto back = load_reference_embeddings(dir / "r.json");
  EXPECT_EQ(back.matrix, ref.matrix);
  EXPECT_EQ(back.source, "test");
}

TEST(ReferenceEmbeddings, RejectsZeroRow) {
  test::TempDir dir("rd");
  write_file(dir / "r.json", R"({"rows": [[1, 2], [0, 0]]})");
  EXPECT_THROW(load_reference_embeddings(dir / "r.json"), DataError);
}

TEST(Normalize, ArithmeticExample) {
  const Profile out = normalize(Profile{{2, 4, 6}, "x", {}});
  EXPECT_DOUBLE_EQ(out.stats->mean, 4.0);
  EXPECT_NEAR(mean_of(out.values), 0.0, 1e-12);
  EXPECT_NEAR(pop_std_of(out.values), 1.0, 1e-12);
  const double s = std::sqrt(8.0 / 3.0);
  EXPECT_NEAR(out.values[0], -2.0 / s, 1e-15);
}

TEST(Normalize, ConstantProfileGuard) {
  const Profile out = normalize(Profile{{5, 5, 5}, "x", {}});
  EXPECT_EQ(out.values, (std::vector<double>{0, 0, 0}));
  EXPECT_EQ(out.stats->std, 1.0);
  EXPECT_EQ(out.stats->mean, 5.0);
}

TEST(Normalize, RejectsSingleRegion) {
  EXPECT_THROW(normalize(Profile{{1.0}, "x", {}}), DataError);
}

TEST(Normalize, RoundTripPropertyOnRandomProfiles) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto values = test::random_vector(2 + seed % 40, seed, 1.0 + seed);
    for (double& v : values) v += 100.0 * static_cast<double>(seed % 3);
    const Profile raw{values, "x", {}};
    const Profile z = normalize(raw);
    EXPECT_NEAR(mean_of(z.values), 0.0, 1e-9);
    EXPECT_NEAR(pop_std_of(z.values), 1.0, 1e-9);
    EXPECT_GT(z.stats->std, 0.0);
    const Profile back = denormalize(z);
    for (std::size_t i = 0; i < values.size(); ++i) EXPECT_NEAR(back.values[i], values[i], 1e-9);
  }
}

TEST(Denormalize, ArithmeticAndIdentity) {
  Profile p{{-1, 0, 1}, "x", NormStats{4, 2}};
  EXPECT_EQ(denormalize(p).values, (std::vector<double>{2, 4, 6}));
  p.stats = NormStats{0, 1};
  EXPECT_EQ(denormalize(p).values, p.values);
  p.stats.reset();
  EXPECT_THROW(denormalize(p), DataError);
}

TEST(Normalize, SubsetUsesOnlySubsetMoments) {
  const Profile p{{1, 3, 100}, "x", {}};
  const Profile z = normalize_with_subset(p, {0, 1});
  EXPECT_DOUBLE_EQ(z.stats->mean, 2.0);
  EXPECT_DOUBLE_EQ(z.stats->std, 1.0);
  EXPECT_DOUBLE_EQ(z.values[2], 98.0);
}

void expect_partition(const Split& s, std::size_t n) {
  std::vector<int> seen(n, 0);
  for (const auto* part : {&s.train_idx, &s.val_idx, &s.test_idx}) {
    for (std::size_t id : *part) {
      ASSERT_LT(id, n);
      ++seen[id];
    }
  }
  for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(seen[i], 1) << i;
}

TEST(MakeSplit, TenRegionSizesAndDisjointness) {
  const Split s = make_split(RegionSet::with_count(10), {0.7, 0.1, 0.2}, 1);
  EXPECT_EQ(s.train_idx.size(), 7u);
  EXPECT_EQ(s.val_idx.size(), 1u);
  EXPECT_EQ(s.test_idx.size(), 2u);
  expect_partition(s, 10);
}

TEST(MakeSplit, DeterministicAndSeedSensitive) {
  const auto regions = RegionSet::with_count(50);
  const Split a = make_split(regions, {0.7, 0.1, 0.2}, 9);
  const Split b = make_split(regions, {0.7, 0.1, 0.2}, 9);
  const Split c = make_split(regions, {0.7, 0.1, 0.2}, 10);
  EXPECT_EQ(a.train_idx, b.train_idx);
  EXPECT_EQ(a.test_idx, b.test_idx);
  EXPECT_NE(a.test_idx, c.test_idx);
}

TEST(MakeSplit, PartitionPropertyAcrossSizes) {
  for (std::size_t n : {3u, 4u, 7u, 10u, 64u, 267u}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Split s = make_split(RegionSet::with_count(n), {0.7, 0.1, 0.2}, seed);
      expect_partition(s, n);
      EXPECT_FALSE(s.train_idx.empty());
      EXPECT_FALSE(s.val_idx.empty());
      EXPECT_FALSE(s.test_idx.empty());
    }
  }
  const Split s = make_split(RegionSet::with_count(267), {0.7, 0.1, 0.2}, 0);
  EXPECT_EQ(s.train_idx.size() + s.val_idx.size() + s.test_idx.size(), 267u);
}

TEST(MakeSplit, RejectsBadFractions) {
  const auto regions = RegionSet::with_count(10);
  EXPECT_THROW(make_split(regions, {0.7, 0.0, 0.3}, 0), ConfigError);
  EXPECT_THROW(make_split(regions, {0.7, 0.2, 0.2}, 0), ConfigError);
}

TEST(MakeSplit, FileRoundTripAndValidation) {
  test::TempDir dir("rd");
  const Split s = make_split(RegionSet::with_count(20), {0.6, 0.2, 0.2}, 3);
  save_split(dir / "s.json", s);
  const Split back = load_split(dir / "s.json", 20);
  EXPECT_EQ(back.train_idx, s.train_idx);
  EXPECT_EQ(back.val_idx, s.val_idx);
  EXPECT_EQ(back.test_idx, s.test_idx);
  EXPECT_THROW(load_split(dir / "s.json", 21), DataError);
}

TEST(SyntheticCity, NoiselessProfilesLieInLatentSpan) {
  const auto city = generate_synthetic_city(40, 25, 5, 0.0, 11);
  Eigen::MatrixXd z(40, 5);
  for (std::size_t r = 0; r < 40; ++r)
    for (std::size_t c = 0; c < 5; ++c) z(r, c) = city.latent.matrix(r, c);
  const auto qr = z.colPivHouseholderQr();
  for (const auto& p : city.matrix.profiles) {
    const Eigen::Map<const Eigen::VectorXd> y(p.values.data(), 40);
    const Eigen::VectorXd w = qr.solve(y);
    EXPECT_LT((z * w - y).norm(), 1e-8);
  }
}

TEST(SyntheticCity, NoisyProfilesLeaveTheSpan) {
  const auto city = generate_synthetic_city(40, 3, 5, 0.5, 11);
  Eigen::MatrixXd z(40, 5);
  for (std::size_t r = 0; r < 40; ++r)
    for (std::size_t c = 0; c < 5; ++c) z(r, c) = city.latent.matrix(r, c);
  const Eigen::Map<const Eigen::VectorXd> y(city.matrix.profiles[0].values.data(), 40);
  const Eigen::VectorXd w = z.colPivHouseholderQr().solve(y);
  EXPECT_GT((z * w - y).norm(), 1e-3);
}

TEST(SyntheticCity, DeterministicAndNormalized) {
  const auto a = generate_synthetic_city(64, 200, 8, 0.1, 5);
  const auto b = generate_synthetic_city(64, 200, 8, 0.1, 5);
  ASSERT_EQ(a.matrix.size(), 200u);
  for (std::size_t p = 0; p < 200; ++p) {
    EXPECT_EQ(a.matrix.profiles[p].values, b.matrix.profiles[p].values);
    EXPECT_NEAR(mean_of(a.matrix.profiles[p].values), 0.0, 1e-9);
    EXPECT_NEAR(pop_std_of(a.matrix.profiles[p].values), 1.0, 1e-9);
  }
  EXPECT_EQ(a.latent.matrix, b.latent.matrix);
  EXPECT_EQ(a.latent.matrix.rows, 64u);
  EXPECT_EQ(a.latent.matrix.cols, 8u);
}

TEST(SyntheticCity, RejectsBadPreconditions) {
  EXPECT_THROW(generate_synthetic_city(1, 2, 1, 0.1, 0), ConfigError);
  EXPECT_THROW(generate_synthetic_city(8, 2, 8, 0.1, 0), ConfigError);
  EXPECT_THROW(generate_synthetic_city(8, 2, 2, -0.1, 0), ConfigError);
}

TEST(SourceTag, StringRoundTrip) {
  for (auto tag : {SourceTag::kPoiCategory, SourceTag::kMobilityInflow,
                   SourceTag::kMobilityOutflow, SourceTag::kSynthetic, SourceTag::kIndicator}) {
    EXPECT_EQ(parse_source_tag(to_string(tag)), tag);
  }
}

}  // namespace
}  // namespace uicl
