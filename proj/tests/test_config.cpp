#include <gtest/gtest.h>

#include <fstream>

#include "test_support.hpp"
#include "uicl/config.hpp"
#include "uicl/errors.hpp"

namespace uicl {
namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config_text(text, "cfg");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

TEST(ConfigParser, CommentsWhitespaceAndValues) {
  const auto kv = parse_config_text("# header\n\n  lr = 0.001  # trailing\nlayers=2\r\nout = runs/a\n", "cfg");
  ASSERT_EQ(kv.size(), 3u);
  EXPECT_EQ(kv.at("lr"), "0.001");
  EXPECT_EQ(kv.at("layers"), "2");
  EXPECT_EQ(kv.at("out"), "runs/a");
}

TEST(ConfigParser, ErrorsNameTheLine) {
  EXPECT_NE(error_of("lr = 1\nbogus = 3\n").find("cfg:2"), std::string::npos);
  EXPECT_NE(error_of("lr = 1\nbogus = 3\n").find("bogus"), std::string::npos);
  EXPECT_NE(error_of("lr = 1\n\nlr = 2\n").find("cfg:3: duplicate"), std::string::npos);
  EXPECT_NE(error_of("layers = two\n").find("cfg:1"), std::string::npos);
  EXPECT_NE(error_of("just words\n").find("key = value"), std::string::npos);
  EXPECT_FALSE(error_of("epochs = -1\n").empty());
  EXPECT_FALSE(error_of("lr = 1e-3x\n").empty());
  EXPECT_FALSE(error_of("seed = \n").empty());
}

TEST(ConfigParser, MissingFile) {
  EXPECT_THROW(load_config_file("/nonexistent/uicl.cfg"), ConfigError);
}

TEST(RunConfig, Defaults) {
  const RunConfig c;
  EXPECT_EQ(c.dim, 128u);
  EXPECT_EQ(c.layers, 4u);
  EXPECT_EQ(c.heads, 4u);
  EXPECT_EQ(c.T, 1000u);
  EXPECT_DOUBLE_EQ(c.lr, 4e-4);
  EXPECT_EQ(c.epochs, 1000u);
  EXPECT_EQ(c.batch_size, 128u);
  EXPECT_DOUBLE_EQ(c.lambda_mask, 0.3);
  EXPECT_DOUBLE_EQ(c.lambda_align, 0.1);
  EXPECT_EQ(c.rounds, 10u);
  EXPECT_EQ(c.threads, 1u);
  const ModelConfig m = c.model_config(267, 128);
  EXPECT_EQ(m.n_regions, 267u);
  EXPECT_EQ(m.ref_dim, 128u);
  EXPECT_EQ(m.steps, 1000u);
  const TrainConfig t = c.train_config();
  EXPECT_DOUBLE_EQ(t.lr, 4e-4);
  EXPECT_EQ(t.batch_size, 128u);
}

TEST(RunConfig, FormatParseRoundTrip) {
  RunConfig a;
  a.lr = 1.0 / 3.0;
  a.layers = 7;
  a.seed = 18446744073709551615ull;
  a.out = "some/dir";
  a.noise_std = 1e-300;
  const std::string text = format_run_config(a);
  RunConfig b;
  for (const auto& [k, v] : parse_config_text(text, "fmt")) set_run_config_value(b, k, v);
  EXPECT_EQ(format_run_config(b), text);
  EXPECT_EQ(b.lr, a.lr);
  EXPECT_EQ(b.seed, a.seed);
  EXPECT_EQ(b.out, a.out);
  for (const auto& key : run_config_keys()) {
    EXPECT_NE(text.find(key + " = "), std::string::npos) << key;
  }
}

TEST(RunConfig, FileLoads) {
  test::TempDir dir("cfg");
  std::ofstream(dir / "a.cfg") << "epochs = 5\n";
  EXPECT_EQ(load_config_file(dir / "a.cfg").at("epochs"), "5");
  std::ofstream(dir / "b.cfg") << "epochs = 5\nfoo = 1\n";
  try {
    load_config_file(dir / "b.cfg");
    ADD_FAILURE();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("b.cfg:2"), std::string::npos);
  }
}

}  // namespace
}  // namespace uicl
