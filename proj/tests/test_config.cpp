#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "pascl/config.hpp"
#include "pascl/errors.hpp"

using namespace pascl;

namespace {

std::string key_of(const std::string& text) {
  try {
    parse_config_text(text).validate();
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<none>";
}

}  // namespace

TEST(Config, DefaultsValidate) {
  ExperimentConfig c;
  c.sync();
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.data.num_classes, 10u);
  EXPECT_EQ(c.data.dim, 2u);
  EXPECT_EQ(c.data.rho, 100.0);
  EXPECT_EQ(c.data.tail_fraction, 0.5);
  EXPECT_EQ(c.data.n_max, 500u);
  EXPECT_EQ(c.train.weights.tau, 0.1);
  EXPECT_EQ(c.train.weights.lambda1, 0.5);
  EXPECT_EQ(c.train.weights.lambda2, 0.1);
  EXPECT_EQ(c.train.variant, ContrastVariant::kPascl);
}

TEST(Config, RenderParseRoundTrip) {
  ExperimentConfig c;
  apply_setting(c, "rho", "37.5");
  apply_setting(c, "lambda2", "0.30000000000000004");
  apply_setting(c, "variant", "asymmetric");
  apply_setting(c, "optimizer", "sgd");
  apply_setting(c, "schedule", "step");
  apply_setting(c, "ood_placement", "tail");
  apply_setting(c, "seed", "12345678901");
  const std::string text = render_config(c);
  const ExperimentConfig back = parse_config_text(text);
  EXPECT_EQ(render_config(back), text);
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(back.train.weights.lambda2, 0.30000000000000004);
  EXPECT_EQ(back.data.seed, 12345678901u);
}

TEST(Config, EveryKeyIsRendered) {
  const std::string text = render_config(ExperimentConfig{});
  for (const auto& k : config_keys()) {
    EXPECT_NE(text.find(k + " = "), std::string::npos) << k;
  }
}

TEST(Config, CommentsAndBlankLinesSkipped) {
  const auto c = parse_config_text("# comment\n\n  k = 0.25  \n\tseed=4\n");
  EXPECT_EQ(c.data.tail_fraction, 0.25);
  EXPECT_EQ(c.train.seed, 4u);
  EXPECT_EQ(c.data.seed, 4u);
}

TEST(Config, UnknownKeyNamed) { EXPECT_EQ(key_of("lamda2 = 0.1\n"), "lamda2"); }

TEST(Config, MalformedValuesNamed) {
  EXPECT_EQ(key_of("rho = abc\n"), "rho");
  EXPECT_EQ(key_of("n1 = -3\n"), "n1");
  EXPECT_EQ(key_of("variant = supcon\n"), "variant");
  EXPECT_EQ(key_of("optimizer = rmsprop\n"), "optimizer");
  EXPECT_EQ(key_of("abf_scope = everything\n"), "abf_scope");
}

TEST(Config, OutOfRangeValuesNamed) {
  EXPECT_EQ(key_of("rho = 0.5\n"), "rho");
  EXPECT_EQ(key_of("k = 2\n"), "k");
  EXPECT_EQ(key_of("n1 = 0\n"), "n1");
  EXPECT_EQ(key_of("lr2 = 0\n"), "lr2");
  EXPECT_EQ(key_of("tau = 0\n"), "tau");
  EXPECT_EQ(key_of("batch_in = 1\n"), "batch_in");
  EXPECT_EQ(key_of("n_ood_clusters = 11\n"), "n_ood_clusters");
}

TEST(Config, MissingEqualsRejected) {
  EXPECT_THROW(parse_config_text("rho 100\n"), ConfigError);
}

TEST(Config, ShapeFollowsData) {
  const auto c = parse_config_text("C = 4\nd = 3\n");
  EXPECT_EQ(c.net.num_classes, 4u);
  EXPECT_EQ(c.net.input_dim, 3u);
  EXPECT_EQ(c.train.weights.num_classes, 4u);
}

TEST(Config, HashChangesWithAnyKey) {
  ExperimentConfig a, b;
  apply_setting(b, "tau", "0.2");
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Config, MissingFileIsConfigError) {
  EXPECT_THROW(load_config_file("/nonexistent/pascl.cfg"), ConfigError);
}

TEST(Config, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "pascl_cfg_roundtrip.txt";
  ExperimentConfig c;
  apply_setting(c, "n2", "0");
  {
    std::ofstream os(path);
    os << render_config(c);
  }
  EXPECT_EQ(render_config(load_config_file(path)), render_config(c));
}
