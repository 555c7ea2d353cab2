#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "masktune/config.hpp"

using namespace masktune;

namespace {

TEST(ConfigParser, SectionsCommentsAndValues) {
  const auto kv = parse_config_text(R"(
# comment
[train]
mode = "mask_tuning"   # trailing
alpha = 0.3
alpha_grid = [0.0, 0.5, 1.0]
linear_decay = false

[model]
d_model = 32
)");
  EXPECT_EQ(kv.at("train.mode"), "\"mask_tuning\"");
  const RunConfig c = build_config(kv);
  EXPECT_EQ(c.train.mode, Mode::mask_tuning);
  EXPECT_EQ(c.train.alpha, 0.3);
  EXPECT_EQ(c.train.alpha_grid, (std::vector<double>{0.0, 0.5, 1.0}));
  EXPECT_FALSE(c.train.linear_decay);
  EXPECT_EQ(c.train.model.d_model, 32u);
}

TEST(ConfigParser, ErrorsNameTheLine) {
  auto message = [](const std::string& text) {
    try {
      parse_config_text(text, "cfg");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message("[train]\nalpah = 0.1\n").find("cfg:2"), std::string::npos);
  EXPECT_NE(message("[train]\nalpha = 0.1\nalpha = 0.2\n").find("duplicate"), std::string::npos);
  EXPECT_NE(message("[trian]\n").find("unknown section"), std::string::npos);
  EXPECT_NE(message("alpha = 0.1\n").find("outside"), std::string::npos);
  EXPECT_NE(message("[train]\nalpha 0.1\n").find("key = value"), std::string::npos);
}

TEST(ConfigBuild, ValidationNamesField) {
  auto field_of = [](KeyValues kv) {
    try {
      build_config(kv);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(field_of({{"train.alpha", "1.5"}}).find("alpha"), std::string::npos);
  EXPECT_NE(field_of({{"masking.mask_rate", "0"}}).find("mask_rate"), std::string::npos);
  EXPECT_NE(field_of({{"model.n_heads", "3"}}).find("n_heads"), std::string::npos);
  EXPECT_NE(field_of({{"train.mode", "joint"}}).find("mode"), std::string::npos);
  EXPECT_NE(field_of({{"train.epochs", "-1"}}).find("epochs"), std::string::npos);
  EXPECT_NE(field_of({{"model.max_len", "12"}}).find("max_len"), std::string::npos);
  EXPECT_NE(field_of({{"data.source", "files"}}).find("data.train"), std::string::npos);
  EXPECT_THROW(build_config({{"train.bogus", "1"}}), ConfigError);
}

TEST(ConfigOverride, BareAndQualifiedKeys) {
  KeyValues kv;
  apply_override(kv, "alpha", "0.2");
  apply_override(kv, "model.d_model", "24");
  EXPECT_EQ(kv.at("train.alpha"), "0.2");
  EXPECT_EQ(kv.at("model.d_model"), "24");
  EXPECT_THROW(apply_override(kv, "nonexistent", "1"), ConfigError);
  // Every bare key must be unique or rejected as ambiguous.
  for (const auto& full : known_keys()) {
    const std::string bare = full.substr(full.find('.') + 1);
    std::size_t n = 0;
    for (const auto& other : known_keys()) n += other.substr(other.find('.') + 1) == bare;
    KeyValues tmp;
    if (n == 1) {
      apply_override(tmp, bare, "1");
      EXPECT_TRUE(tmp.contains(full));
    } else {
      EXPECT_THROW(apply_override(tmp, bare, "1"), ConfigError) << bare;
    }
  }
}

TEST(ConfigBuild, DataSeedDerivesFromRootUnlessExplicit) {
  const RunConfig a = build_config({{"train.seed", "1"}});
  const RunConfig b = build_config({{"train.seed", "2"}});
  EXPECT_NE(resolved_spec(a.data, 1).seed, resolved_spec(b.data, 2).seed);
  const RunConfig c = build_config({{"data.data_seed", "77"}});
  EXPECT_EQ(resolved_spec(c.data, 1).seed, 77u);
  EXPECT_EQ(resolved_spec(c.data, 9).seed, 77u);
}

TEST(ConfigFile, ShippedDefaultMatchesBuiltIns) {
  const auto path = std::filesystem::path(MASKTUNE_SOURCE_DIR) / "configs" / "default.toml";
  EXPECT_EQ(build_config(read_config_file(path)).to_json(), build_config({}).to_json());
}

TEST(ConfigFile, MissingFileIsConfigError) {
  EXPECT_THROW(read_config_file("/nonexistent/masktune.toml"), ConfigError);
}

TEST(ConfigBuild, FileSourceLoadsAndCarvesValidation) {
  namespace fs = std::filesystem;
  const auto d = fs::path(MASKTUNE_TEST_TMP) / "config";
  fs::create_directories(d);
  {
    std::ofstream tr(d / "train.tsv"), te(d / "test.tsv");
    tr << "text\tlabel\n";
    te << "text\tlabel\n";
    for (int i = 0; i < 40; ++i) tr << "word" << i % 7 << " x\t" << (i % 2 ? "positive" : "negative") << '\n';
    for (int i = 0; i < 10; ++i) te << "word" << i << "\t" << i % 2 << '\n';
  }
  const RunConfig rc = build_config({{"data.source", "files"},
                                     {"data.train", (d / "train.tsv").string()},
                                     {"data.test_indist", (d / "test.tsv").string()},
                                     {"data.ood", "[\"shifted=" + (d / "test.tsv").string() + "\"]"},
                                     {"data.validation_fraction", "0.25"}});
  const Dataset ds = load_dataset(rc.data, 0);
  EXPECT_EQ(ds.train.examples.size() + ds.dev.examples.size(), 40u);
  EXPECT_EQ(ds.dev.examples.size(), 10u);
  EXPECT_EQ(ds.test_indist.examples.size(), 10u);
  ASSERT_EQ(ds.ood.size(), 1u);
  EXPECT_EQ(ds.ood[0].name, "shifted");
}

}  // namespace
