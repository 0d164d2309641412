#include "doctest.h"
#include "rpr/config.hpp"

#include <algorithm>

using namespace rpr;

TEST_CASE("settings parse and validate") {
  RunConfig c;
  apply_setting(c, "net.k", "24");
  apply_setting(c, " optim.lr = 0.0005 ");
  apply_setting(c, "augment.rotation=so3");
  apply_setting(c, "paths.train_manifest=/data/train.csv");
  CHECK(c.net.k == 24);
  CHECK(c.train.optimizer.lr == 0.0005);
  CHECK(c.train.augment.rotation == RotationAugment::kSO3);
  CHECK(c.train_manifest == "/data/train.csv");
  CHECK_THROWS_AS(apply_setting(c, "net.bogus=1"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "net.k=abc"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "net.k=3.5"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "augment.rotation=x"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "net.k"), ConfigError);
  try {
    apply_setting(c, "nope=1");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("'nope'") != std::string::npos);
  }
}

TEST_CASE("text round trip") {
  RunConfig c;
  c.apply_desk();
  c.train.seed = 7;
  c.train.optimizer.lr = 3e-4;
  c.synth.occlusion_max = 0.125;
  c.net.attention_pool = AttentionPool::kPerSeed;
  const std::string text = config_to_text(c);
  RunConfig back;
  apply_config_text(back, text);
  CHECK(config_to_text(back) == text);
  CHECK(back.net.n_seeds == 256);
  CHECK(back.train.optimizer.lr == 3e-4);
  CHECK(std::count(text.begin(), text.end(), '\n') == static_cast<long>(config_keys().size()));
  CHECK(net_config_from_text(net_config_to_text(c.net)).attention_pool == AttentionPool::kPerSeed);
}

TEST_CASE("comments, blank lines and line numbers") {
  RunConfig c;
  apply_config_text(c, "# header\n\nnet.k=20  # trailing\n");
  CHECK(c.net.k == 20);
  try {
    apply_config_text(c, "net.k=20\n\nnet.zzz=1\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("(line 3)") != std::string::npos);
  }
  CHECK_THROWS_AS(load_config("/nonexistent/rpr.cfg"), ConfigError);
}

TEST_CASE("whole-config validation") {
  RunConfig c;
  CHECK_NOTHROW(c.validate());
  c.precision = 16;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig{};
  c.net.final_channels = 10;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig{};
  c.train.optimizer.lr = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig{};
  c.train.triplet.pos_radius = 60.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
