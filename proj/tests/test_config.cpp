#include <doctest.h>

#include <fstream>
#include <set>

#include "scanfill/config.hpp"
#include "test_support.hpp"

using namespace scanfill;

TEST_CASE("every field has a default and a unique key") {
  RunConfig c;
  std::set<std::string> keys;
  for (const auto& f : config_fields()) {
    CHECK(keys.insert(f.key).second);
    CHECK_FALSE(f.help.empty());
    CHECK_FALSE(f.get(c).is_null());
  }
  CHECK(keys.size() == config_fields().size());
  const auto j = to_json(c);
  CHECK(j["train.lr"] == 1e-4);
  CHECK(j["train.epochs"] == 600);
  CHECK(j["train.decay_every"] == 200);
  CHECK(j["train.lr_decay"] == 0.5);
  CHECK(j["loss.alpha_gen"] == 1.0);
  CHECK(j["data.categories"] == nlohmann::json({"table", "lamp", "hull"}));
  CHECK_NOTHROW(c.finalize());
}

TEST_CASE("to_json round-trips through apply_json") {
  RunConfig a;
  set_option(a, "prn.m_out", "512");
  set_option(a, "data.categories", "lamp,hull");
  set_option(a, "render.dare", "false");
  set_option(a, "train.lr", "0.002");
  set_option(a, "out", "elsewhere");
  RunConfig b;
  apply_json(b, to_json(a));
  CHECK(to_json(b) == to_json(a));
  CHECK(b.prn.m_out == 512);
  CHECK(b.data.categories == std::vector<Category>{Category::lamp, Category::hull});
  CHECK_FALSE(b.dare);
  CHECK(b.lr == 0.002);
}

TEST_CASE("file values then flags, flags win") {
  const auto dir = test::scratch_dir("config");
  {
    std::ofstream os(dir / "run.json");
    os << R"({"train.epochs": 7, "train.lr": 0.01, "seed": 5})";
  }
  auto c = load_run_config(dir / "run.json");
  CHECK(c.epochs == 7);
  CHECK(c.seed == 5);
  set_option(c, "train.lr", "0.5");
  CHECK(c.lr == 0.5);
  CHECK(c.epochs == 7);

  c.finalize();
  CHECK(c.data.seed == 5);
  CHECK(c.prn.n_in == c.data.scan.n_in);
  CHECK(c.data.m_out == c.prn.m_out);
  const auto t = train_config(c, Category::hull);
  CHECK(t.category == "hull");
  CHECK(t.out_dir == c.out / "hull");
  CHECK(t.lr == 0.5);
  CHECK(t.epochs == 7);
}

TEST_CASE("config errors name the field") {
  RunConfig c;
  CHECK_THROWS_WITH_AS(set_option(c, "train.speed", "1"), doctest::Contains("train.speed"), ConfigError);
  CHECK_THROWS_WITH_AS(set_option(c, "train.lr", "fast"), doctest::Contains("train.lr"), ConfigError);
  CHECK_THROWS_WITH_AS(set_option(c, "train.epochs", "-3"), doctest::Contains("train.epochs"), ConfigError);
  CHECK_THROWS_WITH_AS(set_option(c, "render.dare", "maybe"), doctest::Contains("render.dare"), ConfigError);
  CHECK_THROWS_WITH_AS(set_option(c, "data.categories", "table,chair"), doctest::Contains("data.categories"),
                       ConfigError);
  CHECK_THROWS_AS(apply_json(c, nlohmann::json::array()), ConfigError);
  CHECK_THROWS_WITH_AS(apply_json(c, {{"prn.n_coarse", "many"}}), doctest::Contains("prn.n_coarse"), ConfigError);

  RunConfig bad;
  bad.prn.m_out = 1000;
  CHECK_THROWS_AS(bad.finalize(), ConfigError);
  bad = RunConfig{};
  bad.weights.alpha_rend = -1;
  CHECK_THROWS_WITH_AS(bad.finalize(), doctest::Contains("loss.alpha_rend"), ConfigError);
  bad = RunConfig{};
  bad.data.scan.width = 16;
  CHECK_THROWS_WITH_AS(bad.finalize(), doctest::Contains("data.width"), ConfigError);

  const auto dir = test::scratch_dir("config_bad");
  CHECK_THROWS_AS(load_run_config(dir / "missing.json"), IoError);
  {
    std::ofstream os(dir / "broken.json");
    os << "{ not json";
  }
  CHECK_THROWS_AS(load_run_config(dir / "broken.json"), ConfigError);
}
