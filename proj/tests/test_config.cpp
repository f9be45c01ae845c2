#include "doctest.h"
#include "pathdiff/config.hpp"
#include "pathdiff/error.hpp"
#include "support.hpp"

using namespace pathdiff;

namespace {

std::string config_error(const Json& doc) {
  try {
    run_config_from_json(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("empty document yields the documented defaults") {
  const RunConfig c = run_config_from_json(Json::object());
  CHECK(c.seed == 1);
  CHECK(c.schedule.steps == 100);
  CHECK(c.schedule.beta_start == 1e-4);
  CHECK(c.schedule.beta_end == 0.02);
  CHECK(c.reverse.intervals == 10);
  CHECK(c.reverse.t_end == 3.0);
  CHECK(c.denoiser.d_model == 64);
  CHECK(c.denoiser.layers == 2);
  CHECK(c.denoiser.heads == 4);
  CHECK(c.denoiser.bev_rows == 8);
  CHECK(c.grid.height == 64);
  CHECK(c.grid.resolution == 0.5);
  CHECK(c.training.learning_rate == 1e-3);
  CHECK(c.training.beta1 == 0.9);
  CHECK(c.training.beta2 == 0.999);
  CHECK(c.training.epsilon == 1e-8);
  CHECK(c.stats.alpha == 0.05);
  CHECK(c.eval.l2_mode == L2Mode::kAverage);
  CHECK_NOTHROW(validate(c));
}

TEST_CASE("configs round-trip through JSON") {
  RunConfig c;
  c.seed = 99;
  c.denoiser.use_tse = false;
  c.scenario.max_obstacles = 3;
  c.eval.l2_mode = L2Mode::kPoint;
  c.paths.model = "elsewhere.bin";
  const RunConfig back = run_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.denoiser == c.denoiser);
}

TEST_CASE("unknown keys are rejected by dotted name") {
  CHECK(config_error(Json{{"sead", 3}}).find("\"sead\"") != std::string::npos);
  CHECK(config_error(Json{{"denoiser", {{"d_modle", 3}}}}).find("\"denoiser.d_modle\"") != std::string::npos);
  CHECK(config_error(Json{{"scenario", {{"ego_lenght", 3}}}}).find("scenario.ego_lenght") != std::string::npos);
}

TEST_CASE("wrong value types name the key") {
  CHECK(config_error(Json{{"denoiser", {{"layers", "two"}}}}).find("denoiser.layers") != std::string::npos);
  CHECK(config_error(Json{{"denoiser", {{"use_tse", 1}}}}).find("denoiser.use_tse") != std::string::npos);
  CHECK(config_error(Json{{"training", {{"steps", -5}}}}).find("training.steps") != std::string::npos);
  CHECK(config_error(Json{{"eval", {{"l2_mode", "median"}}}}).find("eval.l2_mode") != std::string::npos);
}

TEST_CASE("overrides") {
  Json doc = Json::object();
  apply_override(doc, "denoiser.layers=3");
  apply_override(doc, "paths.model=out/model.bin");
  apply_override(doc, "denoiser.use_caf=false");
  const RunConfig c = run_config_from_json(doc);
  CHECK(c.denoiser.layers == 3);
  CHECK(c.paths.model == "out/model.bin");
  CHECK_FALSE(c.denoiser.use_caf);
  CHECK_THROWS_AS(apply_override(doc, "no-equals-sign"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "denoiser.layers.deep=1"), ConfigError);
}

TEST_CASE("config files and validation") {
  const auto dir = testing::scratch_dir("config");
  testing::write_file(dir / "run.json", R"({"seed": 5, "training": {"steps": 7}})");
  const auto path = dir / "run.json";
  const RunConfig c = load_run_config(&path, {"training.steps=9"});
  CHECK(c.seed == 5);
  CHECK(c.training.steps == 9);

  testing::write_file(dir / "bad.json", "{ not json");
  const auto bad = dir / "bad.json";
  CHECK_THROWS_AS(load_run_config(&bad, {}), ConfigError);
  CHECK_THROWS_AS(load_run_config(nullptr, {"denoiser.heads=5"}), ConfigError);
  CHECK_THROWS_AS(load_run_config(nullptr, {"denoiser.horizon=4"}), ConfigError);
  CHECK_THROWS_AS(load_run_config(nullptr, {"stats.alpha=1.5"}), ConfigError);
  CHECK_THROWS_AS(load_run_config(nullptr, {"grid.height=63"}), ConfigError);
}

TEST_CASE("model and noise sections read strictly") {
  const NoiseModel m{0.1, -0.2, 0.3, 0.4, 17};
  const NoiseModel back = noise_model_from_json(to_json(m));
  CHECK(back.mean_x == m.mean_x);
  CHECK(back.std_y == m.std_y);
  CHECK(back.sample_count == 17);
  Json extra = to_json(m);
  extra["oops"] = 1;
  CHECK_THROWS_AS(noise_model_from_json(extra), ConfigError);

  const Standardizer s{1.0, 2.0, 3.0, 4.0};
  CHECK(standardizer_from_json(to_json(s)) == s);
  DenoiserConfig d;
  d.bev_cols = 4;
  CHECK(denoiser_config_from_json(to_json(d)) == d);
}
