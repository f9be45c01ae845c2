#include "pathdiff/config.hpp"

#include <fstream>
#include <set>

#include "pathdiff/error.hpp"
#include "pathdiff/rng.hpp"

namespace pathdiff {

namespace {

// Reads typed fields out of one JSON object and remembers which keys were
// consumed so leftovers can be reported.
class StrictObject {
 public:
  StrictObject(const Json& j, std::string prefix) : json_(j), prefix_(std::move(prefix)) {
    if (!j.is_object()) throw ConfigError(label("") + ": expected an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = json_.find(key);
    if (it == json_.end()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError(label(key) + ": expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw ConfigError(label(key) + ": expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (it->is_number_integer() && !it->is_number_unsigned() && it->template get<std::int64_t>() < 0)
            throw ConfigError(label(key) + ": expected a non-negative integer");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError(label(key) + ": expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw ConfigError(label(key) + ": expected a string");
      }
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(label(key) + ": value has the wrong type");
    }
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    auto it = json_.find(key);
    return it == json_.end() ? nullptr : &*it;
  }

  std::string label(const std::string& key) const {
    if (prefix_.empty()) return key;
    return key.empty() ? prefix_ : prefix_ + "." + key;
  }

  void finish() const {
    for (auto it = json_.begin(); it != json_.end(); ++it) {
      if (!seen_.contains(it.key())) throw ConfigError("unknown config key \"" + label(it.key()) + "\"");
    }
  }

 private:
  const Json& json_;
  std::string prefix_;
  std::set<std::string, std::less<>> seen_;
};

ScenarioConfig scenario_from_json(const Json& j, const std::string& prefix) {
  ScenarioConfig c;
  StrictObject o(j, prefix);
  o.read("extent", c.extent);
  o.read("min_obstacles", c.min_obstacles);
  o.read("max_obstacles", c.max_obstacles);
  o.read("min_speed", c.min_speed);
  o.read("max_speed", c.max_speed);
  o.read("max_accel", c.max_accel);
  o.read("max_curvature", c.max_curvature);
  o.read("stop_probability", c.stop_probability);
  o.read("straight_probability", c.straight_probability);
  o.read("near_path_fraction", c.near_path_fraction);
  o.read("near_gap_min", c.near_gap_min);
  o.read("near_gap_max", c.near_gap_max);
  o.read("obstacle_max_speed", c.obstacle_max_speed);
  o.read("static_probability", c.static_probability);
  o.read("ego_length", c.ego.length);
  o.read("ego_width", c.ego.width);
  o.read("horizon", c.horizon);
  o.read("dt", c.dt);
  o.read("max_retries", c.max_retries);
  o.finish();
  return c;
}

GridConfig grid_from_json(const Json& j, const std::string& prefix) {
  GridConfig c;
  StrictObject o(j, prefix);
  o.read("channels", c.channels);
  o.read("height", c.height);
  o.read("width", c.width);
  o.read("resolution", c.resolution);
  o.finish();
  return c;
}

}  // namespace

Json to_json(const ScenarioConfig& c) {
  return Json{{"extent", c.extent},
              {"min_obstacles", c.min_obstacles},
              {"max_obstacles", c.max_obstacles},
              {"min_speed", c.min_speed},
              {"max_speed", c.max_speed},
              {"max_accel", c.max_accel},
              {"max_curvature", c.max_curvature},
              {"stop_probability", c.stop_probability},
              {"straight_probability", c.straight_probability},
              {"near_path_fraction", c.near_path_fraction},
              {"near_gap_min", c.near_gap_min},
              {"near_gap_max", c.near_gap_max},
              {"obstacle_max_speed", c.obstacle_max_speed},
              {"static_probability", c.static_probability},
              {"ego_length", c.ego.length},
              {"ego_width", c.ego.width},
              {"horizon", c.horizon},
              {"dt", c.dt},
              {"max_retries", c.max_retries}};
}

Json to_json(const GridConfig& c) {
  return Json{{"channels", c.channels}, {"height", c.height}, {"width", c.width}, {"resolution", c.resolution}};
}

Json to_json(const DenoiserConfig& c) {
  return Json{{"d_model", c.d_model},       {"layers", c.layers},       {"heads", c.heads},
              {"bev_rows", c.bev_rows},     {"bev_cols", c.bev_cols},   {"use_tse", c.use_tse},
              {"use_caf", c.use_caf},       {"use_cap", c.use_cap},     {"use_bfc", c.use_bfc},
              {"horizon", c.horizon},       {"bev_channels", c.bev_channels},
              {"ffn_multiplier", c.ffn_multiplier}};
}

Json to_json(const Standardizer& s) {
  return Json{{"mean_x", s.mean_x}, {"mean_y", s.mean_y}, {"std_x", s.std_x}, {"std_y", s.std_y}};
}

Json to_json(const NoiseModel& m) {
  return Json{{"mean_x", m.mean_x},
              {"mean_y", m.mean_y},
              {"std_x", m.std_x},
              {"std_y", m.std_y},
              {"sample_count", m.sample_count}};
}

Json to_json(const RunConfig& c) {
  return Json{
      {"seed", c.seed},
      {"jobs", c.jobs},
      {"scenario", to_json(c.scenario)},
      {"grid", to_json(c.grid)},
      {"noise", {{"mean_x", c.noise.mean_x}, {"mean_y", c.noise.mean_y}, {"std_x", c.noise.std_x},
                 {"std_y", c.noise.std_y}}},
      {"schedule",
       {{"steps", c.schedule.steps}, {"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end}}},
      {"reverse",
       {{"intervals", c.reverse.intervals}, {"t_start", c.reverse.t_start}, {"t_end", c.reverse.t_end}}},
      {"denoiser", to_json(c.denoiser)},
      {"training",
       {{"per_scenario", c.training.per_scenario},
        {"context_seed", c.training.context_seed},
        {"learning_rate", c.training.learning_rate},
        {"beta1", c.training.beta1},
        {"beta2", c.training.beta2},
        {"epsilon", c.training.epsilon},
        {"batch_size", c.training.batch_size},
        {"steps", c.training.steps}}},
      {"stats", {{"alpha", c.stats.alpha}, {"pool", c.stats.pool}}},
      {"eval", {{"l2_mode", c.eval.l2_mode == L2Mode::kPoint ? "point" : "avg"}}},
      {"paths",
       {{"scenarios", c.paths.scenarios},
        {"responses", c.paths.responses},
        {"noise", c.paths.noise},
        {"model", c.paths.model},
        {"loss", c.paths.loss},
        {"report", c.paths.report}}},
  };
}

DenoiserConfig denoiser_config_from_json(const Json& j, const std::string& prefix) {
  DenoiserConfig c;
  StrictObject o(j, prefix);
  o.read("d_model", c.d_model);
  o.read("layers", c.layers);
  o.read("heads", c.heads);
  o.read("bev_rows", c.bev_rows);
  o.read("bev_cols", c.bev_cols);
  o.read("use_tse", c.use_tse);
  o.read("use_caf", c.use_caf);
  o.read("use_cap", c.use_cap);
  o.read("use_bfc", c.use_bfc);
  o.read("horizon", c.horizon);
  o.read("bev_channels", c.bev_channels);
  o.read("ffn_multiplier", c.ffn_multiplier);
  o.finish();
  return c;
}

Standardizer standardizer_from_json(const Json& j, const std::string& prefix) {
  Standardizer s;
  StrictObject o(j, prefix);
  o.read("mean_x", s.mean_x);
  o.read("mean_y", s.mean_y);
  o.read("std_x", s.std_x);
  o.read("std_y", s.std_y);
  o.finish();
  return s;
}

NoiseModel noise_model_from_json(const Json& j, const std::string& prefix) {
  NoiseModel m;
  StrictObject o(j, prefix);
  o.read("mean_x", m.mean_x);
  o.read("mean_y", m.mean_y);
  o.read("std_x", m.std_x);
  o.read("std_y", m.std_y);
  o.read("sample_count", m.sample_count);
  o.finish();
  if (!(m.std_x >= 0.0) || !(m.std_y >= 0.0)) throw ConfigError(prefix + ": standard deviations must be >= 0");
  return m;
}

RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  StrictObject root(j, "");
  root.read("seed", c.seed);
  root.read("jobs", c.jobs);
  if (const Json* s = root.child("scenario")) c.scenario = scenario_from_json(*s, "scenario");
  if (const Json* s = root.child("grid")) c.grid = grid_from_json(*s, "grid");
  if (const Json* s = root.child("noise")) {
    StrictObject o(*s, "noise");
    o.read("mean_x", c.noise.mean_x);
    o.read("mean_y", c.noise.mean_y);
    o.read("std_x", c.noise.std_x);
    o.read("std_y", c.noise.std_y);
    o.finish();
  }
  if (const Json* s = root.child("schedule")) {
    StrictObject o(*s, "schedule");
    o.read("steps", c.schedule.steps);
    o.read("beta_start", c.schedule.beta_start);
    o.read("beta_end", c.schedule.beta_end);
    o.finish();
  }
  if (const Json* s = root.child("reverse")) {
    StrictObject o(*s, "reverse");
    o.read("intervals", c.reverse.intervals);
    o.read("t_start", c.reverse.t_start);
    o.read("t_end", c.reverse.t_end);
    o.finish();
  }
  if (const Json* s = root.child("denoiser")) c.denoiser = denoiser_config_from_json(*s, "denoiser");
  if (const Json* s = root.child("training")) {
    StrictObject o(*s, "training");
    o.read("per_scenario", c.training.per_scenario);
    o.read("context_seed", c.training.context_seed);
    o.read("learning_rate", c.training.learning_rate);
    o.read("beta1", c.training.beta1);
    o.read("beta2", c.training.beta2);
    o.read("epsilon", c.training.epsilon);
    o.read("batch_size", c.training.batch_size);
    o.read("steps", c.training.steps);
    o.finish();
  }
  if (const Json* s = root.child("stats")) {
    StrictObject o(*s, "stats");
    o.read("alpha", c.stats.alpha);
    o.read("pool", c.stats.pool);
    o.finish();
  }
  if (const Json* s = root.child("eval")) {
    StrictObject o(*s, "eval");
    std::string mode = "avg";
    o.read("l2_mode", mode);
    o.finish();
    if (mode == "avg") {
      c.eval.l2_mode = L2Mode::kAverage;
    } else if (mode == "point") {
      c.eval.l2_mode = L2Mode::kPoint;
    } else {
      throw ConfigError("eval.l2_mode: expected \"avg\" or \"point\", got \"" + mode + "\"");
    }
  }
  if (const Json* s = root.child("paths")) {
    StrictObject o(*s, "paths");
    o.read("scenarios", c.paths.scenarios);
    o.read("responses", c.paths.responses);
    o.read("noise", c.paths.noise);
    o.read("model", c.paths.model);
    o.read("loss", c.paths.loss);
    o.read("report", c.paths.report);
    o.finish();
  }
  root.finish();
  return c;
}

void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got \"" + assignment + "\"");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("--set: malformed key \"" + key + "\"");
    if (!node->is_object()) throw ConfigError("--set: \"" + key + "\" does not name a config field");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = Json::object();
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::filesystem::path* file, const std::vector<std::string>& overrides) {
  Json doc = Json::object();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot open config file " + file->string());
    doc = Json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config file " + file->string() + " is not valid JSON");
    if (!doc.is_object()) throw ConfigError("config file must hold a JSON object");
  }
  for (const auto& o : overrides) apply_override(doc, o);
  RunConfig c = run_config_from_json(doc);
  validate(c);
  return c;
}

void validate(const RunConfig& c) {
  if (c.jobs < 1) throw ConfigError("jobs must be >= 1");
  validate(c.scenario);
  validate(c.grid);
  validate(c.denoiser);
  if (!(c.noise.std_x >= 0.0) || !(c.noise.std_y >= 0.0)) throw ConfigError("noise stds must be >= 0");
  make_schedule(c.schedule.steps, c.schedule.beta_start, c.schedule.beta_end);
  if (c.reverse.intervals > 0) ReverseTimeGrid::uniform(c.reverse.intervals, c.reverse.t_start, c.reverse.t_end);
  if (static_cast<std::size_t>(c.scenario.horizon) != c.denoiser.horizon)
    throw ConfigError("denoiser.horizon must equal scenario.horizon");
  if (static_cast<std::size_t>(c.grid.channels) != c.denoiser.bev_channels)
    throw ConfigError("denoiser.bev_channels must equal grid.channels");
  if (c.training.batch_size == 0) throw ConfigError("training.batch_size must be positive");
  if (c.training.per_scenario == 0) throw ConfigError("training.per_scenario must be positive");
  if (!(c.training.learning_rate >= 0.0)) throw ConfigError("training.learning_rate must be >= 0");
  if (!(c.stats.alpha >= 0.0 && c.stats.alpha <= 1.0)) throw ConfigError("stats.alpha must lie in [0, 1]");
  if (c.stats.pool == 0) throw ConfigError("stats.pool must be positive");
}

NoiseModel to_noise_model(const ProposalNoiseConfig& c) { return {c.mean_x, c.mean_y, c.std_x, c.std_y, 0}; }

OptimizerConfig to_optimizer(const TrainingConfig& c, std::uint64_t seed, int jobs) {
  OptimizerConfig o;
  o.learning_rate = c.learning_rate;
  o.beta1 = c.beta1;
  o.beta2 = c.beta2;
  o.epsilon = c.epsilon;
  o.batch_size = c.batch_size;
  o.steps = c.steps;
  o.seed = seed;
  o.jobs = jobs;
  return o;
}

}  // namespace pathdiff
