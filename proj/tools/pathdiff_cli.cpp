// Command-line driver: gen -> propose -> ks-verify / fit-noise -> train ->
// sample / eval / ablate, with file handoffs between stages.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pathdiff/config.hpp"
#include "pathdiff/denoiser.hpp"
#include "pathdiff/error.hpp"
#include "pathdiff/eval.hpp"
#include "pathdiff/proposer.hpp"
#include "pathdiff/rng.hpp"
#include "pathdiff/scene.hpp"
#include "pathdiff/stats.hpp"

namespace fs = std::filesystem;
using namespace pathdiff;

namespace {

// Stage tags for derived seeds.
constexpr std::uint64_t kProposeStream = 0x7072;
constexpr std::uint64_t kTrainStream = 0x7472;

/// Input data file that cannot be opened.
class DataError : public Error {
 public:
  explicit DataError(const std::string& message) : Error("data", message) {}
};

int exit_code(const Error& e) {
  const std::string& kind = e.kind();
  if (kind == "config" || kind == "generation") return 2;
  if (kind == "artifact") return 4;
  if (kind == "training") return 1;
  return 3;  // alignment, parse, data, fitting, degenerate, domain
}

std::string quoted(const std::string& text) {
  std::string out = "\"";
  for (char c : text) {
    if (c == '"' || c == '\\') {
      out += '\\';
      out += c;
    } else if (c == '\n') {
      out += "\\n";
    } else {
      out += c;
    }
  }
  return out + "\"";
}

void report_error(const std::string& kind, int code, const std::string& message, const std::string& field = "") {
  std::string line = "error kind=" + kind + " exit=" + std::to_string(code);
  if (!field.empty()) line += " field=" + quoted(field);
  line += " message=" + quoted(message);
  std::cerr << line << '\n';
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return in;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  return out;
}

std::vector<Scenario> load_scenarios(const std::string& path) {
  auto in = open_input(path);
  return read_scenarios(in);
}

std::vector<StructuredResponse> load_responses(const std::string& path, std::size_t horizon) {
  auto in = open_input(path);
  return read_responses(in, horizon);
}

NoiseModel load_noise(const std::string& path) {
  auto in = open_input(path);
  const Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError("noise model file " + path + " is not valid JSON");
  return noise_model_from_json(j);
}

/// Orders `responses` like `scenarios`, matching by scenario id.
std::vector<StructuredResponse> align(const std::vector<Scenario>& scenarios,
                                      std::vector<StructuredResponse> responses) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < scenarios.size(); ++i) index.emplace(scenarios[i].id, i);
  std::vector<std::optional<StructuredResponse>> slots(scenarios.size());
  for (auto& r : responses) {
    auto it = index.find(r.scenario_id);
    if (it == index.end()) throw AlignmentError("response refers to unknown scenario \"" + r.scenario_id + "\"");
    if (slots[it->second]) throw AlignmentError("duplicate response for scenario \"" + r.scenario_id + "\"");
    slots[it->second] = std::move(r);
  }
  std::vector<StructuredResponse> out;
  out.reserve(scenarios.size());
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    if (!slots[i]) throw AlignmentError("no response for scenario \"" + scenarios[i].id + "\"");
    out.push_back(std::move(*slots[i]));
  }
  return out;
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string scientific(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// A loaded model carries its own architecture, which sets the context width.
EvalOptions eval_options(const RunConfig& c, const TransformerDenoiser* model) {
  EvalOptions o;
  o.grid = c.grid;
  o.reverse = c.reverse;
  o.context_seed = c.training.context_seed;
  o.d_model = model ? model->config().d_model : c.denoiser.d_model;
  o.l2_mode = c.eval.l2_mode;
  o.jobs = c.jobs;
  return o;
}

void write_loss_csv(const std::string& path, const std::vector<LossRecord>& curve) {
  auto out = open_output(path);
  out << "step,waypoint_mse,cumsum_mse,total\n";
  for (const auto& r : curve) {
    out << r.step << ',' << scientific(r.loss.waypoint_mse) << ',' << scientific(r.loss.cumsum_mse) << ','
        << scientific(r.loss.total) << '\n';
  }
}

std::vector<std::string> split(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::vector<std::string> overrides;
};

RunConfig resolve(const Globals& g) {
  std::vector<std::string> overrides = g.overrides;
  if (g.seed) overrides.push_back("seed=" + std::to_string(*g.seed));
  if (g.jobs) overrides.push_back("jobs=" + std::to_string(*g.jobs));
  const fs::path file = g.config_path;
  return load_run_config(g.config_path.empty() ? nullptr : &file, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory diffusion pipeline: scenarios, proposals, normality checks, training and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "JSON run configuration");
  app.add_option("--seed", g.seed, "Base seed (overrides the config)");
  app.add_option("--jobs", g.jobs, "Worker threads (outputs do not depend on it)");
  app.add_option("--set", g.overrides, "Config override key=value (repeatable)")->take_all();

  std::string out, scenarios_path, responses_path, noise_path, model_path, parse_path, loss_path, resume_path;
  std::string svg_dir, rows_text = "all,no-tse", seeds_text, l2_mode;
  std::size_t count = 0, holdout = 0;
  std::optional<double> alpha;
  std::optional<std::size_t> pool, steps;
  bool oracle = false;

  auto* gen = app.add_subcommand("gen", "Generate synthetic scenarios (JSON Lines)");
  gen->add_option("--count", count, "Number of scenarios")->required();
  gen->add_option("--out", out, "Output file (default: paths.scenarios)");

  auto* propose_cmd = app.add_subcommand("propose", "Mock proposals, or normalize recorded responses with --parse");
  propose_cmd->add_option("--scenarios", scenarios_path, "Scenario file");
  propose_cmd->add_option("--noise", noise_path, "Noise model JSON (default: the config's noise section)");
  propose_cmd->add_option("--parse", parse_path, "Recorded response file to validate and re-emit");
  propose_cmd->add_option("--out", out, "Output file (default: paths.responses)");

  auto* ks = app.add_subcommand("ks-verify", "Per-path Kolmogorov-Smirnov normality report (CSV)");
  ks->add_option("--scenarios", scenarios_path, "Scenario file");
  ks->add_option("--responses", responses_path, "Response file");
  ks->add_option("--alpha", alpha, "Significance level");
  ks->add_option("--pool", pool, "Pool this many consecutive paths per test");
  ks->add_option("--out", out, "Output CSV (default: stdout)");

  auto* fit = app.add_subcommand("fit-noise", "Fit the Gaussian residual model");
  fit->add_option("--scenarios", scenarios_path, "Scenario file");
  fit->add_option("--responses", responses_path, "Response file");
  fit->add_option("--out", out, "Output JSON (default: paths.noise)");

  auto* train_cmd = app.add_subcommand("train", "Train the denoiser");
  train_cmd->add_option("--scenarios", scenarios_path, "Scenario file");
  train_cmd->add_option("--responses", responses_path, "Response file");
  train_cmd->add_option("--noise", noise_path, "Fitted noise model");
  train_cmd->add_option("--out", out, "Model artifact (default: paths.model)");
  train_cmd->add_option("--loss", loss_path, "Loss curve CSV (default: paths.loss)");
  train_cmd->add_option("--resume", resume_path, "Continue from this model artifact");
  train_cmd->add_option("--steps", steps, "Optimizer steps (overrides training.steps)");

  auto* sample_cmd = app.add_subcommand("sample", "Denoise proposals with a trained model");
  sample_cmd->add_option("--model", model_path, "Model artifact");
  sample_cmd->add_option("--scenarios", scenarios_path, "Scenario file");
  sample_cmd->add_option("--responses", responses_path, "Response file");
  sample_cmd->add_option("--out", out, "Output responses with denoised paths (JSON Lines)")->required();

  auto* eval_cmd = app.add_subcommand("eval", "L2 and collision report for sampled paths and raw proposals");
  eval_cmd->add_option("--model", model_path, "Model artifact");
  eval_cmd->add_option("--scenarios", scenarios_path, "Scenario file");
  eval_cmd->add_option("--responses", responses_path, "Response file");
  eval_cmd->add_option("--out", out, "Report CSV (default: paths.report)");
  eval_cmd->add_flag("--oracle-denoiser", oracle, "Use a denoiser that predicts the ground truth");
  eval_cmd->add_option("--l2-mode", l2_mode, "avg or point")->check(CLI::IsMember({"avg", "point"}));
  eval_cmd->add_option("--svg-dir", svg_dir, "Write one overlay per scenario into this directory");

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate one model per flag combination");
  ablate->add_option("--scenarios", scenarios_path, "Scenario file");
  ablate->add_option("--responses", responses_path, "Response file");
  ablate->add_option("--noise", noise_path, "Fitted noise model");
  ablate->add_option("--rows", rows_text, "Comma-separated rows: all, no-tse, no-caf, no-cap, no-bfc, none");
  ablate->add_option("--seeds", seeds_text, "Comma-separated training seeds (default: the run seed)");
  ablate->add_option("--holdout", holdout, "Evaluate on the last N scenarios, train on the rest")->required();
  ablate->add_option("--steps", steps, "Optimizer steps per row (overrides training.steps)");
  ablate->add_option("--out", out, "Ablation CSV (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("config", 2, e.what());
    return 2;
  }

  try {
    RunConfig cfg = resolve(g);
    if (steps) cfg.training.steps = *steps;
    const std::size_t horizon = cfg.denoiser.horizon;
    auto pick = [](const std::string& flag, const std::string& fallback) { return flag.empty() ? fallback : flag; };

    if (*gen) {
      const auto scenarios = generate_scenarios(count, cfg.seed, cfg.scenario, cfg.jobs);
      auto o = open_output(pick(out, cfg.paths.scenarios));
      write_scenarios(o, scenarios);
    } else if (*propose_cmd) {
      const auto scenarios = load_scenarios(pick(scenarios_path, cfg.paths.scenarios));
      std::vector<StructuredResponse> responses;
      if (!parse_path.empty()) {
        responses = align(scenarios, load_responses(parse_path, horizon));
      } else {
        const NoiseModel noise = noise_path.empty() ? to_noise_model(cfg.noise) : load_noise(noise_path);
        responses = mock_responses(scenarios, noise, derive_seed(cfg.seed, kProposeStream), cfg.jobs);
      }
      auto o = open_output(pick(out, cfg.paths.responses));
      write_responses(o, responses);
    } else if (*ks) {
      const auto scenarios = load_scenarios(pick(scenarios_path, cfg.paths.scenarios));
      const auto responses = align(scenarios, load_responses(pick(responses_path, cfg.paths.responses), horizon));
      std::vector<Path> proposals, truths;
      for (std::size_t i = 0; i < scenarios.size(); ++i) {
        proposals.push_back(responses[i].proposed_path);
        truths.push_back(scenarios[i].gt_path);
      }
      const std::size_t group = pool.value_or(cfg.stats.pool);
      if (group == 0) throw ConfigError("--pool must be positive");
      const double a = alpha.value_or(cfg.stats.alpha);
      if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("--alpha must lie in [0, 1]");
      const auto noise = pool_noise(extract_noise(proposals, truths), group);
      std::vector<NormalityDetail> details;
      const NormalityReport report = normality_report(noise, a, &details);

      std::ostringstream csv;
      csv << "path_id,n,d_x,p_x,d_y,p_y,passed\n";
      for (const auto& d : details) {
        const std::string id = group == 1 ? scenarios[d.path_id].id : "group-" + std::to_string(d.path_id);
        csv << id << ',' << d.n << ',';
        if (d.degenerate) {
          csv << ",,,,0\n";
        } else {
          csv << fixed(d.result.x.d_n, 8) << ',' << fixed(d.result.x.p_value, 8) << ','
              << fixed(d.result.y.d_n, 8) << ',' << fixed(d.result.y.p_value, 8) << ','
              << (d.result.passed ? 1 : 0) << '\n';
        }
      }
      csv << "summary,total=" << report.total_paths << ",passed=" << report.passed_paths
          << ",percentage=" << fixed(report.pass_percentage, 4) << ",,,\n";
      if (out.empty()) {
        std::cout << csv.str();
      } else {
        auto o = open_output(out);
        o << csv.str();
      }
    } else if (*fit) {
      const auto scenarios = load_scenarios(pick(scenarios_path, cfg.paths.scenarios));
      const auto responses = align(scenarios, load_responses(pick(responses_path, cfg.paths.responses), horizon));
      const NoiseModel model = fit_noise_from_responses(scenarios, responses);
      auto o = open_output(pick(out, cfg.paths.noise));
      o << to_json(model).dump(2) << '\n';
    } else if (*train_cmd) {
      const auto scenarios = load_scenarios(pick(scenarios_path, cfg.paths.scenarios));
      const auto responses = align(scenarios, load_responses(pick(responses_path, cfg.paths.responses), horizon));
      const NoiseModel noise = load_noise(pick(noise_path, cfg.paths.noise));
      const std::uint64_t seed = derive_seed(cfg.seed, kTrainStream);
      std::vector<LossRecord> curve;
      std::optional<TransformerDenoiser> model;
      if (resume_path.empty()) {
        model.emplace(train_denoiser(cfg, cfg.denoiser, scenarios, responses, noise, seed, &curve));
      } else {
        model.emplace(load_model(fs::path(resume_path)));
        if (model->config() != cfg.denoiser) throw ArtifactError("resumed model config differs from the run config");
        curve = resume_training(*model, cfg, scenarios, responses, noise, seed);
      }
      save_model(fs::path(pick(out, cfg.paths.model)), *model);
      write_loss_csv(pick(loss_path, cfg.paths.loss), curve);
    } else if (*sample_cmd) {
      const auto model = load_model(fs::path(pick(model_path, cfg.paths.model)));
      const auto scenarios = load_scenarios(pick(scenarios_path, cfg.paths.scenarios));
      auto responses = align(scenarios, load_responses(pick(responses_path, cfg.paths.responses), horizon));
      const EvalResult result = run_eval(&model, scenarios, responses, eval_options(cfg, &model));
      for (std::size_t i = 0; i < responses.size(); ++i) responses[i].proposed_path = result.sampled_paths[i];
      auto o = open_output(out);
      write_responses(o, responses);
    } else if (*eval_cmd) {
      if (l2_mode == "point") cfg.eval.l2_mode = L2Mode::kPoint;
      if (l2_mode == "avg") cfg.eval.l2_mode = L2Mode::kAverage;
      const auto scenarios = load_scenarios(pick(scenarios_path, cfg.paths.scenarios));
      const auto responses = align(scenarios, load_responses(pick(responses_path, cfg.paths.responses), horizon));
      std::optional<TransformerDenoiser> model;
      if (!oracle) model.emplace(load_model(fs::path(pick(model_path, cfg.paths.model))));
      const TransformerDenoiser* net = model ? &*model : nullptr;
      const EvalResult result = run_eval(net, scenarios, responses, eval_options(cfg, net));
      auto o = open_output(pick(out, cfg.paths.report));
      write_report_csv(o, result);
      if (!svg_dir.empty()) {
        fs::create_directories(svg_dir);
        for (std::size_t i = 0; i < scenarios.size(); ++i) {
          auto svg = open_output((fs::path(svg_dir) / (scenarios[i].id + ".svg")).string());
          svg << overlay_svg(scenarios[i], responses[i].proposed_path, result.sampled_paths[i]);
        }
      }
    } else if (*ablate) {
      const auto scenarios = load_scenarios(pick(scenarios_path, cfg.paths.scenarios));
      const auto responses = align(scenarios, load_responses(pick(responses_path, cfg.paths.responses), horizon));
      if (holdout == 0 || holdout >= scenarios.size())
        throw ConfigError("--holdout must leave at least one scenario on each side");
      const NoiseModel noise = load_noise(pick(noise_path, cfg.paths.noise));
      std::vector<AblationFlags> rows;
      for (const auto& name : split(rows_text)) rows.push_back(ablation_flags(name));
      if (rows.empty()) throw ConfigError("--rows names no rows");
      std::vector<std::uint64_t> seeds;
      try {
        for (const auto& s : split(seeds_text)) seeds.push_back(std::stoull(s));
      } catch (const std::exception&) {
        throw ConfigError("--seeds must be comma-separated integers");
      }
      if (seeds.empty()) seeds.push_back(derive_seed(cfg.seed, kTrainStream));
      const std::size_t cut = scenarios.size() - holdout;
      const std::span<const Scenario> all(scenarios);
      const std::span<const StructuredResponse> all_responses(responses);
      const auto table = ablation_run(cfg, rows, seeds, all.first(cut), all_responses.first(cut), all.subspan(cut),
                                      all_responses.subspan(cut), noise);
      std::ostringstream csv;
      write_ablation_csv(csv, table);
      if (out.empty()) {
        std::cout << csv.str();
      } else {
        auto o = open_output(out);
        o << csv.str();
      }
    }
  } catch (const ParseError& e) {
    report_error(e.kind(), exit_code(e), e.what(), e.field());
    return exit_code(e);
  } catch (const Error& e) {
    report_error(e.kind(), exit_code(e), e.what());
    return exit_code(e);
  } catch (const std::exception& e) {
    report_error("internal", 1, e.what());
    return 1;
  }
  return 0;
}
