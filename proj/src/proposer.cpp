#include "pathdiff/proposer.hpp"

#include <array>
#include <cmath>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "pathdiff/error.hpp"
#include "pathdiff/rng.hpp"

namespace pathdiff {

namespace {

using Json = nlohmann::ordered_json;

constexpr std::array<std::string_view, kAdviceCount> kAdviceNames = {
    "Accelerate", "Decelerate", "KeepSpeed", "TurnLeft", "TurnRight", "Stop"};

constexpr double kStopDisplacement = 0.5;
constexpr double kTurnThreshold = 0.15;
constexpr double kSpeedRatio = 0.10;

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

[[noreturn]] void missing(const std::string& field) {
  throw ParseError(ParseError::Reason::kMissingField, field, "missing field \"" + field + "\"");
}

[[noreturn]] void invalid(const std::string& field, const std::string& what) {
  throw ParseError(ParseError::Reason::kInvalidValue, field, "field \"" + field + "\" " + what);
}

const Json& require(const Json& j, const std::string& key) {
  if (!j.contains(key)) missing(key);
  return j.at(key);
}

double finite_number(const Json& j, const std::string& key) {
  const Json& v = require(j, key);
  if (!v.is_number()) invalid(key, "must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) invalid(key, "must be finite");
  return d;
}

}  // namespace

std::string_view advice_name(Advice advice) { return kAdviceNames[static_cast<std::size_t>(advice)]; }

std::optional<Advice> advice_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kAdviceNames.size(); ++i) {
    if (kAdviceNames[i] == name) return static_cast<Advice>(i);
  }
  return std::nullopt;
}

Advice derive_advice(const Path& gt) {
  const auto& w = gt.waypoints;
  if (w.empty() || std::hypot(w.back().x, w.back().y) < kStopDisplacement) return Advice::kStop;
  if (w.size() < 2) return Advice::kKeepSpeed;
  const std::size_t n = w.size();
  const double dx = w[n - 1].x - w[n - 2].x;
  const double dy = w[n - 1].y - w[n - 2].y;
  const double heading_change = std::atan2(dy, dx);  // ego heading is 0 at t = 0
  if (heading_change > kTurnThreshold) return Advice::kTurnLeft;
  if (heading_change < -kTurnThreshold) return Advice::kTurnRight;
  const double initial_speed = std::hypot(w[0].x, w[0].y) / gt.dt;
  const double terminal_speed = std::hypot(dx, dy) / gt.dt;
  if (terminal_speed > (1.0 + kSpeedRatio) * initial_speed) return Advice::kAccelerate;
  if (terminal_speed < (1.0 - kSpeedRatio) * initial_speed) return Advice::kDecelerate;
  return Advice::kKeepSpeed;
}

std::string detection_label(const OrientedBox& box) {
  const double size = std::max(box.length, box.width);
  if (size < 1.2) return "pedestrian";
  if (size < 2.5) return "cyclist";
  if (size < 6.0) return "car";
  return "truck";
}

StructuredResponse propose(const Scenario& scenario, const NoiseModel& noise, std::uint64_t seed) {
  if (noise.std_x < 0.0 || noise.std_y < 0.0) throw DomainError("noise model standard deviations must be >= 0");
  StructuredResponse r;
  r.scenario_id = scenario.id;
  for (const auto& o : scenario.obstacles) r.detections.push_back({detection_label(o.box), o.box.cx, o.box.cy});
  r.advice = derive_advice(scenario.gt_path);
  r.proposed_path = scenario.gt_path;
  Rng rng(seed);
  for (auto& w : r.proposed_path.waypoints) {
    const double zx = standard_normal(rng);
    const double zy = standard_normal(rng);
    w.x += noise.mean_x + noise.std_x * zx;
    w.y += noise.mean_y + noise.std_y * zy;
  }
  return r;
}

std::string serialize_response(const StructuredResponse& r) {
  Json detections = Json::array();
  for (const auto& d : r.detections) detections.push_back({{"label", d.label}, {"x", d.cx}, {"y", d.cy}});
  Json waypoints = Json::array();
  for (const auto& w : r.proposed_path.waypoints) waypoints.push_back({w.x, w.y});
  Json j{{"scenario_id", r.scenario_id},
         {"detections", std::move(detections)},
         {"advice", std::string(advice_name(r.advice))},
         {"path", {{"dt", r.proposed_path.dt}, {"waypoints", std::move(waypoints)}}}};
  return j.dump();
}

StructuredResponse parse_response(std::string_view text, std::size_t horizon) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(ParseError::Reason::kSyntax, "", std::string("malformed response JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError(ParseError::Reason::kSyntax, "", "response must be a JSON object");

  StructuredResponse r;
  const Json& id = require(j, "scenario_id");
  if (!id.is_string()) invalid("scenario_id", "must be a string");
  r.scenario_id = id.get<std::string>();

  const Json& detections = require(j, "detections");
  if (!detections.is_array()) invalid("detections", "must be an array");
  for (const auto& d : detections) {
    if (!d.is_object()) invalid("detections", "entries must be objects");
    const Json& label = require(d, "label");
    if (!label.is_string() || label.get<std::string>().empty()) invalid("label", "must be a non-empty string");
    r.detections.push_back({label.get<std::string>(), finite_number(d, "x"), finite_number(d, "y")});
  }

  const Json& advice = require(j, "advice");
  if (!advice.is_string()) invalid("advice", "must be a string");
  const auto parsed = advice_from_name(advice.get<std::string>());
  if (!parsed)
    throw ParseError(ParseError::Reason::kUnknownAdvice, "advice",
                     "unknown advice label \"" + advice.get<std::string>() + "\"");
  r.advice = *parsed;

  const Json& path = require(j, "path");
  if (!path.is_object()) invalid("path", "must be an object");
  r.proposed_path.dt = finite_number(path, "dt");
  if (!(r.proposed_path.dt > 0.0)) invalid("dt", "must be positive");
  const Json& waypoints = require(path, "waypoints");
  if (!waypoints.is_array()) invalid("waypoints", "must be an array");
  for (const auto& w : waypoints) {
    if (!w.is_array() || w.size() != 2 || !w[0].is_number() || !w[1].is_number())
      invalid("waypoints", "entries must be [x, y] number pairs");
    const double x = w[0].get<double>(), y = w[1].get<double>();
    if (!std::isfinite(x) || !std::isfinite(y)) invalid("waypoints", "must be finite");
    r.proposed_path.waypoints.push_back({x, y});
  }
  if (r.proposed_path.size() != horizon)
    throw ParseError(ParseError::Reason::kWrongPathLength, "waypoints",
                     "path has " + std::to_string(r.proposed_path.size()) + " waypoints, expected " +
                         std::to_string(horizon));
  return r;
}

void write_responses(std::ostream& out, const std::vector<StructuredResponse>& responses) {
  for (const auto& r : responses) out << serialize_response(r) << '\n';
}

std::vector<StructuredResponse> read_responses(std::istream& in, std::size_t horizon) {
  std::vector<StructuredResponse> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(parse_response(line, horizon));
  }
  return out;
}

ContextEncoder::ContextEncoder(std::uint64_t table_seed, std::size_t d_model) : d_model_(d_model) {
  if (d_model == 0) throw ConfigError("context d_model must be positive");
  Rng rng(table_seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_model));
  auto fill = [&](std::vector<double>& table, std::size_t rows) {
    table.resize(rows * d_model);
    for (double& v : table) v = scale * standard_normal(rng);
  };
  fill(label_table_, kLabelBuckets);
  fill(position_map_, 2);
  fill(advice_table_, kAdviceCount);
}

ContextEmbedding ContextEncoder::encode(const StructuredResponse& response) const {
  ContextEmbedding e;
  e.d_model = d_model_;
  e.values.reserve((response.detections.size() + 1) * d_model_);
  for (const auto& d : response.detections) {
    const double* label = label_table_.data() + (fnv1a(d.label) % kLabelBuckets) * d_model_;
    const double px = kPositionScale * d.cx;
    const double py = kPositionScale * d.cy;
    for (std::size_t k = 0; k < d_model_; ++k) {
      e.values.push_back(label[k] + px * position_map_[k] + py * position_map_[d_model_ + k]);
    }
  }
  const double* advice = advice_table_.data() + static_cast<std::size_t>(response.advice) * d_model_;
  e.values.insert(e.values.end(), advice, advice + d_model_);
  return e;
}

ContextEmbedding encode_context(const StructuredResponse& response, std::uint64_t table_seed, std::size_t d_model) {
  return ContextEncoder(table_seed, d_model).encode(response);
}

}  // namespace pathdiff
