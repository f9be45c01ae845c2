#include <cmath>
#include <sstream>

#include "doctest.h"
#include "pathdiff/error.hpp"
#include "pathdiff/proposer.hpp"
#include "pathdiff/scene.hpp"
#include "pathdiff/stats.hpp"
#include "support.hpp"

using namespace pathdiff;

namespace {

StructuredResponse random_response(Rng& rng, std::size_t index) {
  static const char* labels[] = {"car", "truck", "pedestrian", "cyclist", "a \"quoted\" label", "ünïcode"};
  StructuredResponse r;
  r.scenario_id = "scenario-" + std::to_string(index);
  const int detections = static_cast<int>(rng() % 5);
  for (int i = 0; i < detections; ++i)
    r.detections.push_back({labels[rng() % 6], uniform(rng, -40.0, 40.0), uniform(rng, -40.0, 40.0)});
  r.advice = static_cast<Advice>(rng() % kAdviceCount);
  r.proposed_path = testing::random_path(rng);
  r.proposed_path.dt = uniform(rng, 0.1, 1.0);
  return r;
}

ParseError parse_failure(const std::string& text) {
  try {
    parse_response(text);
  } catch (const ParseError& e) {
    return e;
  }
  FAIL("expected a parse error");
  return ParseError(ParseError::Reason::kSyntax, "", "");
}

const char* kValid =
    R"({"scenario_id":"s","detections":[{"label":"car","x":1,"y":2}],"advice":"KeepSpeed",)"
    R"("path":{"dt":0.5,"waypoints":[[1,0],[2,0],[3,0],[4,0],[5,0],[6,0]]}})";

}  // namespace

TEST_CASE("zero noise proposes the ground truth exactly") {
  for (const auto& s : generate_scenarios(30, 9, ScenarioConfig{})) {
    CHECK(propose(s, NoiseModel::isotropic(0.0), 123).proposed_path == s.gt_path);
  }
}

TEST_CASE("advice rules") {
  CHECK(derive_advice(ground_truth_path(5.0, 0.0, 6, 0.5)) == Advice::kKeepSpeed);
  CHECK(derive_advice(ground_truth_path(0.0, 0.0, 6, 0.5)) == Advice::kStop);
  CHECK(derive_advice(ground_truth_path(8.0, 0.1, 6, 0.5)) == Advice::kTurnLeft);
  CHECK(derive_advice(ground_truth_path(8.0, -0.1, 6, 0.5)) == Advice::kTurnRight);

  Path accelerating, decelerating;
  double x = 0.0, y = 0.0;
  for (int j = 0; j < 6; ++j) {
    x += 0.5 * (4.0 + j);
    y += 0.5 * (8.0 - j);
    accelerating.waypoints.push_back({x, 0.0});
    decelerating.waypoints.push_back({y, 0.0});
  }
  CHECK(derive_advice(accelerating) == Advice::kAccelerate);
  CHECK(derive_advice(decelerating) == Advice::kDecelerate);
}

TEST_CASE("proposal residual spread matches the noise model") {
  const Scenario s = generate_scenario(3, ScenarioConfig{});
  std::vector<double> rx, ry;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Path p = propose(s, NoiseModel::isotropic(0.5), seed).proposed_path;
    for (std::size_t j = 0; j < p.size(); ++j) {
      rx.push_back(p.waypoints[j].x - s.gt_path.waypoints[j].x);
      ry.push_back(p.waypoints[j].y - s.gt_path.waypoints[j].y);
    }
  }
  CHECK(sample_std(rx) >= 0.45);
  CHECK(sample_std(rx) <= 0.55);
  CHECK(sample_std(ry) >= 0.45);
  CHECK(sample_std(ry) <= 0.55);
}

TEST_CASE("proposals are deterministic in the seed") {
  const Scenario s = generate_scenario(3, ScenarioConfig{});
  CHECK(propose(s, NoiseModel::isotropic(0.5), 9) == propose(s, NoiseModel::isotropic(0.5), 9));
  CHECK(propose(s, NoiseModel::isotropic(0.5), 9) != propose(s, NoiseModel::isotropic(0.5), 10));
}

TEST_CASE("detections are the true obstacle positions") {
  const Scenario s = generate_scenario(12, ScenarioConfig{});
  const StructuredResponse r = propose(s, NoiseModel::isotropic(0.5), 1);
  REQUIRE(r.detections.size() == s.obstacles.size());
  for (std::size_t i = 0; i < s.obstacles.size(); ++i) {
    CHECK(r.detections[i].cx == s.obstacles[i].box.cx);
    CHECK(r.detections[i].cy == s.obstacles[i].box.cy);
    CHECK_FALSE(r.detections[i].label.empty());
  }
}

TEST_CASE("serialize and parse round-trip") {
  Rng rng(77);
  for (std::size_t i = 0; i < 100; ++i) {
    const StructuredResponse r = random_response(rng, i);
    CHECK(parse_response(serialize_response(r)) == r);
  }
  std::vector<StructuredResponse> batch;
  for (std::size_t i = 0; i < 10; ++i) batch.push_back(random_response(rng, i));
  std::stringstream buffer;
  write_responses(buffer, batch);
  CHECK(read_responses(buffer) == batch);
}

TEST_CASE("parse errors name the offending field") {
  CHECK_NOTHROW(parse_response(kValid));

  std::string fly = kValid;
  fly.replace(fly.find("KeepSpeed"), 9, "fly");
  CHECK(parse_failure(fly).reason() == ParseError::Reason::kUnknownAdvice);
  CHECK(parse_failure(fly).field() == "advice");

  std::string no_path = kValid;
  no_path = no_path.substr(0, no_path.find(",\"path\"")) + "}";
  CHECK(parse_failure(no_path).reason() == ParseError::Reason::kMissingField);
  CHECK(parse_failure(no_path).field() == "path");

  std::string short_path = kValid;
  short_path.replace(short_path.find(",[6,0]"), 6, "");
  CHECK(parse_failure(short_path).reason() == ParseError::Reason::kWrongPathLength);

  CHECK(parse_failure("{\"scenario_id\": ").reason() == ParseError::Reason::kSyntax);

  std::string empty_label = kValid;
  empty_label.replace(empty_label.find("\"car\""), 5, "\"\"");
  CHECK(parse_failure(empty_label).field() == "label");
}

TEST_CASE("advice labels are a closed, case-sensitive set") {
  for (int a = 0; a < kAdviceCount; ++a) {
    const auto advice = static_cast<Advice>(a);
    CHECK(advice_from_name(advice_name(advice)) == advice);
  }
  CHECK_FALSE(advice_from_name("keepspeed").has_value());
  CHECK_FALSE(advice_from_name("fly").has_value());
}

TEST_CASE("context tokens: one per detection plus the advice token") {
  StructuredResponse stop;
  stop.advice = Advice::kStop;
  stop.proposed_path = testing::constant_path(0.0, 0.0);
  CHECK(encode_context(stop, 5, 32).token_count() == 1);

  Rng rng(4);
  for (std::size_t i = 0; i < 20; ++i) {
    const StructuredResponse r = random_response(rng, i);
    const ContextEmbedding e = encode_context(r, 5, 16);
    CHECK(e.token_count() == r.detections.size() + 1);
    for (double v : e.values) CHECK(std::isfinite(v));
  }
}

TEST_CASE("context encoding is deterministic and advice-sensitive") {
  Rng rng(8);
  StructuredResponse r = random_response(rng, 0);
  CHECK(encode_context(r, 5, 32) == encode_context(r, 5, 32));

  StructuredResponse other = r;
  other.advice = r.advice == Advice::kStop ? Advice::kTurnLeft : Advice::kStop;
  const ContextEmbedding a = encode_context(r, 5, 32);
  const ContextEmbedding b = encode_context(other, 5, 32);
  const std::size_t last = a.token_count() - 1;
  double gap = 0.0;
  for (std::size_t k = 0; k < 32; ++k) gap += std::abs(a.token(last)[k] - b.token(last)[k]);
  CHECK(gap > 0.0);
  for (std::size_t i = 0; i < last; ++i)
    for (std::size_t k = 0; k < 32; ++k) CHECK(a.token(i)[k] == b.token(i)[k]);
}
