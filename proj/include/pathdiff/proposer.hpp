#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pathdiff/path.hpp"
#include "pathdiff/scene.hpp"
#include "pathdiff/stats.hpp"

namespace pathdiff {

enum class Advice { kAccelerate, kDecelerate, kKeepSpeed, kTurnLeft, kTurnRight, kStop };

inline constexpr int kAdviceCount = 6;

std::string_view advice_name(Advice advice);
/// Exact, case-sensitive match on the labels used in response files.
std::optional<Advice> advice_from_name(std::string_view name);

struct Detection {
  std::string label;
  double cx = 0.0;
  double cy = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct StructuredResponse {
  std::string scenario_id;
  std::vector<Detection> detections;
  Advice advice = Advice::kKeepSpeed;
  Path proposed_path;

  friend bool operator==(const StructuredResponse&, const StructuredResponse&) = default;
};

/// Behaviour label derived from ground-truth geometry:
///   displacement of the last waypoint < 0.5 m         -> Stop
///   heading of the last segment > +0.15 / < -0.15 rad -> TurnLeft / TurnRight
///   last-segment speed > 1.1x / < 0.9x first-segment  -> Accelerate / Decelerate
///   otherwise                                         -> KeepSpeed
Advice derive_advice(const Path& gt);

/// Generic class label from box footprint (pedestrian, cyclist, car, truck).
std::string detection_label(const OrientedBox& box);

/// Mock stand-in for the fine-tuned VLM: true detections, rule-based advice
/// and the ground truth perturbed by i.i.d. N(mean_c, std_c^2) noise per
/// waypoint and coordinate. Deterministic in `seed`.
StructuredResponse propose(const Scenario& scenario, const NoiseModel& noise, std::uint64_t seed);

std::string serialize_response(const StructuredResponse& response);

/// Parses one response-file line. Throws ParseError naming the offending
/// field; `horizon` is the required waypoint count.
StructuredResponse parse_response(std::string_view text, std::size_t horizon = kDefaultHorizon);

void write_responses(std::ostream& out, const std::vector<StructuredResponse>& responses);
std::vector<StructuredResponse> read_responses(std::istream& in, std::size_t horizon = kDefaultHorizon);

/// Token sequence standing in for the VLM's text embedding (S_t). Row-major
/// `token_count() x d_model`.
struct ContextEmbedding {
  std::size_t d_model = 0;
  std::vector<double> values;

  std::size_t token_count() const { return d_model == 0 ? 0 : values.size() / d_model; }
  const double* token(std::size_t i) const { return values.data() + i * d_model; }

  friend bool operator==(const ContextEmbedding&, const ContextEmbedding&) = default;
};

/// Seeded read-only embedding tables: hashed label buckets, a linear map for
/// detection positions, and one vector per advice label.
class ContextEncoder {
 public:
  static constexpr std::size_t kLabelBuckets = 64;
  static constexpr double kPositionScale = 0.1;  ///< per meter

  ContextEncoder(std::uint64_t table_seed, std::size_t d_model);

  /// One token per detection followed by one advice token.
  ContextEmbedding encode(const StructuredResponse& response) const;

  std::size_t d_model() const { return d_model_; }

 private:
  std::size_t d_model_;
  std::vector<double> label_table_;     // kLabelBuckets x d
  std::vector<double> position_map_;    // 2 x d
  std::vector<double> advice_table_;    // kAdviceCount x d
};

ContextEmbedding encode_context(const StructuredResponse& response, std::uint64_t table_seed, std::size_t d_model);

}  // namespace pathdiff
