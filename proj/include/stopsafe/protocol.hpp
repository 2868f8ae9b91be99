#pragma once

// Four-step model building for the sleep, obesity and glucose hypotheses,
// plus the descriptive and results tables.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "stopsafe/domain.hpp"
#include "stopsafe/exec.hpp"
#include "stopsafe/glmm.hpp"
#include "stopsafe/physiology.hpp"

namespace stopsafe::proto {

enum class Hypothesis { Sleep, Obesity, GlucoseLbgiSd, GlucoseHbgiCv };
enum class Sample { All, T1dmOnly };

inline constexpr Hypothesis kAllHypotheses[] = {Hypothesis::Sleep, Hypothesis::Obesity,
                                                Hypothesis::GlucoseLbgiSd,
                                                Hypothesis::GlucoseHbgiCv};

std::string_view to_string(Hypothesis h);
std::optional<Hypothesis> hypothesis_from_string(std::string_view s);
/// "Sleep", "Obesity", "Glucose: LBGI + SD", ...
std::string_view display_name(Hypothesis h);

struct HypothesisSpec {
  Hypothesis name = Hypothesis::Sleep;
  Sample sample = Sample::All;
  std::vector<glmm::Term> fixed_terms;
  std::vector<std::string> gv_pair;  // glucose hypotheses only
};
/// Default spec: Sleep {age, gender, type, sleep, type:sleep}; Obesity
/// {age, gender, type, bmi, type:bmi}; glucose pairs {age, gender, a, b}
/// on T1DM participants.
HypothesisSpec hypothesis_spec(Hypothesis h);

/// Human-readable predictor label ("Gender: Male", "Participant type: T1DM x BMI").
std::string predictor_label(std::string_view column);

struct ProtocolOptions {
  double alpha = 0.05;
  double cooks_threshold = 0.5;
  double visual_multiplier = 10;
  double gv_correlation_cutoff = 0.5;
  glmm::FitOptions fit;
  /// Manual influence decisions keyed "participant:ID" or
  /// "intersection:ID"; true forces removal, false keeps the group.
  std::map<std::string, bool> influence_overrides;
};

struct ModelColumn {
  std::string label;
  glmm::GlmmFit fit;
  std::vector<glmm::WaldRow> wald;
};

struct ProtocolRun {
  HypothesisSpec spec;
  std::size_t n_events_in = 0;        // filtered events offered to the run
  std::size_t n_events_sample = 0;    // after the cohort restriction
  std::vector<std::string> participants;                 // modelled
  std::map<std::string, std::string> excluded_participants;  // id -> reason
  std::optional<double> gv_pair_r;
  ModelColumn with_intersection;     // step 2
  ModelColumn without_intersection;  // step 2
  glmm::LrtResult lrt;
  bool keep_intersection = false;
  std::vector<glmm::InfluenceRecord> influence_participant;   // step 3
  std::vector<glmm::InfluenceRecord> influence_intersection;  // empty when dropped
  std::vector<std::string> removed_participants;
  std::vector<std::string> removed_intersections;
  ModelColumn final_fit;  // step 4
  std::size_t n_obs_step2 = 0;
  std::size_t n_obs_step4 = 0;

  const ModelColumn& selected() const {
    return keep_intersection ? with_intersection : without_intersection;
  }
};

/// Runs steps 1-4. Participants lacking a required covariate are excluded
/// (and listed); continuous covariates are z-scored over the modelled
/// participants. Throws Error naming the step on any fit failure.
ProtocolRun run_protocol(const HypothesisSpec& spec, std::span<const StopEvent> events,
                         std::span<const phys::CovariateRow> covariates,
                         const ProtocolOptions& opts = {}, Exec exec = Exec::Parallel);

struct DescriptiveTable {
  std::vector<std::string> groups;  // "T1DM (N = 18)", ...
  struct Row {
    std::string label;
    std::vector<std::string> cells;  // one per group; empty for headings
    bool heading = false;
  };
  std::vector<Row> rows;
};
DescriptiveTable describe_cohort(std::span<const ParticipantProfile> profiles,
                                 std::span<const phys::CovariateRow> covariates);
std::string render_markdown(const DescriptiveTable& t);

/// "11 (61.1%)"
std::string format_count_percent(std::size_t k, std::size_t n);
/// "0.012", "<.001"
std::string format_p(double p);

std::string render_report_markdown(const ProtocolRun& run);
nlohmann::ordered_json report_json(const ProtocolRun& run);
/// Inverse of report_json for rendering; vcov is not stored.
ProtocolRun protocol_run_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json fit_json(const glmm::GlmmFit& fit, const glmm::ModelSpec& spec);
/// Control-variable summary across runs (age and gender OR / p per model).
std::string render_control_summary(std::span<const ProtocolRun> runs);
/// group_id,factor,cooks_d,flagged,available,message
std::string influence_csv(const ProtocolRun& run);

}  // namespace stopsafe::proto
