#pragma once

// Seeded synthetic cohorts with known ground truth: roster, rendered trip
// trajectories, stop-sign detections, CGM, sleep and annotations.

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stopsafe/domain.hpp"
#include "stopsafe/glmm.hpp"

namespace stopsafe::sim {

struct CgmModel {
  double mean = 175;      // mg/dL, cohort mean of participant means
  double between_sd = 25; // spread of participant means
  double ar1_rho = 0.97;
  double noise_sd = 60;   // marginal SD of the AR(1) process
  int days = 3;
};

struct SleepModel {
  double mean_h = 6.8;
  double sd_h = 0.9;
  int nights = 7;
  int n_missing = 2;  // participants with no actigraphy
};

struct Geometry {
  double center_lat = 41.25;
  double center_lon = -96.0;
  double site_spacing_m = 400;
  double leg_half_length_m = 250;
  int legs_per_trip = 5;
};

struct SimConfig {
  std::uint64_t seed = 20240501;
  int n_t1dm = 18;
  int n_control = 14;
  int n_intersections = 120;
  int events_per_participant = 50;
  // Coefficients on the linear predictor. Keys are covariate names
  // (age, gender, type, sleep, bmi, sd, cv, lbgi, hbgi) or "a:b"
  // interactions; "(Intercept)" is the intercept. Continuous covariates
  // enter as z-scores over the participants that have them.
  std::map<std::string, double> true_beta{
      {"(Intercept)", 1.2}, {"age", -0.1},      {"type", 0.3},       {"bmi", 0.2},
      {"type:bmi", 0.6},    {"sleep", -0.2},    {"type:sleep", -0.3}, {"lbgi", 0.3},
      {"sd", 0.2},          {"hbgi", 0.1},      {"cv", 0.1}};
  double tau_subj = 1.0;   // variances
  double tau_intxn = 1.0;
  double unsafe_rolling_share = 0.808;
  double confound_rate = 0.0;   // share of events with one factor PresentWithEffect
  double benign_context_rate = 0.0;  // per factor, PresentWithoutEffect
  double bad_clip_rate = 0.0;
  double other_driver_rate = 0.0;
  CgmModel cgm;
  SleepModel sleep;
  Geometry geometry;
  std::int64_t start_epoch = 1'640'995'200;  // 2022-01-01T00:00:00Z
};

struct EventTruth {
  std::string participant_id;
  std::string trip_id;
  int site_index = 0;
  std::int64_t t_begin = 0;  // first sample of the rendered leg
  std::int64_t t_end = 0;    // last sample of the rendered leg
  StopClassification classification = StopClassification::FullStop;
  std::string event_id;  // key the pipeline will assign, empty if not recovered
};

struct GroundTruth {
  std::map<std::string, double> beta;
  double tau_subj = 0, tau_intxn = 0;
  std::map<std::string, double> b_subj;        // participant -> intercept
  std::vector<double> b_intxn;                 // per planted site
  std::vector<std::pair<double, double>> sites;  // (lat, lon)
  std::vector<EventTruth> events;
};

struct SimulatedCohort {
  std::vector<ParticipantProfile> roster;
  std::vector<TripTrace> trips;
  std::vector<StopSignDetection> detections;
  std::vector<GlucoseReading> cgm;
  std::vector<SleepNight> sleep;
  std::vector<AnnotationRecord> annotations;
  GroundTruth truth;
};

SimulatedCohort simulate_cohort(const SimConfig& cfg);

/// Ground truth as a JSON document.
void write_truth_json(std::ostream& out, const GroundTruth& truth);

/// Writes roster.csv, trips.csv, detections.csv, cgm.csv, sleep.csv,
/// annotations.csv and truth.json into `dir` (created if needed).
void write_cohort(const SimulatedCohort& cohort, const std::string& dir);

/// Fully crossed random-intercept logistic design: every participant meets
/// every item once; column 1 is an event-level N(0,1) covariate.
struct CrossedConfig {
  std::uint64_t seed = 1;
  int n_subjects = 50;
  int n_items = 100;
  Eigen::Vector2d beta{0.5, -0.4};
  double tau_subj = 1.0;  // variances
  double tau_item = 0.5;
};
glmm::Design simulate_crossed(const CrossedConfig& cfg);

/// Single-factor design: `groups` x `per_group` rows with columns
/// (intercept, N(0,1) covariate) and random-intercept SD `theta`.
glmm::Design simulate_grouped(std::uint64_t seed, int groups, int per_group,
                              const Eigen::Vector2d& beta, double theta);

}  // namespace stopsafe::sim
