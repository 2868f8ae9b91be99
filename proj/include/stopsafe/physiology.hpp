#pragma once

// Per-participant physiological covariates: CGM quality control, glycemic
// variability, sleep averaging, BMI and sample standardization.

#include <array>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stopsafe/domain.hpp"
#include "stopsafe/exec.hpp"

namespace stopsafe::phys {

struct QcConfig {
  double min_mgdl = 40;
  double max_mgdl = 400;
  std::size_t min_n = 288;  // one day of 5-minute readings
};

struct QcReport {
  std::size_t n_raw = 0;
  std::size_t n_dropped_range = 0;
  std::size_t n_dropped_duplicate = 0;
};

struct CgmSeries {
  std::string participant_id;
  std::vector<GlucoseReading> readings;
  QcReport qc;
};

struct GvMetrics {
  double sd = 0;
  double cv = 0;
  double lbgi = 0;
  double hbgi = 0;
  std::size_t n = 0;
};

struct SleepSummary {
  double avg_duration_h = 0;
  std::size_t n_nights = 0;
  bool abnormal = false;
};

struct BodyMetrics {
  double bmi = 0;
  bool obese = false;
};

struct StandardizedCovariate {
  std::string name;
  std::map<std::string, double> z;
  double mean = 0;
  double sd = 0;
};

/// Drops out-of-range readings and repeated timestamps (first kept).
/// `readings` must belong to one participant and be sorted by time.
CgmSeries qc_cgm(std::span<const GlucoseReading> readings, const QcConfig& cfg = {});

/// Symmetrized glucose scale: f(bg) = 1.509 ((ln bg)^1.084 - 5.381).
double bg_risk_scale(double bg_mgdl);
/// Glucose where bg_risk_scale crosses zero (about 112.5 mg/dL).
double bg_risk_pivot();

GvMetrics gv_metrics(const CgmSeries& series);
GvMetrics gv_metrics(std::span<const double> bg_mgdl);

SleepSummary avg_sleep(std::span<const SleepNight> nights);
BodyMetrics bmi(const ParticipantProfile& p);

/// z-scores over exactly the participants in `sample`.
StandardizedCovariate standardize(const std::string& name,
                                  const std::map<std::string, double>& values,
                                  std::span<const std::string> sample);

/// Pearson correlations of (SD, CV, LBGI, HBGI) across participants.
Eigen::Matrix4d pearson_corr_matrix(std::span<const GvMetrics> metrics);
inline constexpr std::array<const char*, 4> kGvNames{"sd", "cv", "lbgi", "hbgi"};

/// Raw per-participant covariates; optional fields are N-Miss when absent.
struct CovariateRow {
  std::string participant_id;
  Cohort cohort = Cohort::Control;
  Gender gender = Gender::Female;
  double age = 0;
  double driving_experience = 0;
  double hba1c = 0;
  double bmi = 0;
  std::optional<double> sleep_h;
  std::optional<GvMetrics> gv;
  std::optional<QcReport> cgm_qc;
};

struct MetricsResult {
  std::vector<CovariateRow> rows;  // roster order
  std::vector<std::string> warnings;
};

/// Computes covariates for every roster participant. Participants without
/// sleep nights or without enough CGM data get N-Miss values and a warning.
MetricsResult compute_covariates(std::span<const ParticipantProfile> roster,
                                 std::span<const GlucoseReading> cgm,
                                 std::span<const SleepNight> sleep, const QcConfig& qc,
                                 Exec exec = Exec::Parallel);

/// participant_id,cohort,age_z,bmi_z,sleep_z,sd_z,cv_z,lbgi_z,hbgi_z followed
/// by raw columns; z over all participants with a value.
void write_covariates_csv(std::ostream& out, std::span<const CovariateRow> rows);
std::vector<CovariateRow> read_covariates_csv(std::istream& in);

}  // namespace stopsafe::phys
