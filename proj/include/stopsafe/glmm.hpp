#pragma once

// Mixed-effects logistic regression with up to two crossed random
// intercepts, fitted by maximizing the Laplace-approximated marginal
// likelihood.
//
// Random effects are parameterized in spherical form: b = diag(theta) u with
// u ~ N(0, I), so the linear predictor is eta = X beta + Z diag(theta) u.
// For given (beta, theta) the conditional mode u* minimizes the penalized
// deviance
//     PD(u) = -2 sum_i log p(y_i | eta_i) + |u|^2
// (penalized iteratively reweighted least squares), and the Laplace
// deviance is
//     D(beta, theta) = PD(u*) + log det(diag(theta) Z' W Z diag(theta) + I)
// with W = diag(mu (1 - mu)) evaluated at u*. loglik = -D / 2.

#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "stopsafe/exec.hpp"

namespace stopsafe::glmm {

inline constexpr double kLogisticResidualVariance = std::numbers::pi * std::numbers::pi / 3.0;

inline constexpr std::string_view kParticipant = "participant";
inline constexpr std::string_view kIntersection = "intersection";

/// A main effect ({"bmi"}) or two-way interaction ({"type", "bmi"}).
struct Term {
  std::vector<std::string> covariates;
  std::string name() const;
};

struct ModelSpec {
  std::string outcome = "unsafe";
  std::vector<Term> fixed_terms;           // intercept is implicit
  std::vector<std::string> random_factors;  // subset of {participant, intersection}

  /// Throws if an interaction references an undeclared main effect or a
  /// random factor is unknown or repeated.
  void validate() const;
};

/// One modelling row: an analyzable stop event. y = 1 for an unsafe stop.
struct ModelRow {
  std::string event_id;
  std::string participant_id;
  std::string site_id;
  int y = 0;
};

/// participant_id -> covariate name -> value.
using CovariateTable = std::map<std::string, std::map<std::string, double>>;

struct Factor {
  std::string name;
  std::vector<int> index;           // level of each row
  std::vector<std::string> levels;  // sorted level labels
};

struct Design {
  Eigen::MatrixXd X;                 // n x p, column 0 = intercept
  std::vector<std::string> columns;  // "(Intercept)", term names
  Eigen::VectorXd y;                 // 0/1
  std::vector<Factor> factors;
  std::vector<std::string> row_ids;
  std::vector<std::string> row_participant;

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index p() const { return X.cols(); }
  const Factor& factor(std::string_view name) const;
  /// Rows whose `factor` level is not `level`; unused levels are dropped.
  Design without_level(std::string_view factor, std::string_view level) const;
  /// Rows kept where keep[i] is true; unused levels are dropped.
  Design subset(const std::vector<bool>& keep) const;
  /// Stable fingerprint of (y, X, row ids) used to check that two fits
  /// saw the same rows.
  std::string fingerprint() const;
};

/// Rows are put into canonical order (participant_id, event_id). Errors:
/// missing covariate (lists participants), constant non-intercept column.
Design build_design(std::span<const ModelRow> rows, const CovariateTable& covariates,
                    const ModelSpec& spec);

/// Random-effect-free logistic design helper (used by tests and oracles).
Design make_design(Eigen::MatrixXd X, Eigen::VectorXd y, std::vector<Factor> factors = {},
                   std::vector<std::string> columns = {});

struct FitOptions {
  double pirls_tol = 1e-8;    // max change in the conditional modes
  int max_pirls_iter = 200;
  double theta_tol = 1e-6;    // optimizer simplex size
  int max_outer_iter = 5000;
  bool refine = true;         // joint (theta, beta) Laplace refinement
  double separation_bound = 15.0;
  std::optional<std::vector<double>> fixed_theta;  // pin theta (one per factor)
  // Supplying both starts (with refine) skips the profiled first stage.
  std::optional<std::vector<double>> start_theta;
  std::optional<Eigen::VectorXd> start_beta;
};

struct GlmmFit {
  std::vector<std::string> columns;
  Eigen::VectorXd beta;
  Eigen::VectorXd se;
  Eigen::MatrixXd vcov;
  std::vector<std::string> factor_names;
  std::vector<double> theta;   // random-intercept standard deviations
  std::vector<double> tau00;   // theta^2
  std::vector<std::size_t> n_groups;
  double sigma2_residual = kLogisticResidualVariance;
  double icc = 0;
  double deviance = 0;
  double loglik = 0;
  std::size_t n_obs = 0;
  double r2_marginal = 0;
  double r2_conditional = 0;
  bool converged = false;
  int n_pirls_iter = 0;
  int n_outer_iter = 0;
  std::string fingerprint;
};

/// Laplace deviance at (beta, theta) with the conditional modes found by
/// PIRLS. `u_start` (optional) warm-starts the modes.
struct LaplaceEval {
  double deviance = 0;
  Eigen::VectorXd u;
  int iterations = 0;
};
LaplaceEval laplace_deviance(const Design& d, const Eigen::VectorXd& beta,
                             std::span<const double> theta, const FitOptions& opts = {},
                             const Eigen::VectorXd* u_start = nullptr);

/// Plain logistic log-likelihood sum_i [y eta - log(1 + e^eta)].
double logistic_loglik(const Design& d, const Eigen::VectorXd& beta);

/// Throws FitError on non-convergence (with optimizer trace) or
/// "separation" when a coefficient exceeds the separation bound.
GlmmFit fit_glmm(const Design& d, const FitOptions& opts = {});

double icc_from_tau(std::span<const double> tau00);

struct WaldRow {
  std::string term;
  double beta = 0, se = 0, z = 0;
  double odds_ratio = 0, ci_low = 0, ci_high = 0;
  double p = 1;
};
std::vector<WaldRow> wald_summary(const GlmmFit& fit);
double normal_two_sided_p(double z);
inline constexpr double kZ975 = 1.959963984540054;

struct LrtResult {
  double chi2 = 0;
  int df = 0;
  double p = 1;
};
/// Plain chi-square likelihood-ratio test of nested random structures.
LrtResult lrt_compare(const GlmmFit& full, const GlmmFit& reduced);

struct InfluenceRecord {
  std::string group_id;
  std::string factor;
  double cooks_d = 0;
  bool flagged = false;
  bool available = true;
  std::string message;  // refit error when unavailable
};

struct CooksOptions {
  double threshold = 0.5;         // flag when D > threshold
  double visual_multiplier = 10;  // flag when D > k * median(positive D); <= 0 disables
  FitOptions fit;
};

/// Exact leave-one-group-out refits (warm-started from `fit`):
/// D_g = (b - b_-g)' V^-1 (b - b_-g) / p. Refits run in parallel under
/// Exec::Parallel; records come back in level order either way.
std::vector<InfluenceRecord> cooks_distance_by_group(const Design& d, const GlmmFit& fit,
                                                     std::string_view factor,
                                                     const CooksOptions& opts = {},
                                                     Exec exec = Exec::Parallel);

/// Applies the flag rule to already-computed distances.
void flag_influence(std::vector<InfluenceRecord>& records, double threshold,
                    double visual_multiplier);

}  // namespace stopsafe::glmm
