#pragma once

// Independent reference computations used to check the production
// kernels. They share no numerical code with glmm or geolocate.

#include <span>

#include <Eigen/Dense>

#include "stopsafe/geolocate.hpp"
#include "stopsafe/glmm.hpp"

namespace stopsafe::sim {

/// Plain logistic regression by Newton/IRLS to 1e-10. Throws FitError
/// ("separation") when a coefficient runs past `bound`.
Eigen::VectorXd oracle_logistic_irls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                     double bound = 30.0);

/// Adaptive Gauss-Hermite marginal log-likelihood with one random-intercept
/// factor (the design's first factor); theta is the intercept SD.
double oracle_gauss_hermite(const glmm::Design& d, const Eigen::VectorXd& beta, double theta,
                            int nodes = 25);

/// Maximizes the quadrature log-likelihood over (beta, theta) with a
/// derivative-free search started from the plain logistic fit.
struct GhFit {
  Eigen::VectorXd beta;
  double theta = 0;
  double loglik = 0;
};
GhFit oracle_gauss_hermite_mle(const glmm::Design& d, int nodes = 25);

/// O(n^2) DBSCAN with the same canonical labelling as geo::dbscan.
geo::Partition oracle_dbscan_bruteforce(std::span<const geo::GeoPoint> points,
                                        const geo::ClusterConfig& cfg);

}  // namespace stopsafe::sim
