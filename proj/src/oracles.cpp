#include "stopsafe/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

#include <gsl/gsl_integration.h>
#include <gsl/gsl_multimin.h>

#include "stopsafe/error.hpp"

namespace stopsafe::sim {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// log p(y | eta) for a Bernoulli-logit observation.
double log_bernoulli(double y, double eta) {
  double log1pexp = eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
  return y * eta - log1pexp;
}

}  // namespace

VectorXd oracle_logistic_irls(const MatrixXd& X, const VectorXd& y, double bound) {
  VectorXd beta = VectorXd::Zero(X.cols());
  for (int it = 0; it < 500; ++it) {
    VectorXd eta = X * beta;
    VectorXd mu = eta.unaryExpr([](double e) { return 1.0 / (1.0 + std::exp(-e)); });
    VectorXd w = mu.cwiseProduct(VectorXd::Ones(mu.size()) - mu);
    VectorXd z = eta + (y - mu).cwiseQuotient(w.cwiseMax(1e-300));
    MatrixXd xtwx = X.transpose() * w.asDiagonal() * X;
    VectorXd next = xtwx.colPivHouseholderQr().solve(X.transpose() * w.cwiseProduct(z));
    if (!next.allFinite() || next.cwiseAbs().maxCoeff() > bound)
      throw FitError("separation: IRLS coefficients diverge");
    double change = (next - beta).cwiseAbs().maxCoeff();
    beta = next;
    if (change < 1e-10) return beta;
  }
  throw FitError("IRLS did not converge");
}

double oracle_gauss_hermite(const glmm::Design& d, const VectorXd& beta, double theta, int nodes) {
  VectorXd eta0 = d.X * beta;
  double total = 0;
  if (theta == 0.0 || d.factors.empty()) {
    for (Eigen::Index i = 0; i < d.n(); ++i) total += log_bernoulli(d.y(i), eta0(i));
    return total;
  }
  const auto& f = d.factors.front();
  std::vector<std::vector<Eigen::Index>> rows(f.levels.size());
  for (Eigen::Index i = 0; i < d.n(); ++i) rows[f.index[static_cast<std::size_t>(i)]].push_back(i);

  gsl_integration_fixed_workspace* ws =
      gsl_integration_fixed_alloc(gsl_integration_fixed_hermite, static_cast<std::size_t>(nodes),
                                  0.0, 1.0, 0.0, 0.0);
  const double* x = gsl_integration_fixed_nodes(ws);
  const double* w = gsl_integration_fixed_weights(ws);

  for (const auto& g : rows) {
    // h(b) = sum log p(y | eta + b) + log N(b; 0, theta^2)
    auto h = [&](double b) {
      double s = -0.5 * b * b / (theta * theta) - std::log(theta) - 0.5 * std::log(2 * std::numbers::pi);
      for (auto i : g) s += log_bernoulli(d.y(i), eta0(i) + b);
      return s;
    };
    double b = 0, curv = 0;
    for (int it = 0; it < 100; ++it) {
      double g1 = -b / (theta * theta), g2 = -1.0 / (theta * theta);
      for (auto i : g) {
        double mu = 1.0 / (1.0 + std::exp(-(eta0(i) + b)));
        g1 += d.y(i) - mu;
        g2 -= mu * (1 - mu);
      }
      double step = g1 / g2;
      b -= step;
      curv = g2;
      if (std::abs(step) < 1e-12) break;
    }
    double sigma = 1.0 / std::sqrt(-curv);
    double hmax = h(b);
    double acc = 0;
    for (int k = 0; k < nodes; ++k) {
      double bk = b + std::numbers::sqrt2 * sigma * x[k];
      acc += w[k] * std::exp(x[k] * x[k] + h(bk) - hmax);
    }
    total += hmax + std::log(std::numbers::sqrt2 * sigma * acc);
  }
  gsl_integration_fixed_free(ws);
  return total;
}

GhFit oracle_gauss_hermite_mle(const glmm::Design& d, int nodes) {
  const auto p = static_cast<std::size_t>(d.p());
  struct Ctx {
    const glmm::Design* d;
    int nodes;
  } ctx{&d, nodes};
  gsl_multimin_function fn;
  fn.n = p + 1;
  fn.params = &ctx;
  fn.f = [](const gsl_vector* v, void* params) {
    auto* c = static_cast<Ctx*>(params);
    VectorXd b(c->d->p());
    for (Eigen::Index j = 0; j < b.size(); ++j) b(j) = gsl_vector_get(v, static_cast<std::size_t>(j));
    double th = std::abs(gsl_vector_get(v, b.size()));
    return -oracle_gauss_hermite(*c->d, b, th, c->nodes);
  };
  VectorXd b0 = oracle_logistic_irls(d.X, d.y);
  gsl_vector* x = gsl_vector_alloc(p + 1);
  gsl_vector* step = gsl_vector_alloc(p + 1);
  for (std::size_t j = 0; j < p; ++j) {
    gsl_vector_set(x, j, b0(static_cast<Eigen::Index>(j)));
    gsl_vector_set(step, j, 0.2);
  }
  gsl_vector_set(x, p, 0.5);
  gsl_vector_set(step, p, 0.3);
  gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, p + 1);
  gsl_multimin_fminimizer_set(s, &fn, x, step);
  for (int it = 0; it < 20000; ++it) {
    if (gsl_multimin_fminimizer_iterate(s)) break;
    if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), 1e-9) == GSL_SUCCESS) break;
  }
  GhFit out;
  out.beta.resize(d.p());
  for (std::size_t j = 0; j < p; ++j) out.beta(static_cast<Eigen::Index>(j)) = gsl_vector_get(s->x, j);
  out.theta = std::abs(gsl_vector_get(s->x, p));
  out.loglik = -s->fval;
  gsl_multimin_fminimizer_free(s);
  gsl_vector_free(x);
  gsl_vector_free(step);
  return out;
}

geo::Partition oracle_dbscan_bruteforce(std::span<const geo::GeoPoint> points,
                                        const geo::ClusterConfig& cfg) {
  const std::size_t n = points.size();
  // Rank by (lat, lon, source, input index).
  std::vector<std::size_t> by_rank(n);
  std::iota(by_rank.begin(), by_rank.end(), 0);
  std::sort(by_rank.begin(), by_rank.end(), [&](std::size_t a, std::size_t b) {
    auto key = [&](std::size_t i) {
      return std::tuple(points[i].lat, points[i].lon, static_cast<int>(points[i].source), i);
    };
    return key(a) < key(b);
  });
  std::vector<std::size_t> rank(n);
  for (std::size_t r = 0; r < n; ++r) rank[by_rank[r]] = r;

  std::vector<std::vector<bool>> adj(n, std::vector<bool>(n));
  std::vector<bool> core(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t count = 0;
    for (std::size_t j = 0; j < n; ++j) {
      adj[i][j] = geo::haversine_m(points[i], points[j]) <= cfg.eps_m;
      count += adj[i][j];
    }
    core[i] = count >= cfg.min_pts;
  }
  // Union-find over core-core edges.
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (core[i] && core[j] && adj[i][j]) parent[find(i)] = find(j);

  std::vector<long long> root(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i]) {
      root[i] = static_cast<long long>(find(i));
      continue;
    }
    std::size_t best = n;
    for (std::size_t j = 0; j < n; ++j)
      if (core[j] && adj[i][j] && (best == n || rank[j] < rank[best])) best = j;
    if (best < n) root[i] = static_cast<long long>(find(best));
  }
  // Number clusters by the smallest member rank.
  std::map<long long, std::size_t> min_rank;
  for (std::size_t i = 0; i < n; ++i)
    if (root[i] >= 0) {
      auto [it, fresh] = min_rank.try_emplace(root[i], rank[i]);
      if (!fresh) it->second = std::min(it->second, rank[i]);
    }
  std::vector<std::pair<std::size_t, long long>> order;
  for (auto [r, m] : min_rank) order.emplace_back(m, r);
  std::sort(order.begin(), order.end());
  std::map<long long, int> label;
  for (std::size_t k = 0; k < order.size(); ++k) label[order[k].second] = static_cast<int>(k);

  geo::Partition p;
  p.labels.assign(n, geo::Partition::kNoise);
  p.core = core;
  for (std::size_t i = 0; i < n; ++i)
    if (root[i] >= 0) p.labels[i] = label[root[i]];
  p.n_clusters = static_cast<int>(order.size());
  return p;
}

}  // namespace stopsafe::sim
