#include "stopsafe/verify.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "stopsafe/error.hpp"
#include "stopsafe/glmm.hpp"
#include "stopsafe/oracles.hpp"
#include "stopsafe/physiology.hpp"
#include "stopsafe/simgen.hpp"
#include "stopsafe/util.hpp"

namespace stopsafe::verify {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Outcome {
  double error = 0;
  double tolerance = 0;
  std::string detail;
};

glmm::Design irls_problem() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> z(0, 1);
  std::uniform_real_distribution<double> u(0, 1);
  const int n = 200;
  const std::array<double, 4> beta{0.3, -0.5, 0.8, 0.2};
  MatrixXd X(n, 4);
  VectorXd y(n);
  glmm::Factor f{"participant", {}, {}};
  for (int g = 0; g < 10; ++g) f.levels.push_back("G" + std::to_string(10 + g));
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1;
    double eta = beta[0];
    for (int k = 1; k < 4; ++k) {
      X(i, k) = z(rng);
      eta += beta[k] * X(i, k);
    }
    y(i) = u(rng) < 1 / (1 + std::exp(-eta)) ? 1 : 0;
    f.index.push_back(i % 10);
  }
  return glmm::make_design(std::move(X), std::move(y), {f}, {"(Intercept)", "x1", "x2", "x3"});
}

glmm::Design quadrature_problem() { return sim::simulate_grouped(11, 10, 20, {0.5, -0.4}, 1.0); }

Outcome check_irls() {
  auto d = irls_problem();
  glmm::FitOptions opts;
  opts.fixed_theta = std::vector<double>{0.0};
  auto fit = glmm::fit_glmm(d, opts);
  VectorXd ref = sim::oracle_logistic_irls(d.X, d.y);
  double err = (fit.beta - ref).cwiseAbs().maxCoeff();
  return {err, 1e-6, "200x4 design, theta = 0: max |dbeta| vs IRLS = " + format_double(err)};
}

Outcome check_laplace_quadrature() {
  auto d = quadrature_problem();
  auto fit = glmm::fit_glmm(d);
  double gh = sim::oracle_gauss_hermite(d, fit.beta, fit.theta[0], 25);
  double gap = std::abs(fit.loglik - gh) / std::abs(gh);
  return {gap, 0.005, "10x20 design: Laplace loglik " + format_fixed(fit.loglik, 6) + " vs quadrature " +
                          format_fixed(gh, 6) + ", relative gap " + format_double(gap)};
}

Outcome check_laplace_beta() {
  auto d = quadrature_problem();
  auto fit = glmm::fit_glmm(d);
  auto mle = sim::oracle_gauss_hermite_mle(d, 25);
  double err = (fit.beta - mle.beta).cwiseAbs().maxCoeff();
  return {err, 0.02, "10x20 design: max |dbeta| vs quadrature MLE = " + format_double(err)};
}

Outcome check_quadrature_convergence() {
  auto d = quadrature_problem();
  VectorXd beta(2);
  beta << 0.5, -0.4;
  double a = sim::oracle_gauss_hermite(d, beta, 1.0, 25);
  double b = sim::oracle_gauss_hermite(d, beta, 1.0, 51);
  double err = std::abs(a - b);
  return {err, 1e-8, "25 vs 51 nodes: |dloglik| = " + format_double(err)};
}

Outcome check_dbscan() {
  int mismatched = 0;
  std::size_t points = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    std::size_t n = 20 + (seed * 37) % 281;
    auto pts = random_cluster_instance(seed, n);
    points += pts.size();
    geo::ClusterConfig cfg;
    cfg.min_pts = 2 + seed % 4;
    auto fast = geo::dbscan(pts, cfg);
    auto slow = sim::oracle_dbscan_bruteforce(pts, cfg);
    mismatched += !(fast == slow);
  }
  return {double(mismatched), 0,
          "50 instances (" + std::to_string(points) + " points): " + std::to_string(mismatched) +
              " partitions differ from the brute-force oracle"};
}

Outcome check_gv_hand() {
  struct Case {
    std::vector<double> bg;
    std::array<double, 4> expect;  // sd, cv, lbgi, hbgi
  };
  // Evaluated independently at 40-digit precision.
  const Case cases[] = {
      {{70, 180}, {77.781745930520228, 0.62225396744416182, 3.8776027853047317, 3.864655755271274}},
      {{55, 90, 140, 210, 320},
       {105.33280590585252, 0.6462135331647394, 3.8562301996384717, 10.787918725649624}},
      {{100, 100, 250, 40, 180, 75},
       {76.968608319669303, 0.61988140928592727, 7.1755741544130625, 5.0275851961939596}},
  };
  double err = 0;
  for (const auto& c : cases) {
    auto m = phys::gv_metrics(c.bg);
    std::array<double, 4> got{m.sd, m.cv, m.lbgi, m.hbgi};
    for (int k = 0; k < 4; ++k) err = std::max(err, std::abs(got[k] - c.expect[k]));
  }
  return {err, 1e-9, "3 fixed series: max |d| over SD, CV, LBGI, HBGI = " + format_double(err)};
}

using CheckFn = Outcome (*)();
struct Entry {
  const char* name;
  CheckFn fn;
};
constexpr Entry kChecks[] = {
    {"irls", check_irls},
    {"laplace-quadrature", check_laplace_quadrature},
    {"laplace-beta", check_laplace_beta},
    {"quadrature-convergence", check_quadrature_convergence},
    {"dbscan-bruteforce", check_dbscan},
    {"gv-hand", check_gv_hand},
};

}  // namespace

const std::vector<std::string>& check_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& e : kChecks) v.push_back(e.name);
    return v;
  }();
  return names;
}

Check run_check(std::string_view name, bool perturb) {
  for (const auto& e : kChecks) {
    if (name != e.name) continue;
    Check c;
    c.name = e.name;
    auto t0 = std::chrono::steady_clock::now();
    try {
      auto o = e.fn();
      c.error = o.error;
      c.tolerance = perturb ? -1.0 : o.tolerance;
      c.detail = o.detail;
      c.passed = o.error <= c.tolerance;
      if (perturb) c.detail += " [perturbed tolerance]";
    } catch (const Error& ex) {
      c.passed = false;
      c.error = INFINITY;
      c.detail = std::string("error: ") + ex.what();
    }
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return c;
  }
  throw Error("unknown check '" + std::string(name) + "'");
}

std::vector<Check> run_checks(std::string_view perturb) {
  if (!perturb.empty()) {
    bool known = false;
    for (const auto& n : check_names()) known |= n == perturb;
    if (!known) throw Error("unknown check '" + std::string(perturb) + "'");
  }
  std::vector<Check> out;
  for (const auto& n : check_names()) out.push_back(run_check(n, n == perturb));
  return out;
}

std::string format_check(const Check& c) {
  std::ostringstream s;
  s << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << " (tol " << format_double(c.tolerance)
    << ", " << format_fixed(c.seconds, 2) << " s)";
  return s.str();
}

std::vector<geo::GeoPoint> random_cluster_instance(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::normal_distribution<double> z(0, 1);
  const double lat0 = 41.25, lon0 = -96.0;
  const double m_lat = 1.0 / 111320.0;
  const double m_lon = m_lat / std::cos(lat0 * std::numbers::pi / 180);
  int n_blobs = 1 + int(u(rng) * 6);
  std::vector<std::pair<double, double>> blobs;  // metres east, north
  for (int b = 0; b < n_blobs; ++b) blobs.emplace_back(u(rng) * 400, u(rng) * 400);
  std::vector<geo::GeoPoint> pts;
  while (pts.size() < n) {
    double r = u(rng);
    geo::GeoPoint p;
    p.source = u(rng) < 0.5 ? geo::PointSource::Detection : geo::PointSource::LowSpeedSample;
    if (r < 0.05 && !pts.empty()) {
      auto q = pts[std::size_t(u(rng) * double(pts.size()))];
      p.lat = q.lat;
      p.lon = q.lon;
    } else if (r < 0.75) {
      auto [x, y] = blobs[std::size_t(u(rng) * double(blobs.size()))];
      double spread = 3 + 6 * u(rng);
      p.lat = lat0 + (y + spread * z(rng)) * m_lat;
      p.lon = lon0 + (x + spread * z(rng)) * m_lon;
    } else {
      p.lat = lat0 + u(rng) * 400 * m_lat;
      p.lon = lon0 + u(rng) * 400 * m_lon;
    }
    pts.push_back(p);
  }
  return pts;
}

}  // namespace stopsafe::verify
