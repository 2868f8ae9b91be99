#include "stopsafe/glmm.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include <gsl/gsl_cdf.h>
#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include "stopsafe/error.hpp"
#include "stopsafe/util.hpp"

namespace stopsafe::glmm {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

const bool kGslQuiet = [] {
  gsl_set_error_handler_off();
  return true;
}();

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// Design rows in a fixed canonical order (factor levels, outcome, X row), so
// every reduction runs in the same order whatever the caller's row order.
struct Problem {
  MatrixXd X;
  VectorXd y;
  std::vector<std::vector<int>> idx;  // per factor, level of each row
  std::vector<int> q;                 // levels per factor
  std::vector<int> offset;            // position of factor k in u
  int qtot = 0;

  Index n() const { return X.rows(); }
  Index p() const { return X.cols(); }
  int nf() const { return static_cast<int>(q.size()); }
};

Problem prepare(const Design& d) {
  const Index n = d.n(), p = d.p();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    for (const auto& f : d.factors) {
      int la = f.index[static_cast<std::size_t>(a)], lb = f.index[static_cast<std::size_t>(b)];
      if (la != lb) return la < lb;
    }
    if (d.y(a) != d.y(b)) return d.y(a) < d.y(b);
    for (Index j = 0; j < p; ++j)
      if (d.X(a, j) != d.X(b, j)) return d.X(a, j) < d.X(b, j);
    return false;
  });
  Problem P;
  P.X.resize(n, p);
  P.y.resize(n);
  for (Index r = 0; r < n; ++r) {
    P.X.row(r) = d.X.row(order[static_cast<std::size_t>(r)]);
    P.y(r) = d.y(order[static_cast<std::size_t>(r)]);
  }
  for (const auto& f : d.factors) {
    std::vector<int> ix(static_cast<std::size_t>(n));
    for (Index r = 0; r < n; ++r)
      ix[static_cast<std::size_t>(r)] = f.index[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])];
    P.offset.push_back(P.qtot);
    P.q.push_back(static_cast<int>(f.levels.size()));
    P.qtot += static_cast<int>(f.levels.size());
    P.idx.push_back(std::move(ix));
  }
  return P;
}

// H = diag(theta) Z' W Z diag(theta) + I for at most two crossed factors.
// Each row belongs to exactly one level per factor, so the within-factor
// blocks are diagonal. The factor with more levels (A) is eliminated
// directly; the Schur complement on the other factor (B) is dense:
//     S = D_B - C' D_A^{-1} C,  C = H_AB.
class ReSystem {
 public:
  explicit ReSystem(const Problem& P) : P_(P) {
    if (P.nf() == 2) {
      a_ = P.q[0] >= P.q[1] ? 0 : 1;
      b_ = 1 - a_;
    }
  }

  void factorize(const VectorXd& w, std::span<const double> theta) {
    const int nf = P_.nf();
    if (nf == 0) return;
    dA_ = VectorXd::Ones(P_.q[a_]);
    const auto& ia = P_.idx[a_];
    const double ta2 = theta[a_] * theta[a_];
    for (Index i = 0; i < P_.n(); ++i) dA_(ia[static_cast<std::size_t>(i)]) += ta2 * w(i);
    logdet_ = dA_.array().log().sum();
    if (nf == 1) return;
    const auto& ib = P_.idx[b_];
    const double tb2 = theta[b_] * theta[b_], tab = theta[a_] * theta[b_];
    VectorXd dB = VectorXd::Ones(P_.q[b_]);
    C_.setZero(P_.q[a_], P_.q[b_]);
    for (Index i = 0; i < P_.n(); ++i) {
      auto ka = ia[static_cast<std::size_t>(i)], kb = ib[static_cast<std::size_t>(i)];
      dB(kb) += tb2 * w(i);
      C_(ka, kb) += tab * w(i);
    }
    MatrixXd CtDinv = C_.transpose() * dA_.cwiseInverse().asDiagonal();
    MatrixXd S = -CtDinv * C_;
    S.diagonal() += dB;
    llt_.compute(S);
    if (llt_.info() != Eigen::Success) throw FitError("random-effects system is not positive definite");
    logdet_ += 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
  }

  double logdet() const { return P_.nf() == 0 ? 0.0 : logdet_; }

  MatrixXd solve(const MatrixXd& R) const {
    const int nf = P_.nf();
    if (nf == 0) return R;
    if (nf == 1) return dA_.cwiseInverse().asDiagonal() * R;
    const Index oa = P_.offset[a_], ob = P_.offset[b_];
    const Index qa = P_.q[a_], qb = P_.q[b_];
    MatrixXd ra = R.middleRows(oa, qa), rb = R.middleRows(ob, qb);
    MatrixXd ra_scaled = dA_.cwiseInverse().asDiagonal() * ra;
    MatrixXd xb = llt_.solve(rb - C_.transpose() * ra_scaled);
    MatrixXd xa = dA_.cwiseInverse().asDiagonal() * (ra - C_ * xb);
    MatrixXd out(R.rows(), R.cols());
    out.middleRows(oa, qa) = xa;
    out.middleRows(ob, qb) = xb;
    return out;
  }

 private:
  const Problem& P_;
  int a_ = 0, b_ = 1;
  VectorXd dA_;
  MatrixXd C_;
  Eigen::LLT<MatrixXd> llt_;
  double logdet_ = 0;
};

VectorXd linear_predictor(const Problem& P, const VectorXd& beta, std::span<const double> theta,
                          const VectorXd& u) {
  VectorXd eta = P.X * beta;
  for (int k = 0; k < P.nf(); ++k) {
    const auto& ix = P.idx[static_cast<std::size_t>(k)];
    const double t = theta[static_cast<std::size_t>(k)];
    if (t == 0.0) continue;
    for (Index i = 0; i < P.n(); ++i) eta(i) += t * u(P.offset[k] + ix[static_cast<std::size_t>(i)]);
  }
  return eta;
}

// -2 * loglik(y | eta)
double neg2_loglik(const Problem& P, const VectorXd& eta) {
  double s = 0;
  for (Index i = 0; i < P.n(); ++i) s += softplus(eta(i)) - P.y(i) * eta(i);
  return 2.0 * s;
}

// diag(theta) Z' v
VectorXd zt_times(const Problem& P, std::span<const double> theta, const VectorXd& v) {
  VectorXd out = VectorXd::Zero(P.qtot);
  for (int k = 0; k < P.nf(); ++k) {
    const auto& ix = P.idx[static_cast<std::size_t>(k)];
    const double t = theta[static_cast<std::size_t>(k)];
    for (Index i = 0; i < P.n(); ++i) out(P.offset[k] + ix[static_cast<std::size_t>(i)]) += t * v(i);
  }
  return out;
}

// X' W Z diag(theta), p x q
MatrixXd xtwz(const Problem& P, std::span<const double> theta, const VectorXd& w) {
  MatrixXd out = MatrixXd::Zero(P.p(), P.qtot);
  for (int k = 0; k < P.nf(); ++k) {
    const auto& ix = P.idx[static_cast<std::size_t>(k)];
    const double t = theta[static_cast<std::size_t>(k)];
    for (Index i = 0; i < P.n(); ++i)
      out.col(P.offset[k] + ix[static_cast<std::size_t>(i)]) += (t * w(i)) * P.X.row(i).transpose();
  }
  return out;
}

struct Weights {
  VectorXd mu, w;
};
Weights weights(const VectorXd& eta) {
  Weights out{VectorXd(eta.size()), VectorXd(eta.size())};
  for (Index i = 0; i < eta.size(); ++i) {
    double m = logistic(eta(i));
    out.mu(i) = m;
    out.w(i) = std::max(m * (1.0 - m), 1e-300);
  }
  return out;
}

struct ModeState {
  VectorXd beta, u;
  double pdev = 0;  // penalized deviance at (beta, u)
  int iterations = 0;
};

// Newton iterations on the conditional modes u (beta fixed), with step
// halving on the penalized deviance.
ModeState pirls_u(const Problem& P, ReSystem& sys, const VectorXd& beta,
                  std::span<const double> theta, VectorXd u, const FitOptions& opts) {
  ModeState st{beta, std::move(u), 0, 0};
  auto pdev = [&](const VectorXd& uu) {
    return neg2_loglik(P, linear_predictor(P, beta, theta, uu)) + uu.squaredNorm();
  };
  st.pdev = pdev(st.u);
  if (P.qtot == 0) return st;
  for (int it = 0; it < opts.max_pirls_iter; ++it) {
    ++st.iterations;
    VectorXd eta = linear_predictor(P, beta, theta, st.u);
    Weights wt = weights(eta);
    VectorXd grad = st.u - zt_times(P, theta, P.y - wt.mu);
    sys.factorize(wt.w, theta);
    VectorXd step = sys.solve(grad);
    double scale = 1.0;
    VectorXd cand;
    double cand_dev = 0;
    int halvings = 0;
    for (;; ++halvings) {
      cand = st.u - scale * step;
      cand_dev = pdev(cand);
      if (cand_dev <= st.pdev + 1e-10 * std::abs(st.pdev) || halvings >= 40) break;
      scale *= 0.5;
    }
    double change = (scale * step).cwiseAbs().maxCoeff();
    st.u = std::move(cand);
    st.pdev = cand_dev;
    if (change < opts.pirls_tol) return st;
  }
  throw FitError("PIRLS for conditional modes did not converge in " +
                 std::to_string(opts.max_pirls_iter) + " iterations");
}

// Newton iterations jointly on (beta, u); beta unpenalized. Returns the
// joint mode and leaves `rx` holding X'WX - X'WZL H^-1 LZ'WX at the last
// factorization.
ModeState pirls_joint(const Problem& P, ReSystem& sys, std::span<const double> theta,
                      ModeState st, const FitOptions& opts) {
  auto pdev = [&](const VectorXd& b, const VectorXd& uu) {
    return neg2_loglik(P, linear_predictor(P, b, theta, uu)) + uu.squaredNorm();
  };
  st.pdev = pdev(st.beta, st.u);
  st.iterations = 0;
  const double diverged = 1e3 * opts.separation_bound;
  // Weights vanish under separation, so a singular Hessian with large
  // coefficients is reported as separation.
  auto singular = [&] {
    if (st.beta.cwiseAbs().maxCoeff() > opts.separation_bound)
      throw FitError("separation: fixed effects diverge (|beta| > " +
                     format_double(opts.separation_bound) + ")");
    throw FitError("rank-deficient fixed effects");
  };
  for (int it = 0; it < opts.max_pirls_iter; ++it) {
    ++st.iterations;
    VectorXd eta = linear_predictor(P, st.beta, theta, st.u);
    Weights wt = weights(eta);
    VectorXd resid = P.y - wt.mu;
    VectorXd gb = -(P.X.transpose() * resid);
    VectorXd gu = st.u - zt_times(P, theta, resid);
    MatrixXd xwx = P.X.transpose() * wt.w.asDiagonal() * P.X;
    VectorXd db, du;
    if (P.qtot > 0) {
      sys.factorize(wt.w, theta);
      MatrixXd hbu = xwx.rows() ? xtwz(P, theta, wt.w) : MatrixXd();
      MatrixXd hinv_hub = sys.solve(hbu.transpose());
      MatrixXd rx = xwx - hbu * hinv_hub;
      Eigen::LDLT<MatrixXd> ldlt(rx);
      if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0).all()) singular();
      VectorXd hinv_gu = sys.solve(gu);
      db = ldlt.solve(gb - hbu * hinv_gu);
      du = hinv_gu - hinv_hub * db;
    } else {
      Eigen::LDLT<MatrixXd> ldlt(xwx);
      if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0).all()) singular();
      db = ldlt.solve(gb);
      du = VectorXd::Zero(0);
    }
    double scale = 1.0;
    VectorXd cb, cu;
    double cand_dev = 0;
    for (int halvings = 0;; ++halvings) {
      cb = st.beta - scale * db;
      cu = st.u - scale * du;
      cand_dev = pdev(cb, cu);
      if (cand_dev <= st.pdev + 1e-10 * std::abs(st.pdev) || halvings >= 40) break;
      scale *= 0.5;
    }
    double change = (scale * db).cwiseAbs().maxCoeff();
    if (du.size()) change = std::max(change, (scale * du).cwiseAbs().maxCoeff());
    st.beta = std::move(cb);
    st.u = std::move(cu);
    st.pdev = cand_dev;
    if (st.beta.cwiseAbs().maxCoeff() > diverged)
      throw FitError("separation: fixed effects diverge (|beta| > " +
                     format_double(opts.separation_bound) + ")");
    if (change < opts.pirls_tol) return st;
  }
  if (st.beta.cwiseAbs().maxCoeff() > opts.separation_bound)
    throw FitError("separation: fixed effects diverge (|beta| > " +
                   format_double(opts.separation_bound) + ")");
  throw FitError("joint PIRLS did not converge in " + std::to_string(opts.max_pirls_iter) +
                 " iterations");
}

// Laplace deviance at the modes in `st` (recomputes W at the modes).
double laplace_at(const Problem& P, ReSystem& sys, std::span<const double> theta,
                  const ModeState& st) {
  if (P.qtot == 0) return st.pdev;
  VectorXd eta = linear_predictor(P, st.beta, theta, st.u);
  Weights wt = weights(eta);
  sys.factorize(wt.w, theta);
  return st.pdev + sys.logdet();
}

struct NmResult {
  VectorXd x;
  double f = 0;
  int iterations = 0;
  bool converged = false;
};

// GSL Nelder-Mead (nmsimplex2). Exceptions from `f` are caught and turned
// into a large value so the simplex moves away from the failing region.
NmResult nelder_mead(const std::function<double(const VectorXd&)>& f, const VectorXd& x0,
                     const VectorXd& step, double tol, int max_iter, std::ostringstream& trace) {
  struct Ctx {
    const std::function<double(const VectorXd&)>* f;
    std::ostringstream* trace;
  } ctx{&f, &trace};
  const auto n = static_cast<std::size_t>(x0.size());
  gsl_multimin_function fn;
  fn.n = n;
  fn.params = &ctx;
  fn.f = [](const gsl_vector* v, void* params) -> double {
    auto* c = static_cast<Ctx*>(params);
    VectorXd x(static_cast<Index>(v->size));
    for (std::size_t i = 0; i < v->size; ++i) x(static_cast<Index>(i)) = gsl_vector_get(v, i);
    try {
      double val = (*c->f)(x);
      return std::isfinite(val) ? val : 1e300;
    } catch (const Error& e) {
      *c->trace << "  evaluation failed: " << e.what() << '\n';
      return 1e300;
    }
  };
  gsl_vector* x = gsl_vector_alloc(n);
  gsl_vector* ss = gsl_vector_alloc(n);
  for (std::size_t i = 0; i < n; ++i) {
    gsl_vector_set(x, i, x0(static_cast<Index>(i)));
    gsl_vector_set(ss, i, step(static_cast<Index>(i)));
  }
  gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n);
  gsl_multimin_fminimizer_set(s, &fn, x, ss);
  NmResult res;
  int status = GSL_CONTINUE;
  for (int it = 0; it < max_iter && status == GSL_CONTINUE; ++it) {
    ++res.iterations;
    if (gsl_multimin_fminimizer_iterate(s)) break;
    double size = gsl_multimin_fminimizer_size(s);
    status = gsl_multimin_test_size(size, tol);
  }
  res.converged = status == GSL_SUCCESS;
  res.x.resize(static_cast<Index>(n));
  for (std::size_t i = 0; i < n; ++i) res.x(static_cast<Index>(i)) = gsl_vector_get(s->x, i);
  res.f = s->fval;
  gsl_multimin_fminimizer_free(s);
  gsl_vector_free(x);
  gsl_vector_free(ss);
  return res;
}

std::vector<double> abs_theta(const VectorXd& x, Index k) {
  std::vector<double> t(static_cast<std::size_t>(k));
  for (Index i = 0; i < k; ++i) t[static_cast<std::size_t>(i)] = std::abs(x(i));
  return t;
}

std::string theta_str(std::span<const double> t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.size(); ++i) s += (i ? ", " : "") + format_double(t[i]);
  return s + "]";
}

double sample_variance(const VectorXd& v) {
  if (v.size() < 2) return 0.0;
  double m = v.mean();
  return (v.array() - m).square().sum() / static_cast<double>(v.size() - 1);
}

}  // namespace

double logistic_loglik(const Design& d, const VectorXd& beta) {
  VectorXd eta = d.X * beta;
  double s = 0;
  for (Index i = 0; i < d.n(); ++i) s += d.y(i) * eta(i) - softplus(eta(i));
  return s;
}

LaplaceEval laplace_deviance(const Design& d, const VectorXd& beta, std::span<const double> theta,
                             const FitOptions& opts, const VectorXd* u_start) {
  Problem P = prepare(d);
  if (theta.size() != static_cast<std::size_t>(P.nf()))
    throw Error("laplace_deviance: one theta per random factor required");
  ReSystem sys(P);
  VectorXd u0 = VectorXd::Zero(P.qtot);
  if (u_start && u_start->size() == P.qtot) u0 = *u_start;
  ModeState st = pirls_u(P, sys, beta, theta, u0, opts);
  return {laplace_at(P, sys, theta, st), st.u, st.iterations};
}

double icc_from_tau(std::span<const double> tau00) {
  double s = std::accumulate(tau00.begin(), tau00.end(), 0.0);
  return s / (s + kLogisticResidualVariance);
}

GlmmFit fit_glmm(const Design& d, const FitOptions& opts) {
  const Problem P = prepare(d);
  const Index p = P.p();
  const int nf = P.nf();
  if (P.n() == 0) throw FitError("no observations");
  if (P.y.minCoeff() == P.y.maxCoeff()) throw FitError("outcome has a single class");
  for (int k = 0; k < nf; ++k)
    if (P.q[static_cast<std::size_t>(k)] < 2)
      throw FitError("random factor '" + d.factors[static_cast<std::size_t>(k)].name +
                     "' needs at least 2 levels");
  if (opts.fixed_theta && opts.fixed_theta->size() != static_cast<std::size_t>(nf))
    throw FitError("fixed_theta needs one value per random factor");
  if (Eigen::ColPivHouseholderQR<MatrixXd>(P.X).rank() < p) {
    std::string cols;
    for (const auto& c : d.columns) cols += (cols.empty() ? "" : ", ") + c;
    throw FitError("rank-deficient fixed effects (columns " + cols + ")");
  }

  ReSystem sys(P);
  std::ostringstream trace;
  int total_pirls = 0;
  int outer = 0;

  ModeState cur;
  cur.beta = opts.start_beta && opts.start_beta->size() == p ? *opts.start_beta : VectorXd::Zero(p);
  cur.u = VectorXd::Zero(P.qtot);

  // Stage 1: theta by Nelder-Mead with (beta, u) at their joint mode.
  std::vector<double> theta(static_cast<std::size_t>(nf), 1.0);
  if (opts.fixed_theta) theta = *opts.fixed_theta;
  else if (opts.start_theta && opts.start_theta->size() == theta.size()) theta = *opts.start_theta;
  for (double& t : theta) t = std::abs(t);

  auto profiled = [&](std::span<const double> th) {
    ModeState st = pirls_joint(P, sys, th, cur, opts);
    total_pirls += st.iterations;
    cur = st;
    double dev = laplace_at(P, sys, th, st);
    trace << "stage1 theta=" << theta_str(th) << " dev=" << format_double(dev) << '\n';
    return dev;
  };

  // A full warm start (theta and beta) goes straight to the refinement.
  const bool warm = opts.refine && opts.start_theta && opts.start_beta &&
                    opts.start_beta->size() == p && opts.start_theta->size() == theta.size();
  if (nf > 0 && !opts.fixed_theta && !warm) {
    VectorXd x0(nf), step(nf);
    for (int k = 0; k < nf; ++k) {
      x0(k) = theta[static_cast<std::size_t>(k)];
      step(k) = std::max(0.1, 0.5 * x0(k));
    }
    // Start away from the symmetric point theta = 0.
    for (int k = 0; k < nf; ++k)
      if (x0(k) < 0.05) x0(k) = 0.05;
    auto res = nelder_mead([&](const VectorXd& x) { return profiled(abs_theta(x, nf)); }, x0, step,
                           opts.theta_tol, opts.max_outer_iter, trace);
    outer += res.iterations;
    if (!res.converged)
      throw FitError("theta optimization did not converge in " +
                         std::to_string(opts.max_outer_iter) + " iterations",
                     trace.str());
    theta = abs_theta(res.x, nf);
  }
  // Joint mode at the chosen theta (also the whole fit when nf == 0).
  cur = pirls_joint(P, sys, theta, cur, opts);
  total_pirls += cur.iterations;

  // Stage 2: Laplace deviance over (theta, beta) jointly, modes by PIRLS.
  bool any_theta = std::any_of(theta.begin(), theta.end(), [](double t) { return t > 0; });
  if (opts.refine && nf > 0 && any_theta) {
    const Index kth = opts.fixed_theta ? 0 : nf;
    // Rough scale for beta steps from the stage-1 curvature.
    VectorXd eta = linear_predictor(P, cur.beta, theta, cur.u);
    Weights wt = weights(eta);
    sys.factorize(wt.w, theta);
    MatrixXd hbu = xtwz(P, theta, wt.w);
    MatrixXd rx = P.X.transpose() * wt.w.asDiagonal() * P.X - hbu * sys.solve(hbu.transpose());
    VectorXd se0 = rx.ldlt().solve(MatrixXd::Identity(p, p)).diagonal().cwiseAbs().cwiseSqrt();

    VectorXd x0(kth + p), step(kth + p);
    for (Index k = 0; k < kth; ++k) {
      x0(k) = theta[static_cast<std::size_t>(k)];
      step(k) = std::max(0.02, 0.1 * x0(k));
    }
    x0.tail(p) = cur.beta;
    for (Index j = 0; j < p; ++j) step(kth + j) = std::max(1e-3, 0.2 * se0(j));
    VectorXd u_warm = cur.u;
    auto split = [&](const VectorXd& x) {
      std::vector<double> th = kth ? abs_theta(x, kth) : theta;
      return std::pair{th, VectorXd(x.tail(p))};
    };
    auto laplace = [&](const VectorXd& x) {
      auto [th, b] = split(x);
      ModeState st = pirls_u(P, sys, b, th, u_warm, opts);
      total_pirls += st.iterations;
      u_warm = st.u;
      double dev = laplace_at(P, sys, th, st);
      trace << "stage2 theta=" << theta_str(th) << " dev=" << format_double(dev) << '\n';
      return dev;
    };
    double start_dev = laplace(x0);
    auto res = nelder_mead(laplace, x0, step, opts.theta_tol, opts.max_outer_iter, trace);
    outer += res.iterations;
    if (!res.converged)
      throw FitError("Laplace refinement did not converge in " +
                         std::to_string(opts.max_outer_iter) + " iterations",
                     trace.str());
    if (res.f <= start_dev) {
      auto [th, b] = split(res.x);
      theta = th;
      cur.beta = b;
      cur = pirls_u(P, sys, cur.beta, theta, u_warm, opts);
      total_pirls += cur.iterations;
    }
  }

  if (cur.beta.cwiseAbs().maxCoeff() > opts.separation_bound)
    throw FitError("separation: |beta| exceeds " + format_double(opts.separation_bound), trace.str());

  GlmmFit fit;
  fit.columns = d.columns;
  fit.beta = cur.beta;
  fit.theta = theta;
  for (const auto& f : d.factors) {
    fit.factor_names.push_back(f.name);
    fit.n_groups.push_back(f.levels.size());
  }
  for (double t : theta) fit.tau00.push_back(t * t);
  fit.deviance = laplace_at(P, sys, theta, cur);
  fit.loglik = -0.5 * fit.deviance;

  // Fixed-effect covariance from the information with the modes profiled out.
  VectorXd eta = linear_predictor(P, cur.beta, theta, cur.u);
  Weights wt = weights(eta);
  MatrixXd info = P.X.transpose() * wt.w.asDiagonal() * P.X;
  if (P.qtot > 0) {
    sys.factorize(wt.w, theta);
    MatrixXd hbu = xtwz(P, theta, wt.w);
    info -= hbu * sys.solve(hbu.transpose());
  }
  Eigen::LDLT<MatrixXd> ldlt(info);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0).all())
    throw FitError("fixed-effect information is singular", trace.str());
  fit.vcov = ldlt.solve(MatrixXd::Identity(p, p));
  fit.vcov = 0.5 * (fit.vcov + fit.vcov.transpose()).eval();
  fit.se = fit.vcov.diagonal().cwiseSqrt();

  double tau_sum = std::accumulate(fit.tau00.begin(), fit.tau00.end(), 0.0);
  fit.icc = icc_from_tau(fit.tau00);
  double var_fixed = sample_variance(P.X * fit.beta);
  double denom = var_fixed + tau_sum + kLogisticResidualVariance;
  fit.r2_marginal = var_fixed / denom;
  fit.r2_conditional = (var_fixed + tau_sum) / denom;
  fit.n_obs = static_cast<std::size_t>(P.n());
  fit.converged = true;
  fit.n_pirls_iter = total_pirls;
  fit.n_outer_iter = outer;
  fit.fingerprint = d.fingerprint();
  return fit;
}

double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

std::vector<WaldRow> wald_summary(const GlmmFit& fit) {
  std::vector<WaldRow> rows;
  for (Index j = 0; j < fit.beta.size(); ++j) {
    WaldRow r;
    r.term = fit.columns[static_cast<std::size_t>(j)];
    r.beta = fit.beta(j);
    r.se = fit.se(j);
    r.odds_ratio = std::exp(r.beta);
    r.ci_low = std::exp(r.beta - kZ975 * r.se);
    r.ci_high = std::exp(r.beta + kZ975 * r.se);
    r.z = r.se > 0 ? r.beta / r.se : (r.beta == 0 ? 0.0 : std::copysign(INFINITY, r.beta));
    r.p = normal_two_sided_p(r.z);
    rows.push_back(std::move(r));
  }
  return rows;
}

LrtResult lrt_compare(const GlmmFit& full, const GlmmFit& reduced) {
  if (full.n_obs != reduced.n_obs || full.fingerprint != reduced.fingerprint)
    throw Error("lrt_compare: models were fitted to different rows");
  if (full.columns != reduced.columns)
    throw Error("lrt_compare: models have different fixed effects");
  for (const auto& f : reduced.factor_names)
    if (std::find(full.factor_names.begin(), full.factor_names.end(), f) == full.factor_names.end())
      throw Error("lrt_compare: reduced random factor '" + f + "' is not in the full model");
  LrtResult r;
  r.df = static_cast<int>(full.theta.size()) - static_cast<int>(reduced.theta.size());
  r.chi2 = std::max(0.0, 2.0 * (full.loglik - reduced.loglik));
  r.p = r.df > 0 ? gsl_cdf_chisq_Q(r.chi2, r.df) : 1.0;
  return r;
}

void flag_influence(std::vector<InfluenceRecord>& records, double threshold,
                    double visual_multiplier) {
  std::vector<double> positive;
  for (const auto& r : records)
    if (r.available && r.cooks_d > 0) positive.push_back(r.cooks_d);
  double median = 0;
  if (!positive.empty()) {
    std::sort(positive.begin(), positive.end());
    std::size_t m = positive.size();
    median = m % 2 ? positive[m / 2] : 0.5 * (positive[m / 2 - 1] + positive[m / 2]);
  }
  for (auto& r : records) {
    r.flagged = r.available && (r.cooks_d > threshold ||
                                (visual_multiplier > 0 && median > 0 &&
                                 r.cooks_d > visual_multiplier * median));
  }
}

std::vector<InfluenceRecord> cooks_distance_by_group(const Design& d, const GlmmFit& fit,
                                                     std::string_view factor,
                                                     const CooksOptions& opts, Exec exec) {
  const Factor& f = d.factor(factor);
  if (f.levels.size() < 3)
    throw Error("cooks_distance_by_group: factor '" + f.name + "' needs at least 3 levels");
  const Index p = fit.beta.size();
  Eigen::LDLT<MatrixXd> vinv(fit.vcov);

  std::vector<InfluenceRecord> out(f.levels.size());
  const long long nlev = static_cast<long long>(f.levels.size());
#pragma omp parallel for schedule(dynamic) if (exec == Exec::Parallel)
  for (long long g = 0; g < nlev; ++g) {
    auto& rec = out[static_cast<std::size_t>(g)];
    rec.group_id = f.levels[static_cast<std::size_t>(g)];
    rec.factor = f.name;
    try {
      Design dg = d.without_level(factor, rec.group_id);
      FitOptions o = opts.fit;
      o.start_theta = fit.theta;
      o.start_beta = fit.beta;
      GlmmFit fg = fit_glmm(dg, o);
      VectorXd delta = fit.beta - fg.beta;
      rec.cooks_d = std::max(0.0, delta.dot(vinv.solve(delta)) / static_cast<double>(p));
    } catch (const Error& e) {
      rec.available = false;
      rec.cooks_d = std::numeric_limits<double>::quiet_NaN();
      rec.message = e.what();
    }
  }
  flag_influence(out, opts.threshold, opts.visual_multiplier);
  return out;
}

}  // namespace stopsafe::glmm
