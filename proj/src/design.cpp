#include <algorithm>
#include <cstring>
#include <numeric>
#include <set>

#include "stopsafe/error.hpp"
#include "stopsafe/glmm.hpp"
#include "stopsafe/util.hpp"

namespace stopsafe::glmm {

std::string Term::name() const {
  std::string s;
  for (const auto& c : covariates) {
    if (!s.empty()) s += ':';
    s += c;
  }
  return s;
}

void ModelSpec::validate() const {
  std::set<std::string> mains;
  for (const auto& t : fixed_terms) {
    if (t.covariates.empty() || t.covariates.size() > 2)
      throw Error("model spec: terms are main effects or two-way interactions");
    if (t.covariates.size() == 1) mains.insert(t.covariates[0]);
  }
  for (const auto& t : fixed_terms)
    if (t.covariates.size() == 2)
      for (const auto& c : t.covariates)
        if (!mains.count(c))
          throw Error("model spec: interaction '" + t.name() + "' references undeclared main effect '" +
                      c + "'");
  std::set<std::string> seen;
  for (const auto& f : random_factors) {
    if (f != kParticipant && f != kIntersection)
      throw Error("model spec: unknown random factor '" + f + "'");
    if (!seen.insert(f).second) throw Error("model spec: repeated random factor '" + f + "'");
  }
}

const Factor& Design::factor(std::string_view name) const {
  for (const auto& f : factors)
    if (f.name == name) return f;
  throw Error("design has no random factor '" + std::string(name) + "'");
}

namespace {

Factor make_factor(std::string name, const std::vector<std::string>& labels) {
  Factor f;
  f.name = std::move(name);
  f.levels = labels;
  std::sort(f.levels.begin(), f.levels.end());
  f.levels.erase(std::unique(f.levels.begin(), f.levels.end()), f.levels.end());
  f.index.reserve(labels.size());
  for (const auto& l : labels)
    f.index.push_back(static_cast<int>(
        std::lower_bound(f.levels.begin(), f.levels.end(), l) - f.levels.begin()));
  return f;
}

}  // namespace

Design Design::subset(const std::vector<bool>& keep) const {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < n(); ++i)
    if (keep[static_cast<std::size_t>(i)]) rows.push_back(i);
  Design out;
  out.columns = columns;
  out.X.resize(static_cast<Eigen::Index>(rows.size()), p());
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.X.row(static_cast<Eigen::Index>(r)) = X.row(rows[r]);
    out.y(static_cast<Eigen::Index>(r)) = y(rows[r]);
    if (!row_ids.empty()) out.row_ids.push_back(row_ids[rows[r]]);
    if (!row_participant.empty()) out.row_participant.push_back(row_participant[rows[r]]);
  }
  for (const auto& f : factors) {
    std::vector<std::string> labels;
    labels.reserve(rows.size());
    for (auto i : rows) labels.push_back(f.levels[f.index[i]]);
    out.factors.push_back(make_factor(f.name, labels));
  }
  return out;
}

Design Design::without_level(std::string_view factor_name, std::string_view level) const {
  const Factor& f = factor(factor_name);
  auto it = std::lower_bound(f.levels.begin(), f.levels.end(), level);
  if (it == f.levels.end() || *it != level)
    throw Error("factor '" + f.name + "' has no level '" + std::string(level) + "'");
  int drop = static_cast<int>(it - f.levels.begin());
  std::vector<bool> keep(static_cast<std::size_t>(n()));
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = f.index[i] != drop;
  return subset(keep);
}

std::string Design::fingerprint() const {
  std::uint64_t h = fnv1a64("design");
  auto mix = [&](const void* p, std::size_t len) {
    h = fnv1a64(std::string_view(static_cast<const char*>(p), len), h);
  };
  for (Eigen::Index i = 0; i < n(); ++i) {
    double yi = y(i);
    mix(&yi, sizeof yi);
    for (Eigen::Index j = 0; j < p(); ++j) {
      double x = X(i, j);
      mix(&x, sizeof x);
    }
    if (!row_ids.empty()) {
      const auto& id = row_ids[static_cast<std::size_t>(i)];
      mix(id.data(), id.size() + 1);
    }
  }
  return hex16(h);
}

Design build_design(std::span<const ModelRow> rows, const CovariateTable& covariates,
                    const ModelSpec& spec) {
  spec.validate();
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (rows[a].participant_id != rows[b].participant_id)
      return rows[a].participant_id < rows[b].participant_id;
    return rows[a].event_id < rows[b].event_id;
  });

  // Missing covariates, reported per covariate with the affected participants.
  std::set<std::string> needed;
  for (const auto& t : spec.fixed_terms)
    for (const auto& c : t.covariates) needed.insert(c);
  std::string missing;
  for (const auto& c : needed) {
    std::set<std::string> who;
    for (const auto& r : rows) {
      auto p = covariates.find(r.participant_id);
      if (p == covariates.end() || !p->second.count(c)) who.insert(r.participant_id);
    }
    if (who.empty()) continue;
    if (!missing.empty()) missing += "; ";
    missing += "'" + c + "' for participants:";
    for (const auto& w : who) missing += " " + w;
  }
  if (!missing.empty()) throw Error("missing covariate " + missing);

  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = static_cast<Eigen::Index>(spec.fixed_terms.size() + 1);
  Design d;
  d.X.resize(n, p);
  d.y.resize(n);
  d.columns.push_back("(Intercept)");
  for (const auto& t : spec.fixed_terms) d.columns.push_back(t.name());
  std::vector<std::string> pid, sid;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[order[static_cast<std::size_t>(i)]];
    if (r.y != 0 && r.y != 1) throw Error("outcome must be 0/1 for event '" + r.event_id + "'");
    d.y(i) = r.y;
    d.X(i, 0) = 1.0;
    const auto& cov = covariates.at(r.participant_id);
    for (std::size_t k = 0; k < spec.fixed_terms.size(); ++k) {
      double v = 1.0;
      for (const auto& c : spec.fixed_terms[k].covariates) v *= cov.at(c);
      d.X(i, static_cast<Eigen::Index>(k + 1)) = v;
    }
    d.row_ids.push_back(r.event_id);
    d.row_participant.push_back(r.participant_id);
    pid.push_back(r.participant_id);
    sid.push_back(r.site_id);
  }
  for (Eigen::Index j = 1; j < p; ++j)
    if (n > 0 && d.X.col(j).maxCoeff() == d.X.col(j).minCoeff())
      throw Error("constant design column '" + d.columns[static_cast<std::size_t>(j)] + "'");
  for (const auto& f : spec.random_factors)
    d.factors.push_back(make_factor(f, f == kParticipant ? pid : sid));
  return d;
}

Design make_design(Eigen::MatrixXd X, Eigen::VectorXd y, std::vector<Factor> factors,
                   std::vector<std::string> columns) {
  Design d;
  d.X = std::move(X);
  d.y = std::move(y);
  d.factors = std::move(factors);
  if (columns.empty()) {
    columns.push_back("(Intercept)");
    for (Eigen::Index j = 1; j < d.X.cols(); ++j) columns.push_back("x" + std::to_string(j));
  }
  d.columns = std::move(columns);
  return d;
}

}  // namespace stopsafe::glmm
