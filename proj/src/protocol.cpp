#include "stopsafe/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>

#include "stopsafe/csv.hpp"
#include "stopsafe/error.hpp"
#include "stopsafe/util.hpp"

namespace stopsafe::proto {

namespace {

constexpr const char* kHypothesisNames[] = {"sleep", "obesity", "glucose_lbgi_sd", "glucose_hbgi_cv"};
constexpr const char* kDisplayNames[] = {"Sleep", "Obesity", "Glucose: LBGI + SD", "Glucose: HBGI + CV"};
const std::set<std::string> kContinuous{"age", "sleep", "bmi", "sd", "cv", "lbgi", "hbgi"};

std::optional<double> raw_value(const phys::CovariateRow& r, const std::string& name) {
  if (name == "age") return r.age;
  if (name == "gender") return r.gender == Gender::Male ? 1.0 : 0.0;
  if (name == "type") return r.cohort == Cohort::T1DM ? 1.0 : 0.0;
  if (name == "bmi") return r.bmi;
  if (name == "sleep") return r.sleep_h;
  if (name == "sd") return r.gv ? std::optional(r.gv->sd) : std::nullopt;
  if (name == "cv") return r.gv ? std::optional(r.gv->cv) : std::nullopt;
  if (name == "lbgi") return r.gv ? std::optional(r.gv->lbgi) : std::nullopt;
  if (name == "hbgi") return r.gv ? std::optional(r.gv->hbgi) : std::nullopt;
  throw Error("unknown covariate '" + name + "'");
}

glmm::Term term1(std::string a) { return {{std::move(a)}}; }
glmm::Term term2(std::string a, std::string b) { return {{std::move(a), std::move(b)}}; }

ModelColumn fit_column(const std::string& label, const glmm::Design& d,
                       const glmm::FitOptions& opts, const std::string& where) {
  try {
    ModelColumn c{label, glmm::fit_glmm(d, opts), {}};
    c.wald = glmm::wald_summary(c.fit);
    return c;
  } catch (const FitError& e) {
    throw FitError(where + ": " + e.what(), e.trace());
  } catch (const Error& e) {
    throw Error(where + ": " + e.what());
  }
}

std::vector<std::string> flagged_groups(std::vector<glmm::InfluenceRecord>& records,
                                        const ProtocolOptions& opts) {
  std::vector<std::string> out;
  for (auto& r : records) {
    auto it = opts.influence_overrides.find(r.factor + ":" + r.group_id);
    if (it != opts.influence_overrides.end()) r.flagged = it->second;
    if (r.flagged) out.push_back(r.group_id);
  }
  return out;
}

}  // namespace

std::string_view to_string(Hypothesis h) { return kHypothesisNames[static_cast<int>(h)]; }
std::string_view display_name(Hypothesis h) { return kDisplayNames[static_cast<int>(h)]; }

std::optional<Hypothesis> hypothesis_from_string(std::string_view s) {
  for (auto h : kAllHypotheses)
    if (s == to_string(h)) return h;
  return std::nullopt;
}

HypothesisSpec hypothesis_spec(Hypothesis h) {
  HypothesisSpec s;
  s.name = h;
  switch (h) {
    case Hypothesis::Sleep:
      s.fixed_terms = {term1("age"), term1("gender"), term1("type"), term1("sleep"), term2("type", "sleep")};
      break;
    case Hypothesis::Obesity:
      s.fixed_terms = {term1("age"), term1("gender"), term1("type"), term1("bmi"), term2("type", "bmi")};
      break;
    case Hypothesis::GlucoseLbgiSd:
      s.sample = Sample::T1dmOnly;
      s.gv_pair = {"lbgi", "sd"};
      s.fixed_terms = {term1("age"), term1("gender"), term1("lbgi"), term1("sd")};
      break;
    case Hypothesis::GlucoseHbgiCv:
      s.sample = Sample::T1dmOnly;
      s.gv_pair = {"hbgi", "cv"};
      s.fixed_terms = {term1("age"), term1("gender"), term1("hbgi"), term1("cv")};
      break;
  }
  return s;
}

std::string predictor_label(std::string_view column) {
  static const std::map<std::string, std::string, std::less<>> labels{
      {"(Intercept)", "Intercept"},       {"age", "Age"},
      {"gender", "Gender: Male"},         {"type", "Participant type: T1DM"},
      {"sleep", "Avg. sleep duration"},   {"bmi", "BMI"},
      {"sd", "SD"},                       {"cv", "CV"},
      {"lbgi", "LBGI"},                   {"hbgi", "HBGI"}};
  std::string out;
  std::size_t start = 0;
  while (true) {
    auto colon = column.find(':', start);
    auto part = column.substr(start, colon == std::string_view::npos ? std::string_view::npos : colon - start);
    auto it = labels.find(part);
    if (!out.empty()) out += " x ";
    out += it == labels.end() ? std::string(part) : it->second;
    if (colon == std::string_view::npos) break;
    start = colon + 1;
  }
  return out;
}

ProtocolRun run_protocol(const HypothesisSpec& spec, std::span<const StopEvent> events,
                         std::span<const phys::CovariateRow> covariates,
                         const ProtocolOptions& opts, Exec exec) {
  ProtocolRun run;
  run.spec = spec;
  run.n_events_in = events.size();
  const std::string where = std::string("hypothesis ") + std::string(to_string(spec.name));

  // Step 1: full model on the hypothesis sample.
  std::map<std::string, const phys::CovariateRow*> by_id;
  for (const auto& c : covariates) by_id[c.participant_id] = &c;
  std::set<std::string> needed;
  for (const auto& t : spec.fixed_terms)
    for (const auto& c : t.covariates) needed.insert(c);

  std::vector<glmm::ModelRow> rows;
  std::set<std::string> with_events;
  for (const auto& e : events) {
    auto it = by_id.find(e.participant_id);
    if (it == by_id.end()) {
      run.excluded_participants[e.participant_id] = "no covariates";
      continue;
    }
    if (spec.sample == Sample::T1dmOnly && it->second->cohort != Cohort::T1DM) continue;
    ++run.n_events_sample;
    std::string missing;
    for (const auto& c : needed)
      if (!raw_value(*it->second, c)) missing += (missing.empty() ? "missing " : ", ") + c;
    if (!missing.empty()) {
      run.excluded_participants[e.participant_id] = missing;
      continue;
    }
    with_events.insert(e.participant_id);
    rows.push_back({e.event_id, e.participant_id, e.site_id, e.outcome == Outcome::Unsafe ? 1 : 0});
  }
  if (rows.empty()) throw Error(where + ", step 1: empty sample after filters");
  run.participants.assign(with_events.begin(), with_events.end());

  glmm::CovariateTable table;
  for (const auto& id : run.participants)
    for (const auto& c : needed) table[id][c] = *raw_value(*by_id.at(id), c);
  for (const auto& c : needed) {
    if (!kContinuous.count(c)) continue;
    std::map<std::string, double> values;
    for (const auto& id : run.participants) values[id] = table[id][c];
    try {
      auto z = phys::standardize(c, values, run.participants);
      for (const auto& [id, v] : z.z) table[id][c] = v;
    } catch (const Error& e) {
      throw Error(where + ", step 1: " + e.what());
    }
  }

  if (!spec.gv_pair.empty()) {
    if (spec.gv_pair.size() != 2) throw Error(where + ": a GV pair needs exactly two metrics");
    std::vector<phys::GvMetrics> gv;
    for (const auto& id : run.participants) gv.push_back(*by_id.at(id)->gv);
    auto r = phys::pearson_corr_matrix(gv);
    auto index = [&](const std::string& name) {
      for (int k = 0; k < 4; ++k)
        if (name == phys::kGvNames[k]) return k;
      throw Error(where + ": unknown GV metric '" + name + "'");
    };
    run.gv_pair_r = r(index(spec.gv_pair[0]), index(spec.gv_pair[1]));
    if (std::abs(*run.gv_pair_r) >= opts.gv_correlation_cutoff)
      throw Error(where + ": GV pair " + spec.gv_pair[0] + "/" + spec.gv_pair[1] +
                  " fails the correlation screen (|r| = " + format_fixed(std::abs(*run.gv_pair_r), 3) +
                  " >= " + format_double(opts.gv_correlation_cutoff) + ")");
  }

  glmm::ModelSpec full{"unsafe", spec.fixed_terms,
                       {std::string(glmm::kParticipant), std::string(glmm::kIntersection)}};
  glmm::ModelSpec reduced{"unsafe", spec.fixed_terms, {std::string(glmm::kParticipant)}};
  glmm::Design d_full, d_reduced;
  try {
    d_full = glmm::build_design(rows, table, full);
    d_reduced = glmm::build_design(rows, table, reduced);
  } catch (const Error& e) {
    throw Error(where + ", step 1: " + e.what());
  }

  // Step 2: random-structure selection.
  run.with_intersection = fit_column("with intxn reff", d_full, opts.fit, where + ", step 2 (with intersection intercept)");
  run.without_intersection = fit_column("without intxn reff", d_reduced, opts.fit, where + ", step 2 (participant intercept only)");
  run.lrt = glmm::lrt_compare(run.with_intersection.fit, run.without_intersection.fit);
  run.keep_intersection = run.lrt.p < opts.alpha;
  const glmm::Design& chosen = run.keep_intersection ? d_full : d_reduced;
  run.n_obs_step2 = static_cast<std::size_t>(chosen.n());

  // Step 3: influence on the selected model.
  glmm::CooksOptions co{opts.cooks_threshold, opts.visual_multiplier, opts.fit};
  try {
    run.influence_participant =
        glmm::cooks_distance_by_group(chosen, run.selected().fit, glmm::kParticipant, co, exec);
    if (run.keep_intersection)
      run.influence_intersection =
          glmm::cooks_distance_by_group(chosen, run.selected().fit, glmm::kIntersection, co, exec);
  } catch (const Error& e) {
    throw Error(where + ", step 3: " + e.what());
  }
  run.removed_participants = flagged_groups(run.influence_participant, opts);
  run.removed_intersections = flagged_groups(run.influence_intersection, opts);

  // Step 4: one joint removal, same random structure.
  if (run.removed_participants.empty() && run.removed_intersections.empty()) {
    run.final_fit = run.selected();
  } else {
    std::set<std::string> rp(run.removed_participants.begin(), run.removed_participants.end());
    std::set<std::string> ri(run.removed_intersections.begin(), run.removed_intersections.end());
    const auto& fp = chosen.factor(glmm::kParticipant);
    const glmm::Factor* fi = run.keep_intersection ? &chosen.factor(glmm::kIntersection) : nullptr;
    std::vector<bool> keep(static_cast<std::size_t>(chosen.n()));
    for (std::size_t i = 0; i < keep.size(); ++i) {
      bool drop = rp.count(fp.levels[fp.index[i]]) > 0;
      if (fi) drop = drop || ri.count(fi->levels[fi->index[i]]) > 0;
      keep[i] = !drop;
    }
    glmm::Design reduced_rows = chosen.subset(keep);
    if (reduced_rows.n() == 0) throw Error(where + ", step 4: no rows left after outlier removal");
    run.final_fit = fit_column("without outliers", reduced_rows, opts.fit, where + ", step 4");
  }
  run.final_fit.label = "without outliers";
  run.n_obs_step4 = run.final_fit.fit.n_obs;
  return run;
}

// ---------------------------------------------------------------- tables

std::string format_count_percent(std::size_t k, std::size_t n) {
  double pct = n ? 100.0 * static_cast<double>(k) / static_cast<double>(n) : 0.0;
  return std::to_string(k) + " (" + format_fixed(pct, 1) + "%)";
}

std::string format_p(double p) {
  if (p < 0.001) return "<.001";
  return format_fixed(p, 3);
}

DescriptiveTable describe_cohort(std::span<const ParticipantProfile> profiles,
                                 std::span<const phys::CovariateRow> covariates) {
  std::map<std::string, const phys::CovariateRow*> cov;
  for (const auto& c : covariates) cov[c.participant_id] = &c;
  std::vector<const ParticipantProfile*> groups[3];
  for (const auto& p : profiles) {
    groups[p.cohort == Cohort::T1DM ? 0 : 1].push_back(&p);
    groups[2].push_back(&p);
  }
  DescriptiveTable t;
  const char* names[] = {"T1DM", "Control", "Total"};
  for (int g = 0; g < 3; ++g)
    t.groups.push_back(std::string(names[g]) + " (N = " + std::to_string(groups[g].size()) + ")");

  using Getter = std::function<std::optional<double>(const ParticipantProfile&)>;
  auto numeric = [&](const std::string& title, const Getter& get) {
    std::vector<std::vector<double>> vals(3);
    std::size_t miss[3] = {0, 0, 0};
    for (int g = 0; g < 3; ++g)
      for (const auto* p : groups[g]) {
        if (auto v = get(*p)) vals[g].push_back(*v);
        else ++miss[g];
      }
    t.rows.push_back({title, {}, true});
    if (miss[2] > 0)
      t.rows.push_back({"N-Miss", {std::to_string(miss[0]), std::to_string(miss[1]), std::to_string(miss[2])}, false});
    DescriptiveTable::Row mean{"Mean (SD)", {}, false}, range{"Range", {}, false};
    for (int g = 0; g < 3; ++g) {
      const auto& v = vals[g];
      if (v.empty()) {
        mean.cells.push_back("NA");
        range.cells.push_back("NA");
        continue;
      }
      double m = 0;
      for (double x : v) m += x;
      m /= static_cast<double>(v.size());
      std::string sd;
      if (v.size() > 1) {
        double ss = 0;
        for (double x : v) ss += (x - m) * (x - m);
        sd = format_fixed(std::sqrt(ss / static_cast<double>(v.size() - 1)), 2);
      }
      mean.cells.push_back(format_fixed(m, 2) + " (" + sd + ")");
      auto [lo, hi] = std::minmax_element(v.begin(), v.end());
      range.cells.push_back(format_fixed(*lo, 2) + "--" + format_fixed(*hi, 2));
    }
    t.rows.push_back(mean);
    t.rows.push_back(range);
  };
  auto covariate = [&](auto field) {
    return [&cov, field](const ParticipantProfile& p) -> std::optional<double> {
      auto it = cov.find(p.participant_id);
      if (it == cov.end()) return std::nullopt;
      return field(*it->second);
    };
  };

  numeric("Age (years)", [](const ParticipantProfile& p) { return std::optional<double>(p.age); });
  t.rows.push_back({"Gender", {}, true});
  for (auto gender : {Gender::Female, Gender::Male}) {
    DescriptiveTable::Row r{gender == Gender::Female ? "Female" : "Male", {}, false};
    for (int g = 0; g < 3; ++g) {
      std::size_t k = 0;
      for (const auto* p : groups[g]) k += p->gender == gender;
      r.cells.push_back(format_count_percent(k, groups[g].size()));
    }
    t.rows.push_back(r);
  }
  numeric("Driving experience (years)",
          [](const ParticipantProfile& p) { return std::optional<double>(p.driving_experience); });
  numeric("HbA1c (%)", [](const ParticipantProfile& p) { return std::optional<double>(p.hba1c_pct); });
  numeric("Avg. sleep duration (hours)",
          covariate([](const phys::CovariateRow& r) { return r.sleep_h; }));
  numeric("Body mass index (kg/m^2)",
          covariate([](const phys::CovariateRow& r) { return std::optional<double>(r.bmi); }));
  const std::pair<const char*, double phys::GvMetrics::*> gv[] = {
      {"LBGI", &phys::GvMetrics::lbgi}, {"SD", &phys::GvMetrics::sd},
      {"HBGI", &phys::GvMetrics::hbgi}, {"CV", &phys::GvMetrics::cv}};
  for (auto [name, member] : gv)
    numeric(name, covariate([member](const phys::CovariateRow& r) {
              return r.gv ? std::optional<double>((*r.gv).*member) : std::nullopt;
            }));
  return t;
}

std::string render_markdown(const DescriptiveTable& t) {
  std::ostringstream out;
  out << "| |";
  for (const auto& g : t.groups) out << ' ' << g << " |";
  out << "\n|---|";
  for (std::size_t g = 0; g < t.groups.size(); ++g) out << "---|";
  out << '\n';
  for (const auto& r : t.rows) {
    if (r.heading) {
      out << "| **" << r.label << "** |";
      for (std::size_t g = 0; g < t.groups.size(); ++g) out << " |";
    } else {
      out << "| " << r.label << " |";
      for (const auto& c : r.cells) out << ' ' << c << " |";
    }
    out << '\n';
  }
  return out.str();
}

namespace {

std::string factor_short(const std::string& f) { return f == glmm::kParticipant ? "subj" : "intxn"; }

std::string or_cell(const glmm::WaldRow& w) {
  return format_fixed(w.odds_ratio, 2) + " (" + format_fixed(w.ci_low, 2) + "--" +
         format_fixed(w.ci_high, 2) + ")";
}

std::string p_cell(double p) {
  std::string s = format_p(p);
  return p < 0.05 ? "**" + s + "**" : s;
}

// Side-by-side OR (CI) / p table with the random-effects block.
void model_table(std::ostream& out, const ModelColumn& a, const ModelColumn& b,
                 const std::string& model_name) {
  out << "| Predictors | " << model_name << " (" << a.label << ") OR | p | " << model_name << " ("
      << b.label << ") OR | p |\n|---|---|---|---|---|\n";
  std::vector<std::string> terms;
  for (const auto& c : a.fit.columns) terms.push_back(c);
  for (const auto& c : b.fit.columns)
    if (std::find(terms.begin(), terms.end(), c) == terms.end()) terms.push_back(c);
  auto find = [](const ModelColumn& m, const std::string& term) -> const glmm::WaldRow* {
    for (const auto& w : m.wald)
      if (w.term == term) return &w;
    return nullptr;
  };
  for (const auto& term : terms) {
    out << "| " << predictor_label(term) << " |";
    for (const auto* m : {&a, &b}) {
      const auto* w = find(*m, term);
      if (w) out << ' ' << or_cell(*w) << " | " << p_cell(w->p) << " |";
      else out << " | |";
    }
    out << '\n';
  }
  out << "| **Random Effects** | | | | |\n";
  auto block = [&](const std::string& label, auto cell) {
    out << "| " << label << " | " << cell(a) << " | | " << cell(b) << " | |\n";
  };
  block("σ²", [](const ModelColumn& m) { return format_fixed(m.fit.sigma2_residual, 2); });
  block("τ00", [](const ModelColumn& m) {
    std::string s;
    // intersection first, as in the published tables
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t k = 0; k < m.fit.factor_names.size(); ++k) {
        bool intxn = m.fit.factor_names[k] == glmm::kIntersection;
        if (intxn != (pass == 0)) continue;
        if (!s.empty()) s += "; ";
        s += format_fixed(m.fit.tau00[k], 2) + " " + factor_short(m.fit.factor_names[k]);
      }
    return s;
  });
  block("ICC", [](const ModelColumn& m) { return format_fixed(m.fit.icc, 2); });
  block("N", [](const ModelColumn& m) {
    std::string s;
    for (std::size_t k = 0; k < m.fit.factor_names.size(); ++k) {
      if (!s.empty()) s += "; ";
      s += std::to_string(m.fit.n_groups[k]) + " " + factor_short(m.fit.factor_names[k]);
    }
    return s;
  });
  block("Observations", [](const ModelColumn& m) { return std::to_string(m.fit.n_obs); });
  block("Marginal R² / Conditional R²", [](const ModelColumn& m) {
    return format_fixed(m.fit.r2_marginal, 3) + " / " + format_fixed(m.fit.r2_conditional, 3);
  });
}

nlohmann::ordered_json wald_json(const std::vector<glmm::WaldRow>& rows) {
  auto a = nlohmann::ordered_json::array();
  for (const auto& w : rows)
    a.push_back({{"term", w.term}, {"beta", w.beta}, {"se", w.se}, {"z", w.z},
                 {"or", w.odds_ratio}, {"ci", {w.ci_low, w.ci_high}}, {"p", w.p}});
  return a;
}

nlohmann::ordered_json influence_json(const std::vector<glmm::InfluenceRecord>& recs) {
  auto a = nlohmann::ordered_json::array();
  for (const auto& r : recs) {
    nlohmann::ordered_json j{{"group_id", r.group_id}, {"factor", r.factor}, {"flagged", r.flagged},
                             {"available", r.available}};
    if (r.available) j["cooks_d"] = r.cooks_d;
    else j["message"] = r.message;
    a.push_back(j);
  }
  return a;
}

glmm::ModelSpec model_spec_of(const ProtocolRun& run, const glmm::GlmmFit& fit) {
  return {"unsafe", run.spec.fixed_terms, fit.factor_names};
}

}  // namespace

nlohmann::ordered_json fit_json(const glmm::GlmmFit& fit, const glmm::ModelSpec& spec) {
  nlohmann::ordered_json j;
  auto terms = nlohmann::ordered_json::array();
  for (const auto& t : spec.fixed_terms) terms.push_back(t.name());
  j["spec"] = {{"outcome", spec.outcome}, {"fixed_terms", terms}, {"random_factors", spec.random_factors}};
  std::vector<double> beta(fit.beta.data(), fit.beta.data() + fit.beta.size());
  std::vector<double> se(fit.se.data(), fit.se.data() + fit.se.size());
  auto wald = glmm::wald_summary(fit);
  std::vector<double> ors, ps;
  auto ci = nlohmann::ordered_json::array();
  for (const auto& w : wald) {
    ors.push_back(w.odds_ratio);
    ps.push_back(w.p);
    ci.push_back({w.ci_low, w.ci_high});
  }
  j["terms"] = fit.columns;
  j["beta"] = beta;
  j["se"] = se;
  j["or"] = ors;
  j["ci"] = ci;
  j["p"] = ps;
  nlohmann::ordered_json tau, groups;
  for (std::size_t k = 0; k < fit.factor_names.size(); ++k) {
    tau[fit.factor_names[k]] = fit.tau00[k];
    groups[fit.factor_names[k]] = fit.n_groups[k];
  }
  j["theta"] = fit.theta;
  j["tau00"] = tau.is_null() ? nlohmann::ordered_json::object() : tau;
  j["n_groups"] = groups.is_null() ? nlohmann::ordered_json::object() : groups;
  j["sigma2"] = fit.sigma2_residual;
  j["icc"] = fit.icc;
  j["loglik"] = fit.loglik;
  j["deviance"] = fit.deviance;
  j["n"] = fit.n_obs;
  j["r2m"] = fit.r2_marginal;
  j["r2c"] = fit.r2_conditional;
  j["convergence"] = {{"converged", fit.converged},
                      {"pirls_iterations", fit.n_pirls_iter},
                      {"outer_iterations", fit.n_outer_iter}};
  return j;
}

nlohmann::ordered_json report_json(const ProtocolRun& run) {
  nlohmann::ordered_json j;
  j["hypothesis"] = std::string(to_string(run.spec.name));
  j["sample"] = run.spec.sample == Sample::All ? "all" : "t1dm";
  j["n_events_in"] = run.n_events_in;
  j["n_events_sample"] = run.n_events_sample;
  j["participants"] = run.participants;
  j["excluded_participants"] = run.excluded_participants;
  if (run.gv_pair_r) j["gv_pair"] = {{"metrics", run.spec.gv_pair}, {"r", *run.gv_pair_r}};
  auto col = [&](const ModelColumn& m) {
    auto f = fit_json(m.fit, model_spec_of(run, m.fit));
    f["label"] = m.label;
    f["wald"] = wald_json(m.wald);
    return f;
  };
  j["step2"] = {{"with_intersection", col(run.with_intersection)},
                {"without_intersection", col(run.without_intersection)},
                {"lrt", {{"chi2", run.lrt.chi2}, {"df", run.lrt.df}, {"p", run.lrt.p}}},
                {"chosen", run.keep_intersection ? "with_intersection" : "without_intersection"},
                {"n_obs", run.n_obs_step2}};
  j["step3"] = {{"participant", influence_json(run.influence_participant)},
                {"intersection", influence_json(run.influence_intersection)},
                {"removed_participants", run.removed_participants},
                {"removed_intersections", run.removed_intersections}};
  j["step4"] = {{"fit", col(run.final_fit)}, {"n_obs", run.n_obs_step4}};
  return j;
}

namespace {

glmm::Term term_from_name(const std::string& name) {
  glmm::Term t;
  std::size_t start = 0;
  for (;;) {
    auto colon = name.find(':', start);
    t.covariates.push_back(name.substr(start, colon - start));
    if (colon == std::string::npos) break;
    start = colon + 1;
  }
  return t;
}

ModelColumn column_from_json(const nlohmann::ordered_json& j) {
  ModelColumn m;
  m.label = j.at("label").get<std::string>();
  auto& f = m.fit;
  f.columns = j.at("terms").get<std::vector<std::string>>();
  auto beta = j.at("beta").get<std::vector<double>>();
  auto se = j.at("se").get<std::vector<double>>();
  f.beta = Eigen::Map<const Eigen::VectorXd>(beta.data(), Eigen::Index(beta.size()));
  f.se = Eigen::Map<const Eigen::VectorXd>(se.data(), Eigen::Index(se.size()));
  f.factor_names = j.at("spec").at("random_factors").get<std::vector<std::string>>();
  f.theta = j.at("theta").get<std::vector<double>>();
  for (const auto& name : f.factor_names) {
    f.tau00.push_back(j.at("tau00").at(name).get<double>());
    f.n_groups.push_back(j.at("n_groups").at(name).get<std::size_t>());
  }
  f.sigma2_residual = j.at("sigma2").get<double>();
  f.icc = j.at("icc").get<double>();
  f.loglik = j.at("loglik").get<double>();
  f.deviance = j.at("deviance").get<double>();
  f.n_obs = j.at("n").get<std::size_t>();
  f.r2_marginal = j.at("r2m").get<double>();
  f.r2_conditional = j.at("r2c").get<double>();
  const auto& c = j.at("convergence");
  f.converged = c.at("converged").get<bool>();
  f.n_pirls_iter = c.at("pirls_iterations").get<int>();
  f.n_outer_iter = c.at("outer_iterations").get<int>();
  for (const auto& w : j.at("wald")) {
    glmm::WaldRow r;
    r.term = w.at("term").get<std::string>();
    r.beta = w.at("beta").get<double>();
    r.se = w.at("se").get<double>();
    r.z = w.at("z").get<double>();
    r.odds_ratio = w.at("or").get<double>();
    r.ci_low = w.at("ci").at(0).get<double>();
    r.ci_high = w.at("ci").at(1).get<double>();
    r.p = w.at("p").get<double>();
    m.wald.push_back(r);
  }
  return m;
}

std::vector<glmm::InfluenceRecord> influence_from_json(const nlohmann::ordered_json& a) {
  std::vector<glmm::InfluenceRecord> out;
  for (const auto& j : a) {
    glmm::InfluenceRecord r;
    r.group_id = j.at("group_id").get<std::string>();
    r.factor = j.at("factor").get<std::string>();
    r.flagged = j.at("flagged").get<bool>();
    r.available = j.at("available").get<bool>();
    if (r.available) r.cooks_d = j.at("cooks_d").get<double>();
    else r.message = j.at("message").get<std::string>();
    out.push_back(r);
  }
  return out;
}

}  // namespace

ProtocolRun protocol_run_from_json(const nlohmann::ordered_json& j) {
  try {
    ProtocolRun run;
    auto h = hypothesis_from_string(j.at("hypothesis").get<std::string>());
    if (!h) throw Error("unknown hypothesis '" + j.at("hypothesis").get<std::string>() + "'");
    run.spec = hypothesis_spec(*h);
    run.spec.sample = j.at("sample").get<std::string>() == "all" ? Sample::All : Sample::T1dmOnly;
    run.spec.fixed_terms.clear();
    for (const auto& t : j.at("step4").at("fit").at("spec").at("fixed_terms"))
      run.spec.fixed_terms.push_back(term_from_name(t.get<std::string>()));
    run.n_events_in = j.at("n_events_in").get<std::size_t>();
    run.n_events_sample = j.at("n_events_sample").get<std::size_t>();
    run.participants = j.at("participants").get<std::vector<std::string>>();
    run.excluded_participants = j.at("excluded_participants").get<std::map<std::string, std::string>>();
    if (j.contains("gv_pair")) {
      run.spec.gv_pair = j.at("gv_pair").at("metrics").get<std::vector<std::string>>();
      run.gv_pair_r = j.at("gv_pair").at("r").get<double>();
    }
    const auto& s2 = j.at("step2");
    run.with_intersection = column_from_json(s2.at("with_intersection"));
    run.without_intersection = column_from_json(s2.at("without_intersection"));
    run.lrt = {s2.at("lrt").at("chi2").get<double>(), s2.at("lrt").at("df").get<int>(),
               s2.at("lrt").at("p").get<double>()};
    run.keep_intersection = s2.at("chosen").get<std::string>() == "with_intersection";
    run.n_obs_step2 = s2.at("n_obs").get<std::size_t>();
    const auto& s3 = j.at("step3");
    run.influence_participant = influence_from_json(s3.at("participant"));
    run.influence_intersection = influence_from_json(s3.at("intersection"));
    run.removed_participants = s3.at("removed_participants").get<std::vector<std::string>>();
    run.removed_intersections = s3.at("removed_intersections").get<std::vector<std::string>>();
    run.final_fit = column_from_json(j.at("step4").at("fit"));
    run.n_obs_step4 = j.at("step4").at("n_obs").get<std::size_t>();
    return run;
  } catch (const nlohmann::ordered_json::exception& e) {
    throw Error(std::string("report.json: ") + e.what());
  }
}

std::string render_report_markdown(const ProtocolRun& run) {
  std::ostringstream out;
  const std::string name(display_name(run.spec.name));
  out << "# " << name << " model\n\n";
  out << "Sample: " << (run.spec.sample == Sample::All ? "all participants" : "T1DM participants only")
      << "; " << run.participants.size() << " participants, " << run.n_obs_step2
      << " observations entering the fit.\n";
  if (!run.excluded_participants.empty()) {
    out << "\nExcluded participants:\n";
    for (const auto& [id, why] : run.excluded_participants) out << "- " << id << ": " << why << '\n';
  }
  if (run.gv_pair_r)
    out << "\nGV pair " << predictor_label(run.spec.gv_pair[0]) << " + " << predictor_label(run.spec.gv_pair[1])
        << ": r = " << format_fixed(*run.gv_pair_r, 3) << '\n';

  out << "\n## Step 2: random effects structure\n\n";
  model_table(out, run.with_intersection, run.without_intersection, name);
  out << "\nLRT: χ(" << run.lrt.df << ") = " << format_fixed(run.lrt.chi2, 2) << ", p "
      << (run.lrt.p < 0.001 ? "< .001" : "= " + format_p(run.lrt.p))
      << ". Selected: " << (run.keep_intersection ? "with" : "without") << " by-intersection random intercept.\n";

  out << "\n## Step 3: influential groups\n\n";
  auto flagged = [&](const std::vector<glmm::InfluenceRecord>& recs, const char* what) {
    std::size_t unavailable = 0;
    for (const auto& r : recs) unavailable += !r.available;
    out << "- " << what << ": " << recs.size() << " groups checked";
    if (unavailable) out << ", " << unavailable << " refits unavailable";
    bool any = false;
    for (const auto& r : recs)
      if (r.flagged) {
        out << (any ? ", " : "; flagged ") << r.group_id << " (D = " << format_fixed(r.cooks_d, 3) << ")";
        any = true;
      }
    if (!any) out << "; none flagged";
    out << '\n';
  };
  flagged(run.influence_participant, "Participants");
  if (run.keep_intersection) flagged(run.influence_intersection, "Intersections");

  out << "\n## Step 4: outlier assessment\n\n";
  ModelColumn sel = run.selected();
  sel.label = "with outliers";
  model_table(out, sel, run.final_fit, name);
  out << "\nσ² is fixed to π²/3 for the logit link. τ00 is the random intercept variance, ICC the "
         "intraclass correlation and N the number of groups (subj = participant, intxn = intersection). "
         "The random-effects LRT uses the plain χ² reference distribution without a boundary correction. "
         "CIs are Wald intervals.\n";
  return out.str();
}

std::string render_control_summary(std::span<const ProtocolRun> runs) {
  std::ostringstream out;
  out << "| Model | Age OR | p-value | Gender: Male OR | p-value |\n|---|---|---|---|---|\n";
  for (const auto& run : runs) {
    out << "| " << display_name(run.spec.name) << " |";
    for (const char* term : {"age", "gender"}) {
      const glmm::WaldRow* w = nullptr;
      for (const auto& r : run.final_fit.wald)
        if (r.term == term) w = &r;
      if (w) out << ' ' << format_fixed(w->odds_ratio, 2) << " | " << p_cell(w->p) << " |";
      else out << " | |";
    }
    out << '\n';
  }
  return out.str();
}

std::string influence_csv(const ProtocolRun& run) {
  std::ostringstream out;
  std::vector<std::string> header{"group_id", "factor", "cooks_d", "flagged", "available", "message"};
  csv::write_row(out, header);
  for (const auto* recs : {&run.influence_participant, &run.influence_intersection})
    for (const auto& r : *recs) {
      std::vector<std::string> f{r.group_id, r.factor, r.available ? format_double(r.cooks_d) : "",
                                 r.flagged ? "true" : "false", r.available ? "true" : "false", r.message};
      csv::write_row(out, f);
    }
  return out.str();
}

}  // namespace stopsafe::proto
