#include <cmath>
#include <random>

#include "doctest.h"

#include "stopsafe/error.hpp"
#include "stopsafe/protocol.hpp"

using namespace stopsafe;

namespace {

// Twelve T1DM and six control participants, 24 events each at 10 sites.
// GV columns are permutations chosen to be nearly uncorrelated.
struct Cohort18 {
  std::vector<ParticipantProfile> roster;
  std::vector<phys::CovariateRow> cov;
  std::vector<StopEvent> events;
};

Cohort18 small_cohort() {
  Cohort18 c;
  const double perm[12] = {8, 3, 6, 2, 11, 12, 9, 1, 5, 7, 10, 4};
  const double risk[12] = {5, 7, 11, 10, 1, 6, 8, 2, 4, 3, 12, 9};
  std::mt19937_64 rng(42);
  std::normal_distribution<double> z(0, 1);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> site_b(10);
  for (auto& b : site_b) b = 0.6 * z(rng);
  for (int i = 0; i < 18; ++i) {
    const bool t1 = i < 12;
    ParticipantProfile p;
    p.participant_id = "P" + std::string(i < 9 ? "0" : "") + std::to_string(i + 1);
    p.cohort = t1 ? Cohort::T1DM : Cohort::Control;
    p.gender = i % 3 ? Gender::Female : Gender::Male;
    p.age = 25 + 3 * i;
    p.driving_experience = 5 + i;
    p.height_m = 1.6 + 0.02 * (i % 5);
    p.weight_kg = 55 + 3 * ((i * 7) % 11);
    p.hba1c_pct = t1 ? 7.0 + 0.1 * i : 5.0;
    c.roster.push_back(p);

    phys::CovariateRow r;
    r.participant_id = p.participant_id;
    r.cohort = p.cohort;
    r.gender = p.gender;
    r.age = p.age;
    r.driving_experience = p.driving_experience;
    r.hba1c = p.hba1c_pct;
    r.bmi = p.weight_kg / (p.height_m * p.height_m);
    if (i != 2) r.sleep_h = 6 + 0.25 * ((i * 5) % 9);
    if (t1) r.gv = phys::GvMetrics{40 + 3 * perm[i], 0.25 + 0.01 * perm[i], 0.5 * risk[i], 4.0 + risk[i], 288};
    c.cov.push_back(r);

    const double b = 0.7 * z(rng);
    for (int k = 0; k < 24; ++k) {
      StopEvent e;
      e.participant_id = p.participant_id;
      e.event_id = p.participant_id + "-E" + std::to_string(k);
      e.site_id = "S" + std::to_string((k + i) % 10);
      const double eta = 1.0 + b + site_b[(k + i) % 10];
      e.outcome = u(rng) < 1 / (1 + std::exp(-eta)) ? Outcome::Unsafe : Outcome::Safe;
      c.events.push_back(e);
    }
  }
  return c;
}

}  // namespace

TEST_CASE("formatting helpers") {
  CHECK(proto::format_p(0.0004) == "<.001");
  CHECK(proto::format_p(0.001) == "0.001");
  CHECK(proto::format_p(0.0123) == "0.012");
  CHECK(proto::format_p(1) == "1.000");
  CHECK(proto::format_count_percent(11, 18) == "11 (61.1%)");
  CHECK(proto::format_count_percent(0, 0) == "0 (0.0%)");
  CHECK(proto::predictor_label("gender") == "Gender: Male");
  CHECK(proto::predictor_label("type:bmi") == "Participant type: T1DM x BMI");
  CHECK(proto::predictor_label("lbgi") == "LBGI");
}

TEST_CASE("hypothesis specs") {
  auto names = [](const proto::HypothesisSpec& s) {
    std::vector<std::string> v;
    for (const auto& t : s.fixed_terms) v.push_back(t.name());
    return v;
  };
  CHECK(names(proto::hypothesis_spec(proto::Hypothesis::Sleep)) ==
        std::vector<std::string>{"age", "gender", "type", "sleep", "type:sleep"});
  CHECK(names(proto::hypothesis_spec(proto::Hypothesis::Obesity)) ==
        std::vector<std::string>{"age", "gender", "type", "bmi", "type:bmi"});
  auto g = proto::hypothesis_spec(proto::Hypothesis::GlucoseLbgiSd);
  CHECK(g.sample == proto::Sample::T1dmOnly);
  CHECK(g.gv_pair == std::vector<std::string>{"lbgi", "sd"});
  CHECK(proto::hypothesis_spec(proto::Hypothesis::GlucoseHbgiCv).gv_pair ==
        std::vector<std::string>{"hbgi", "cv"});
  for (auto h : proto::kAllHypotheses) CHECK(proto::hypothesis_from_string(proto::to_string(h)) == h);
  CHECK_FALSE(proto::hypothesis_from_string("diet").has_value());
}

TEST_CASE("descriptive table") {
  auto c = small_cohort();
  auto t = proto::describe_cohort(c.roster, c.cov);
  CHECK(t.groups == std::vector<std::string>{"T1DM (N = 12)", "Control (N = 6)", "Total (N = 18)"});
  bool saw_sleep_miss = false;
  for (std::size_t i = 0; i + 1 < t.rows.size(); ++i)
    if (t.rows[i].label == "Avg. sleep duration (hours)") {
      CHECK(t.rows[i + 1].label == "N-Miss");
      CHECK(t.rows[i + 1].cells == std::vector<std::string>{"1", "0", "1"});
      saw_sleep_miss = true;
    }
  CHECK(saw_sleep_miss);
  auto md = proto::render_markdown(t);
  CHECK(md.find("| **Gender** |") != std::string::npos);
  CHECK(md.find("Female | 8 (66.7%) | 4 (66.7%) | 12 (66.7%)") != std::string::npos);
}

TEST_CASE("sleep protocol excludes participants missing the covariate") {
  auto c = small_cohort();
  auto run = proto::run_protocol(proto::hypothesis_spec(proto::Hypothesis::Sleep), c.events, c.cov);
  CHECK(run.n_events_in == c.events.size());
  REQUIRE(run.excluded_participants.count("P03"));
  CHECK(run.excluded_participants.at("P03").find("sleep") != std::string::npos);
  CHECK(run.participants.size() == 17);
  CHECK(run.n_obs_step2 == 17 * 24);
  CHECK(run.with_intersection.fit.n_obs == run.n_obs_step2);
  CHECK(run.with_intersection.fit.factor_names.size() == 2);
  CHECK(run.without_intersection.fit.factor_names.size() == 1);
  CHECK(run.keep_intersection == (run.lrt.p < 0.05));
  CHECK(run.influence_participant.size() == 17);
  CHECK(run.influence_intersection.size() == (run.keep_intersection ? 10u : 0u));

  // The flagged groups are exactly the removed ones.
  std::vector<std::string> flagged;
  for (const auto& r : run.influence_participant)
    if (r.flagged) flagged.push_back(r.group_id);
  CHECK(flagged == run.removed_participants);

  auto json = proto::report_json(run);
  auto back = proto::protocol_run_from_json(json);
  CHECK(proto::report_json(back).dump() == json.dump());
  CHECK(proto::render_report_markdown(back) == proto::render_report_markdown(run));
  auto md = proto::render_report_markdown(run);
  for (const char* s : {"σ²", "τ00", "ICC", "| N |", "Observations", "Marginal R² / Conditional R²", "LRT"})
    CHECK_MESSAGE(md.find(s) != std::string::npos, s);
}

TEST_CASE("glucose protocol uses the T1DM sample only") {
  auto c = small_cohort();
  proto::ProtocolOptions opts;
  auto run = proto::run_protocol(proto::hypothesis_spec(proto::Hypothesis::GlucoseLbgiSd), c.events, c.cov, opts);
  CHECK(run.n_events_sample == 12 * 24);
  CHECK(run.participants.size() == 12);
  for (const auto& id : run.participants) CHECK(id <= "P12");
  REQUIRE(run.gv_pair_r.has_value());
  CHECK(std::abs(*run.gv_pair_r) < 0.1);

  // A collinear pair is rejected by the correlation screen.
  for (auto& r : c.cov)
    if (r.gv) r.gv->sd = 40 + 3 * r.gv->lbgi;
  CHECK_THROWS_WITH_AS(
      proto::run_protocol(proto::hypothesis_spec(proto::Hypothesis::GlucoseLbgiSd), c.events, c.cov, opts),
      doctest::Contains("GV pair"), Error);
}

TEST_CASE("report json rejects malformed documents") {
  CHECK_THROWS_AS(proto::protocol_run_from_json(nlohmann::ordered_json::object()), Error);
}
