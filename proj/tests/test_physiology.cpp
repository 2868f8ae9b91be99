#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"

#include "stopsafe/error.hpp"
#include "stopsafe/physiology.hpp"

using namespace stopsafe;

namespace {

// Evaluated independently at 30-digit precision.
constexpr double kPivot = 112.517384598043673;
constexpr double kRl70Half = 3.87760278530473169;
constexpr double kRh180Half = 3.86465575527127397;

std::vector<GlucoseReading> series(const std::vector<double>& bg, std::int64_t step = 300) {
  std::vector<GlucoseReading> out;
  for (std::size_t i = 0; i < bg.size(); ++i) out.push_back({"P01", std::int64_t(i) * step, bg[i]});
  return out;
}

}  // namespace

TEST_CASE("qc_cgm") {
  phys::QcConfig cfg;
  cfg.min_n = 3;
  auto clean = phys::qc_cgm(series({100, 120, 140}), cfg);
  CHECK(clean.readings.size() == 3);
  CHECK(clean.qc.n_raw == 3);
  CHECK(clean.qc.n_dropped_range == 0);
  CHECK(clean.qc.n_dropped_duplicate == 0);

  auto low = phys::qc_cgm(series({39, 40, 100, 400, 401}), cfg);
  CHECK(low.readings.size() == 3);
  CHECK(low.qc.n_dropped_range == 2);

  std::vector<GlucoseReading> raw;
  for (int i = 0; i < 490; ++i) {
    raw.push_back({"P01", i * 300, 80.0 + (i % 50)});
    if (i % 49 == 0) raw.push_back({"P01", i * 300, 999.0});  // duplicate timestamp, dropped
  }
  REQUIRE(raw.size() == 500);
  phys::QcConfig def;
  auto d = phys::qc_cgm(raw, def);
  CHECK(d.readings.size() == 490);
  CHECK(d.qc.n_dropped_duplicate == 10);
  for (const auto& r : d.readings) CHECK(r.bg_mgdl != 999.0);  // first kept

  cfg.min_n = 4;
  CHECK_THROWS_AS(phys::qc_cgm(series({100, 120, 140}), cfg), Error);
}

TEST_CASE("glucose risk scale pivot") {
  CHECK(phys::bg_risk_pivot() == doctest::Approx(kPivot).epsilon(1e-12));
  CHECK(std::abs(phys::bg_risk_scale(kPivot)) < 1e-9);
  CHECK(phys::bg_risk_scale(100) < 0);
  CHECK(phys::bg_risk_scale(130) > 0);
}

TEST_CASE("gv metrics on fixed series") {
  std::vector<double> c100(10, 100.0);
  auto m = phys::gv_metrics(c100);
  CHECK(m.sd == 0);
  CHECK(m.cv == 0);
  CHECK(m.hbgi == 0);
  CHECK(m.lbgi > 0);

  std::vector<double> piv(5, phys::bg_risk_pivot());
  auto p = phys::gv_metrics(piv);
  CHECK(p.lbgi < 1e-12);
  CHECK(p.hbgi < 1e-12);

  std::vector<double> two{70, 180};
  auto t = phys::gv_metrics(two);
  CHECK(std::abs(t.sd - 77.78) < 0.01);
  CHECK(std::abs(t.cv - 0.6222) < 1e-4);
  CHECK(std::abs(t.lbgi - kRl70Half) < 1e-9);
  CHECK(std::abs(t.hbgi - kRh180Half) < 1e-9);
  CHECK(t.n == 2);

  std::vector<double> one{100};
  CHECK_THROWS_AS(phys::gv_metrics(one), Error);
}

TEST_CASE("gv metric properties on random series") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(40, 400), scale(0.2, 5);
  std::uniform_int_distribution<int> len(2, 300);
  for (int rep = 0; rep < 1000; ++rep) {
    std::vector<double> bg(len(rng));
    for (auto& v : bg) v = u(rng);
    double c = scale(rng);
    std::vector<double> scaled = bg;
    for (auto& v : scaled) v *= c;
    auto a = phys::gv_metrics(bg), b = phys::gv_metrics(scaled);
    CHECK(b.cv == doctest::Approx(a.cv).epsilon(1e-12));
    CHECK(b.sd == doctest::Approx(c * a.sd).epsilon(1e-12));
    CHECK(a.lbgi >= 0);
    CHECK(a.hbgi >= 0);

    std::vector<double> above = bg, below = bg;
    for (auto& v : above) v = kPivot + 1 + std::fmod(v, 250);
    for (auto& v : below) v = 40 + std::fmod(v, kPivot - 41);
    CHECK(phys::gv_metrics(above).lbgi == 0);
    CHECK(phys::gv_metrics(below).hbgi == 0);
  }
}

TEST_CASE("sleep and bmi") {
  std::vector<SleepNight> eight{{"P", 0, 8}, {"P", 1, 8}, {"P", 2, 8}};
  auto s = phys::avg_sleep(eight);
  CHECK(s.avg_duration_h == 8);
  CHECK(s.n_nights == 3);
  CHECK_FALSE(s.abnormal);
  std::vector<SleepNight> six{{"P", 0, 6}, {"P", 1, 6}};
  CHECK(phys::avg_sleep(six).abnormal);
  CHECK_THROWS_AS(phys::avg_sleep({}), Error);

  ParticipantProfile p;
  p.weight_kg = 81.8;
  p.height_m = 1.70;
  CHECK(phys::bmi(p).bmi == doctest::Approx(28.30).epsilon(2e-4));
  CHECK_FALSE(phys::bmi(p).obese);
  p.weight_kg = 30;
  p.height_m = 1;
  CHECK(phys::bmi(p).obese);
  p.weight_kg = 20.77 * 1.6 * 1.6;
  p.height_m = 1.6;
  CHECK(phys::bmi(p).bmi == doctest::Approx(20.77));
  p.weight_kg = 49.78 * 1.6 * 1.6;
  CHECK(phys::bmi(p).bmi == doctest::Approx(49.78));
}

TEST_CASE("standardize") {
  std::map<std::string, double> v{{"a", 1}, {"b", 2}, {"c", 3}, {"d", 100}};
  std::vector<std::string> abc{"a", "b", "c"};
  auto z = phys::standardize("x", v, abc);
  CHECK(z.z.size() == 3);
  CHECK(z.z.at("a") == doctest::Approx(-1));
  CHECK(z.z.at("b") == 0);
  CHECK(z.z.at("c") == doctest::Approx(1));
  CHECK(z.mean == 2);
  CHECK(z.sd == 1);

  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(28, 6);
  std::map<std::string, double> w;
  std::vector<std::string> ids;
  for (int i = 0; i < 40; ++i) {
    ids.push_back("P" + std::to_string(i));
    w[ids.back()] = n(rng);
  }
  auto s = phys::standardize("bmi", w, ids);
  double mean = 0, ss = 0;
  for (auto& [k, x] : s.z) mean += x / 40;
  for (auto& [k, x] : s.z) ss += (x - mean) * (x - mean);
  CHECK(std::abs(mean) < 1e-12);
  CHECK(std::abs(std::sqrt(ss / 39) - 1) < 1e-12);

  std::map<std::string, double> flat{{"a", 2}, {"b", 2}};
  std::vector<std::string> ab{"a", "b"};
  CHECK_THROWS_AS(phys::standardize("x", flat, ab), Error);
}

TEST_CASE("pearson correlation matrix") {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> n(0, 1);
  std::vector<phys::GvMetrics> m(20);
  for (auto& g : m) {
    g.sd = 60 + 10 * n(rng);
    g.cv = 0.4 + 0.05 * n(rng);
    g.lbgi = 3 + n(rng);
    g.hbgi = -g.sd;  // exact negative of sd
  }
  auto c = phys::pearson_corr_matrix(m);
  for (int i = 0; i < 4; ++i) {
    CHECK(c(i, i) == doctest::Approx(1).epsilon(1e-15));
    for (int j = 0; j < 4; ++j) {
      CHECK(c(i, j) == c(j, i));
      CHECK(std::abs(c(i, j)) <= 1);
    }
  }
  CHECK(c(0, 3) == doctest::Approx(-1).epsilon(1e-14));

  // Direct covariance formula.
  auto col = [&](int k, const phys::GvMetrics& g) { return k == 0 ? g.sd : k == 1 ? g.cv : k == 2 ? g.lbgi : g.hbgi; };
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) {
      double ma = 0, mb = 0;
      for (const auto& g : m) ma += col(a, g) / 20, mb += col(b, g) / 20;
      double sab = 0, saa = 0, sbb = 0;
      for (const auto& g : m) {
        double x = col(a, g) - ma, y = col(b, g) - mb;
        sab += x * y;
        saa += x * x;
        sbb += y * y;
      }
      CHECK(std::abs(c(a, b) - sab / std::sqrt(saa * sbb)) < 1e-12);
    }

  std::vector<phys::GvMetrics> two(2);
  CHECK_THROWS_AS(phys::pearson_corr_matrix(two), Error);
}

TEST_CASE("compute_covariates marks missing data and round-trips through csv") {
  std::vector<ParticipantProfile> roster(3);
  for (int i = 0; i < 3; ++i) {
    roster[i].participant_id = "P0" + std::to_string(i + 1);
    roster[i].cohort = i < 2 ? Cohort::T1DM : Cohort::Control;
    roster[i].age = 30 + i;
    roster[i].height_m = 1.7;
    roster[i].weight_kg = 70 + i;
    roster[i].hba1c_pct = i < 2 ? 7.5 : 5.0;
  }
  std::vector<GlucoseReading> cgm;
  for (int k = 0; k < 300; ++k) cgm.push_back({"P01", k * 300, 100.0 + (k % 40)});
  for (int k = 0; k < 10; ++k) cgm.push_back({"P02", k * 300, 150.0});  // too few
  std::vector<SleepNight> sleep{{"P01", 0, 7.5}, {"P01", 1, 6.5}, {"P03", 0, 8}};
  auto r = phys::compute_covariates(roster, cgm, sleep, phys::QcConfig{});
  REQUIRE(r.rows.size() == 3);
  CHECK(r.rows[0].gv.has_value());
  CHECK(r.rows[0].sleep_h == 7.0);
  CHECK_FALSE(r.rows[1].gv.has_value());
  CHECK_FALSE(r.rows[1].sleep_h.has_value());
  CHECK_FALSE(r.rows[2].gv.has_value());
  REQUIRE(r.warnings.size() == 1);  // one line per participant; a control without CGM is normal
  CHECK(r.warnings[0].find("P02") != std::string::npos);
  CHECK(r.warnings[0].find("sleep") != std::string::npos);
  CHECK(r.rows[0].bmi == doctest::Approx(70 / (1.7 * 1.7)));

  auto serial = phys::compute_covariates(roster, cgm, sleep, phys::QcConfig{}, Exec::Serial);
  std::ostringstream a, b;
  phys::write_covariates_csv(a, r.rows);
  phys::write_covariates_csv(b, serial.rows);
  CHECK(a.str() == b.str());

  std::istringstream in(a.str());
  auto back = phys::read_covariates_csv(in);
  std::ostringstream c;
  phys::write_covariates_csv(c, back);
  CHECK(c.str() == a.str());
}
