#include "stopsafe/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "json.hpp"

#include "stopsafe/error.hpp"
#include "stopsafe/geolocate.hpp"
#include "stopsafe/physiology.hpp"
#include "stopsafe/stops.hpp"
#include "stopsafe/util.hpp"

namespace stopsafe::sim {

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
double normal(Rng& rng, double mean, double sd) { return std::normal_distribution<double>(mean, sd)(rng); }
bool bernoulli(Rng& rng, double p) { return uniform(rng, 0, 1) < p; }
double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kDecel = 2.0;        // m/s^2
constexpr double kStopOffset = -3.0;  // stop position before the site centre, m
constexpr double kSignLateral = 3.5;  // sign offset to the right of the path, m

// Position along a straight approach through the site; s < 0 before it.
struct Path {
  double lat, lon;
  bool north_south;
  std::pair<double, double> at(double s, double lateral) const {
    double north = north_south ? s : -lateral;
    double east = north_south ? lateral : s;
    return {lat + north / geo::kEarthRadiusM / kDeg,
            lon + east / (geo::kEarthRadiusM * std::cos(lat * kDeg)) / kDeg};
  }
};

// Piecewise constant-acceleration profile: cruise at v0, brake to vmin at
// the stop position, hold for `dwell` seconds, accelerate back to v0.
struct Profile {
  double L, v0, vmin, dwell;
  bool stops;
  double T1 = 0, T2 = 0, d1 = 0, s_dec = 0;

  Profile(double L_, double v0_, double vmin_, double dwell_, bool stops_)
      : L(L_), v0(v0_), vmin(vmin_), dwell(dwell_), stops(stops_) {
    if (stops) {
      d1 = (v0 * v0 - vmin * vmin) / (2 * kDecel);
      s_dec = kStopOffset - d1;
      T1 = (s_dec + L) / v0;
      T2 = (v0 - vmin) / kDecel;
    }
  }

  std::pair<double, double> at(double t) const {  // (s, v)
    if (!stops || t < T1) return {-L + v0 * t, v0};
    double tau = t - T1;
    if (tau < T2) return {s_dec + v0 * tau - 0.5 * kDecel * tau * tau, v0 - kDecel * tau};
    tau -= T2;
    if (tau < dwell) return {kStopOffset + vmin * tau, vmin};
    double s3 = kStopOffset + vmin * dwell;
    tau -= dwell;
    if (tau < T2) return {s3 + vmin * tau + 0.5 * kDecel * tau * tau, vmin + kDecel * tau};
    tau -= T2;
    return {s3 + d1 + v0 * tau, v0};
  }
};

struct Leg {
  std::vector<TelematicsSample> samples;
  std::vector<StopSignDetection> detections;
};

Leg render_leg(Rng& rng, const Path& path, const std::string& trip_id, StopClassification c,
               std::int64_t t0, double half_length) {
  double v0 = uniform(rng, 10, 16);
  Profile prof = [&] {
    switch (c) {
      case StopClassification::FullStop:
        return Profile(half_length, v0, 0.0, uniform(rng, 3, 6), true);
      case StopClassification::RollingStop:
        return Profile(half_length, v0, uniform(rng, 1.5, 3.0), 0.0, true);
      case StopClassification::NoStop:
        break;
    }
    return Profile(half_length, v0, v0, 0.0, false);
  }();
  Leg leg;
  std::vector<std::int64_t> approach_times;
  for (int k = 0;; ++k) {
    auto [s, v] = prof.at(k);
    if (s > half_length) break;
    auto [lat, lon] = path.at(s, normal(rng, 0, 0.3));
    leg.samples.push_back({t0 + k, lat, lon, std::max(0.0, v)});
    if (s >= -60 && s <= -20) approach_times.push_back(t0 + k);
  }
  std::shuffle(approach_times.begin(), approach_times.end(), rng);
  approach_times.resize(std::min<std::size_t>(3, approach_times.size()));
  std::sort(approach_times.begin(), approach_times.end());
  for (auto t : approach_times) {
    auto [lat, lon] = path.at(kStopOffset + normal(rng, 0, 2), kSignLateral + normal(rng, 0, 2));
    leg.detections.push_back({trip_id, t, lat, lon});
  }
  return leg;
}

std::string two_digit_id(char prefix, int k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%c%02d", prefix, k);
  return buf;
}

double linear_predictor(const std::map<std::string, double>& beta,
                        const std::map<std::string, double>& cov) {
  double eta = 0;
  for (const auto& [term, b] : beta) {
    if (term == "(Intercept)") {
      eta += b;
      continue;
    }
    double v = 1.0;
    std::size_t start = 0;
    while (true) {
      auto colon = term.find(':', start);
      auto name = term.substr(start, colon == std::string::npos ? std::string::npos : colon - start);
      auto it = cov.find(name);
      v *= it == cov.end() ? 0.0 : it->second;  // absent covariates contribute nothing
      if (colon == std::string::npos) break;
      start = colon + 1;
    }
    eta += b * v;
  }
  return eta;
}

}  // namespace

SimulatedCohort simulate_cohort(const SimConfig& cfg) {
  if (cfg.tau_subj < 0 || cfg.tau_intxn < 0) throw Error("simulate: variances must be >= 0");
  if (cfg.n_intersections < 1 || cfg.events_per_participant < 1 || cfg.geometry.legs_per_trip < 1)
    throw Error("simulate: sizes must be positive");
  if (cfg.geometry.site_spacing_m < 2 * 30 + 2 * 15 ||
      cfg.geometry.leg_half_length_m >= cfg.geometry.site_spacing_m - 60)
    throw Error("simulate: sites too close for the leg length");
  Rng rng(cfg.seed);
  SimulatedCohort out;
  auto& truth = out.truth;
  truth.beta = cfg.true_beta;
  truth.tau_subj = cfg.tau_subj;
  truth.tau_intxn = cfg.tau_intxn;

  // Sites on a square grid around the centre.
  const auto& geom = cfg.geometry;
  int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cfg.n_intersections))));
  for (int k = 0; k < cfg.n_intersections; ++k) {
    double north = (k / cols - cols / 2.0) * geom.site_spacing_m;
    double east = (k % cols - cols / 2.0) * geom.site_spacing_m;
    truth.sites.emplace_back(
        geom.center_lat + north / geo::kEarthRadiusM / kDeg,
        geom.center_lon + east / (geo::kEarthRadiusM * std::cos(geom.center_lat * kDeg)) / kDeg);
    truth.b_intxn.push_back(normal(rng, 0, std::sqrt(cfg.tau_intxn)));
  }

  // Roster.
  const int n = cfg.n_t1dm + cfg.n_control;
  for (int k = 0; k < n; ++k) {
    ParticipantProfile p;
    p.participant_id = two_digit_id('P', k + 1);
    p.cohort = k < cfg.n_t1dm ? Cohort::T1DM : Cohort::Control;
    p.age = static_cast<int>(std::clamp(std::round(normal(rng, 40, 12)), 18.0, 75.0));
    p.gender = bernoulli(rng, 0.5) ? Gender::Male : Gender::Female;
    p.driving_experience = std::round(std::max(1.0, p.age - 16 - uniform(rng, 0, 3)) * 10) / 10;
    p.height_m = std::round(std::clamp(normal(rng, 1.72, 0.09), 1.5, 2.0) * 100) / 100;
    double bmi = std::clamp(normal(rng, 28, 5), 18.0, 45.0);
    p.weight_kg = std::round(bmi * p.height_m * p.height_m * 10) / 10;
    p.hba1c_pct = std::round((p.cohort == Cohort::T1DM ? uniform(rng, 6.5, 10.0) : uniform(rng, 4.5, 5.6)) * 10) / 10;
    out.roster.push_back(p);
  }

  // CGM for T1DM participants only.
  const std::int64_t day0 = cfg.start_epoch / 86400;
  for (const auto& p : out.roster) {
    if (p.cohort != Cohort::T1DM) continue;
    double mean_p = normal(rng, cfg.cgm.mean, cfg.cgm.between_sd);
    double x = normal(rng, 0, cfg.cgm.noise_sd);
    double innov = cfg.cgm.noise_sd * std::sqrt(1 - cfg.cgm.ar1_rho * cfg.cgm.ar1_rho);
    int readings = cfg.cgm.days * 288;
    for (int k = 0; k < readings; ++k) {
      x = cfg.cgm.ar1_rho * x + normal(rng, 0, innov);
      double bg = std::round(std::clamp(mean_p + x, 20.0, 500.0));
      out.cgm.push_back({p.participant_id, cfg.start_epoch + 300LL * k, bg});
    }
  }

  // Sleep, with some participants lacking actigraphy.
  std::vector<int> no_sleep(static_cast<std::size_t>(n));
  std::iota(no_sleep.begin(), no_sleep.end(), 0);
  std::shuffle(no_sleep.begin(), no_sleep.end(), rng);
  no_sleep.resize(static_cast<std::size_t>(std::clamp(cfg.sleep.n_missing, 0, n)));
  for (int k = 0; k < n; ++k) {
    double mean_p = normal(rng, cfg.sleep.mean_h, cfg.sleep.sd_h);
    if (std::find(no_sleep.begin(), no_sleep.end(), k) != no_sleep.end()) continue;
    for (int night = 0; night < cfg.sleep.nights; ++night) {
      double h = std::round(std::clamp(mean_p + normal(rng, 0, 0.7), 0.0, 24.0) * 100) / 100;
      out.sleep.push_back({out.roster[k].participant_id, day0 + night, h});
    }
  }

  // Covariates as the pipeline will see them (z over participants with a value).
  phys::QcConfig qc;
  auto metrics = phys::compute_covariates(out.roster, out.cgm, out.sleep, qc, Exec::Serial);
  std::map<std::string, std::map<std::string, double>> raw;
  for (const auto& r : metrics.rows) {
    raw["age"][r.participant_id] = r.age;
    raw["bmi"][r.participant_id] = r.bmi;
    if (r.sleep_h) raw["sleep"][r.participant_id] = *r.sleep_h;
    if (r.gv) {
      raw["sd"][r.participant_id] = r.gv->sd;
      raw["cv"][r.participant_id] = r.gv->cv;
      raw["lbgi"][r.participant_id] = r.gv->lbgi;
      raw["hbgi"][r.participant_id] = r.gv->hbgi;
    }
  }
  std::map<std::string, std::map<std::string, double>> cov;  // participant -> name -> value
  for (const auto& [name, values] : raw) {
    std::vector<std::string> sample;
    for (const auto& kv : values) sample.push_back(kv.first);
    if (sample.size() < 2) continue;
    auto z = phys::standardize(name, values, sample);
    for (const auto& [pid, v] : z.z) cov[pid][name] = v;
  }
  for (const auto& p : out.roster) {
    cov[p.participant_id]["type"] = p.cohort == Cohort::T1DM ? 1.0 : 0.0;
    cov[p.participant_id]["gender"] = p.gender == Gender::Male ? 1.0 : 0.0;
  }

  // Events: outcome first, then a trajectory rendered to match.
  for (const auto& p : out.roster) {
    double b = normal(rng, 0, std::sqrt(cfg.tau_subj));
    truth.b_subj[p.participant_id] = b;
    double eta_fixed = linear_predictor(cfg.true_beta, cov[p.participant_id]);
    int n_trips = (cfg.events_per_participant + geom.legs_per_trip - 1) / geom.legs_per_trip;
    int remaining = cfg.events_per_participant;
    for (int trip = 0; trip < n_trips; ++trip) {
      TripTrace tr;
      tr.trip_id = p.participant_id + "-" + two_digit_id('T', trip + 1);
      tr.participant_id = p.participant_id;
      std::int64_t t = cfg.start_epoch + (trip + 1) * 86400LL + 8 * 3600 +
                       static_cast<std::int64_t>(&p - out.roster.data()) * 600;
      int legs = std::min(remaining, geom.legs_per_trip);
      remaining -= legs;
      for (int l = 0; l < legs; ++l) {
        int site = static_cast<int>(std::uniform_int_distribution<int>(0, cfg.n_intersections - 1)(rng));
        double eta = eta_fixed + b + truth.b_intxn[static_cast<std::size_t>(site)];
        StopClassification c = StopClassification::FullStop;
        if (bernoulli(rng, logistic(eta)))
          c = bernoulli(rng, cfg.unsafe_rolling_share) ? StopClassification::RollingStop
                                                       : StopClassification::NoStop;
        Path path{truth.sites[site].first, truth.sites[site].second, site % 2 == 0};
        Leg leg = render_leg(rng, path, tr.trip_id, c, t, geom.leg_half_length_m);
        truth.events.push_back({p.participant_id, tr.trip_id, site, leg.samples.front().t,
                                leg.samples.back().t, c, {}});
        t = leg.samples.back().t + 120;
        tr.samples.insert(tr.samples.end(), leg.samples.begin(), leg.samples.end());
        out.detections.insert(out.detections.end(), leg.detections.begin(), leg.detections.end());
      }
      out.trips.push_back(std::move(tr));
    }
  }

  // Annotate whatever the pipeline will extract with default settings.
  auto sites = geo::derive_sites(out.trips, out.detections, geo::ClusterConfig{}, Exec::Serial);
  auto windows = stops::extract_all(out.trips, sites, stops::StopConfig{}, Exec::Serial);
  std::map<std::string, std::vector<std::size_t>> legs_by_trip;
  for (std::size_t k = 0; k < truth.events.size(); ++k) legs_by_trip[truth.events[k].trip_id].push_back(k);
  for (const auto& w : windows) {
    for (std::size_t k : legs_by_trip[w.trip_id]) {
      auto& ev = truth.events[k];
      if (w.samples.front().t >= ev.t_begin && w.samples.front().t <= ev.t_end && ev.event_id.empty()) {
        ev.event_id = w.event_id;
        break;
      }
    }
    AnnotationRecord a;
    a.event_id = w.event_id;
    ContextStatus* factors[] = {&a.lead_vehicle, &a.crossing_vehicle, &a.crossing_pedestrian};
    for (auto* f : factors)
      if (bernoulli(rng, cfg.benign_context_rate)) *f = ContextStatus::PresentWithoutEffect;
    if (bernoulli(rng, cfg.confound_rate))
      *factors[std::min<std::size_t>(2, std::size_t(uniform(rng, 0, 3)))] = ContextStatus::PresentWithEffect;
    if (bernoulli(rng, cfg.bad_clip_rate)) a.clip_quality = ClipQuality::Bad;
    if (bernoulli(rng, cfg.other_driver_rate)) a.is_participant_driving = false;
    out.annotations.push_back(a);
  }
  return out;
}

void write_truth_json(std::ostream& out, const GroundTruth& truth) {
  nlohmann::ordered_json j;
  j["beta"] = truth.beta;
  j["tau_subj"] = truth.tau_subj;
  j["tau_intxn"] = truth.tau_intxn;
  j["b_subj"] = truth.b_subj;
  j["b_intxn"] = truth.b_intxn;
  auto& sites = j["sites"] = nlohmann::ordered_json::array();
  for (auto [lat, lon] : truth.sites) sites.push_back({{"lat", lat}, {"lon", lon}});
  auto& events = j["events"] = nlohmann::ordered_json::array();
  for (const auto& e : truth.events)
    events.push_back({{"participant_id", e.participant_id},
                      {"trip_id", e.trip_id},
                      {"site_index", e.site_index},
                      {"t_begin", e.t_begin},
                      {"t_end", e.t_end},
                      {"classification", std::string(to_string(e.classification))},
                      {"event_id", e.event_id}});
  out << j.dump(2) << '\n';
}

void write_cohort(const SimulatedCohort& c, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(fs::path(dir) / name, std::ios::binary);
    if (!f) throw Error("cannot write " + (fs::path(dir) / name).string());
    return f;
  };
  { auto f = open("roster.csv"); write_roster(f, c.roster); }
  { auto f = open("trips.csv"); write_trips(f, c.trips); }
  { auto f = open("detections.csv"); write_detections(f, c.detections); }
  { auto f = open("cgm.csv"); write_cgm(f, c.cgm); }
  { auto f = open("sleep.csv"); write_sleep(f, c.sleep); }
  { auto f = open("annotations.csv"); write_annotations(f, c.annotations); }
  { auto f = open("truth.json"); write_truth_json(f, c.truth); }
}

glmm::Design simulate_crossed(const CrossedConfig& cfg) {
  Rng rng(cfg.seed);
  std::vector<double> bs(static_cast<std::size_t>(cfg.n_subjects)), bi(static_cast<std::size_t>(cfg.n_items));
  for (auto& b : bs) b = normal(rng, 0, std::sqrt(cfg.tau_subj));
  for (auto& b : bi) b = normal(rng, 0, std::sqrt(cfg.tau_item));
  const int n = cfg.n_subjects * cfg.n_items;
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  glmm::Factor fs{"participant", {}, {}}, fi{"intersection", {}, {}};
  for (int s = 0; s < cfg.n_subjects; ++s) fs.levels.push_back(two_digit_id('S', s));
  for (int i = 0; i < cfg.n_items; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "I%03d", i);
    fi.levels.push_back(buf);
  }
  int r = 0;
  for (int s = 0; s < cfg.n_subjects; ++s)
    for (int i = 0; i < cfg.n_items; ++i, ++r) {
      double x = normal(rng, 0, 1);
      X(r, 0) = 1;
      X(r, 1) = x;
      double eta = cfg.beta(0) + cfg.beta(1) * x + bs[s] + bi[i];
      y(r) = bernoulli(rng, logistic(eta)) ? 1 : 0;
      fs.index.push_back(s);
      fi.index.push_back(i);
    }
  return glmm::make_design(std::move(X), std::move(y), {fs, fi}, {"(Intercept)", "x"});
}

glmm::Design simulate_grouped(std::uint64_t seed, int groups, int per_group,
                              const Eigen::Vector2d& beta, double theta) {
  Rng rng(seed);
  const int n = groups * per_group;
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  glmm::Factor f{"participant", {}, {}};
  for (int g = 0; g < groups; ++g) f.levels.push_back(two_digit_id('G', g));
  int r = 0;
  for (int g = 0; g < groups; ++g) {
    double b = normal(rng, 0, theta);
    for (int k = 0; k < per_group; ++k, ++r) {
      X(r, 0) = 1;
      X(r, 1) = normal(rng, 0, 1);
      y(r) = bernoulli(rng, logistic(beta(0) + beta(1) * X(r, 1) + b)) ? 1 : 0;
      f.index.push_back(g);
    }
  }
  return glmm::make_design(std::move(X), std::move(y), {f}, {"(Intercept)", "x"});
}

}  // namespace stopsafe::sim
