#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"

#include "stopsafe/geolocate.hpp"
#include "stopsafe/simgen.hpp"
#include "stopsafe/stops.hpp"

using namespace stopsafe;

namespace {

const IntersectionSite kSite{"S", 41.0, -96.0, 5, SiteProvenance::Clustered};

stops::ApproachWindow window_of(std::vector<double> speeds) {
  stops::ApproachWindow w;
  w.event_id = "E";
  for (std::size_t i = 0; i < speeds.size(); ++i) w.samples.push_back({std::int64_t(i), 41, -96, speeds[i]});
  w.entry_speed_mps = speeds.front();
  w.min_speed_mps = *std::min_element(speeds.begin(), speeds.end());
  for (double v : speeds) w.dwell_below_stop_s += v <= 1.0;
  return w;
}

// Samples marching north at `north_m` metres from the site (1 s apart).
TripTrace trace_at(const std::vector<double>& north_m, const std::vector<double>& speed) {
  TripTrace t{"T1", "P01", {}};
  for (std::size_t i = 0; i < north_m.size(); ++i)
    t.samples.push_back({std::int64_t(1000 + i), kSite.lat + north_m[i] / 111194.93, kSite.lon, speed[i]});
  return t;
}

// Run-length count of in-zone stretches.
std::size_t zone_runs(const TripTrace& t, double radius) {
  std::size_t runs = 0;
  bool in = false;
  for (const auto& s : t.samples) {
    bool now = geo::haversine_m(s.lat, s.lon, kSite.lat, kSite.lon) <= radius;
    runs += now && !in;
    in = now;
  }
  return runs;
}

}  // namespace

TEST_CASE("classification rule cases") {
  stops::StopConfig cfg;
  CHECK(stops::classify_stop(window_of({13.4, 8, 3, 0, 0, 0, 5}), cfg) == StopClassification::FullStop);
  CHECK(stops::classify_stop(window_of({13.4, 13.4, 13.4, 13.4}), cfg) == StopClassification::NoStop);
  CHECK(stops::classify_stop(window_of({13.4, 9, 5, 3.5, 6, 12}), cfg) == StopClassification::RollingStop);
  // Exactly 2 s at or below 1 m/s is a full stop; 1 s is not.
  CHECK(stops::classify_stop(window_of({10, 1.0, 1.0, 8}), cfg) == StopClassification::FullStop);
  CHECK(stops::classify_stop(window_of({10, 1.0, 8}), cfg) == StopClassification::RollingStop);
  // min speed exactly half the entry speed is not below it.
  CHECK(stops::classify_stop(window_of({10, 5, 10}), cfg) == StopClassification::NoStop);
  // Arrived already stopped: dwell decides.
  CHECK(stops::classify_stop(window_of({0.5, 0.5, 0.5}), cfg) == StopClassification::FullStop);
  CHECK(stops::classify_stop(window_of({0.5, 4}), cfg) == StopClassification::RollingStop);
}

TEST_CASE("classification monotonicity") {
  stops::StopConfig cfg;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 500; ++i) {
    stops::ApproachWindow w;
    w.entry_speed_mps = 2 + 14 * u(rng);
    w.min_speed_mps = w.entry_speed_mps * u(rng);
    w.dwell_below_stop_s = std::floor(4 * u(rng));
    auto c = stops::classify_stop(w, cfg);
    auto more = w;
    more.dwell_below_stop_s += 1;
    if (c == StopClassification::FullStop) CHECK(stops::classify_stop(more, cfg) == StopClassification::FullStop);
    if (w.dwell_below_stop_s < 2) {
      auto slower = w;
      slower.min_speed_mps *= u(rng);
      if (c == StopClassification::RollingStop)
        CHECK(stops::classify_stop(slower, cfg) == StopClassification::RollingStop);
    }
  }
}

TEST_CASE("outcome collapse") {
  CHECK(stops::collapse_outcome(StopClassification::FullStop) == Outcome::Safe);
  CHECK(stops::collapse_outcome(StopClassification::RollingStop) == Outcome::Unsafe);
  CHECK(stops::collapse_outcome(StopClassification::NoStop) == Outcome::Unsafe);
  std::size_t safe = 0, unsafe = 0;
  for (auto [c, n] : {std::pair{StopClassification::FullStop, 347}, {StopClassification::RollingStop, 1036},
                      {StopClassification::NoStop, 277}})
    (stops::collapse_outcome(c) == Outcome::Safe ? safe : unsafe) += n;
  CHECK(safe == 347);
  CHECK(unsafe == 1313);
}

TEST_CASE("approach windows") {
  stops::StopConfig cfg;
  std::vector<IntersectionSite> sites{kSite};
  auto far = trace_at({200, 201, 202}, {10, 10, 10});
  CHECK(stops::extract_approaches(far, sites, cfg).empty());

  auto five = trace_at({100, 20, 10, 0, -10, -20, -100}, {10, 9, 5, 0, 0, 4, 10});
  auto w = stops::extract_approaches(five, sites, cfg);
  REQUIRE(w.size() == 1);
  CHECK(w[0].samples.size() == 5);
  CHECK(w[0].entry_speed_mps == 9);
  CHECK(w[0].min_speed_mps == 0);
  CHECK(w[0].dwell_below_stop_s == 2);
  CHECK(w[0].site_id == "S");
  CHECK(w[0].participant_id == "P01");
  CHECK(w[0].event_id == stops::event_id_for("T1", "S", 1001));
  CHECK(stops::classify_stop(w[0], cfg) == StopClassification::FullStop);

  auto twice = trace_at({50, 10, 50, 100, 50, 5, 50}, {10, 10, 10, 10, 10, 10, 10});
  auto w2 = stops::extract_approaches(twice, sites, cfg);
  CHECK(w2.size() == 2);
  CHECK(w2.size() == zone_runs(twice, cfg.zone_radius_m));

  auto single = trace_at({100, 0, 100}, {10, 0.5, 10});
  auto w3 = stops::extract_approaches(single, sites, cfg);
  REQUIRE(w3.size() == 1);
  CHECK(w3[0].dwell_below_stop_s == 1);
}

TEST_CASE("window count equals in-zone run length on random walks") {
  stops::StopConfig cfg;
  std::vector<IntersectionSite> sites{kSite};
  std::mt19937_64 rng(4);
  std::normal_distribution<double> step(0, 12);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> pos{80}, speed{5};
    for (int i = 1; i < 60; ++i) {
      pos.push_back(pos.back() + step(rng));
      speed.push_back(std::abs(step(rng)) / 3);
    }
    auto t = trace_at(pos, speed);
    CHECK(stops::extract_approaches(t, sites, cfg).size() == zone_runs(t, cfg.zone_radius_m));
  }
}

TEST_CASE("filters") {
  std::vector<StopEvent> events(4);
  std::vector<AnnotationRecord> ann(3);
  for (int i = 0; i < 4; ++i) events[i].event_id = "E" + std::to_string(i);
  for (int i = 0; i < 3; ++i) ann[i].event_id = events[i].event_id;
  ann[1].lead_vehicle = ContextStatus::PresentWithEffect;
  ann[2].crossing_vehicle = ContextStatus::PresentWithoutEffect;
  auto r = stops::apply_filters(events, ann);
  REQUIRE(r.kept.size() == 2);
  CHECK(r.kept[0].event_id == "E0");
  CHECK(r.kept[1].event_id == "E2");
  CHECK(r.kept[1].context->crossing_vehicle == ContextStatus::PresentWithoutEffect);
  CHECK(r.funnel.unannotated == 1);
  CHECK(r.funnel.discarded == 1);

  auto again = stops::apply_filters(r.kept, ann);
  CHECK(again.kept.size() == r.kept.size());
  for (std::size_t i = 0; i < r.kept.size(); ++i) CHECK(again.kept[i].event_id == r.kept[i].event_id);
}

TEST_CASE("filters agree with a row-wise predicate on simulated annotations") {
  sim::SimConfig c;
  c.seed = 5;
  c.n_t1dm = 3;
  c.n_control = 3;
  c.n_intersections = 10;
  c.events_per_participant = 30;
  c.confound_rate = 0.2;
  c.benign_context_rate = 0.2;
  c.bad_clip_rate = 0.1;
  c.other_driver_rate = 0.05;
  auto cohort = sim::simulate_cohort(c);
  auto sites = geo::derive_sites(cohort.trips, cohort.detections, geo::ClusterConfig{});
  std::vector<StopEvent> events;
  for (const auto& w : stops::extract_all(cohort.trips, sites, stops::StopConfig{}))
    events.push_back(stops::to_event(w, stops::StopConfig{}));
  auto r = stops::apply_filters(events, cohort.annotations);
  std::size_t expect = 0;
  for (const auto& e : events)
    for (const auto& a : cohort.annotations)
      if (a.event_id == e.event_id) {
        bool effect = a.lead_vehicle == ContextStatus::PresentWithEffect ||
                      a.crossing_vehicle == ContextStatus::PresentWithEffect ||
                      a.crossing_pedestrian == ContextStatus::PresentWithEffect;
        expect += a.clip_quality == ClipQuality::Good && a.is_participant_driving && !effect;
      }
  CHECK(r.kept.size() == expect);
  CHECK(r.funnel.analyzable == expect);
  std::size_t safe = 0, unsafe = 0;
  for (const auto& e : r.kept) (e.outcome == Outcome::Safe ? safe : unsafe)++;
  CHECK(safe + unsafe == r.funnel.analyzable);
  CHECK(r.funnel.total == r.funnel.bad + r.funnel.discarded + r.funnel.analyzable + r.funnel.unannotated);

  auto m = stops::context_margins(events, cohort.annotations);
  CHECK(m.safe + m.unsafe == r.funnel.good);
  CHECK(m.rolling + m.no_stop == m.unsafe);
}

TEST_CASE("extract_all serial equals parallel and events.csv round-trips") {
  sim::SimConfig c;
  c.seed = 8;
  c.n_t1dm = 3;
  c.n_control = 2;
  c.n_intersections = 12;
  c.events_per_participant = 20;
  auto cohort = sim::simulate_cohort(c);
  auto sites = geo::derive_sites(cohort.trips, cohort.detections, geo::ClusterConfig{});
  auto a = stops::extract_all(cohort.trips, sites, stops::StopConfig{}, Exec::Serial);
  auto b = stops::extract_all(cohort.trips, sites, stops::StopConfig{}, Exec::Parallel);
  REQUIRE(a.size() == b.size());
  std::vector<StopEvent> events;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].event_id == b[i].event_id);
    events.push_back(stops::to_event(a[i], stops::StopConfig{}));
  }
  std::stringstream io;
  stops::write_events_csv(io, events);
  const std::string text = io.str();
  auto back = stops::read_events_csv(io);
  std::ostringstream again;
  stops::write_events_csv(again, back);
  CHECK(again.str() == text);
}

TEST_CASE("classifier recovers simulated labels") {
  sim::SimConfig c;
  c.seed = 12;
  c.n_t1dm = 6;
  c.n_control = 4;
  c.n_intersections = 30;
  c.events_per_participant = 40;
  auto cohort = sim::simulate_cohort(c);
  auto sites = geo::derive_sites(cohort.trips, cohort.detections, geo::ClusterConfig{});
  std::map<std::string, StopClassification> got;
  for (const auto& w : stops::extract_all(cohort.trips, sites, stops::StopConfig{}))
    got[w.event_id] = stops::classify_stop(w, stops::StopConfig{});
  std::size_t hit = 0;
  for (const auto& e : cohort.truth.events) {
    auto it = got.find(e.event_id);
    hit += it != got.end() && it->second == e.classification;
  }
  CHECK(double(hit) / double(cohort.truth.events.size()) >= 0.99);
}
