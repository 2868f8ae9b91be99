#include "stopsafe/stops.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <unordered_map>

#include "stopsafe/csv.hpp"
#include "stopsafe/error.hpp"
#include "stopsafe/geolocate.hpp"
#include "stopsafe/util.hpp"

namespace stopsafe::stops {

std::string event_id_for(std::string_view trip_id, std::string_view site_id, std::int64_t t) {
  std::string key;
  key.append(trip_id).push_back('\x1f');
  key.append(site_id).push_back('\x1f');
  key.append(std::to_string(t));
  return "E" + hex16(fnv1a64(key));
}

namespace {

// Index of the nearest site within the zone, or npos. Ties go to the
// lower site index.
class SiteLocator {
 public:
  SiteLocator(std::span<const IntersectionSite> sites, double radius)
      : sites_(sites), radius_(radius) {
    pts_.reserve(sites.size());
    for (const auto& s : sites) pts_.push_back({s.lat, s.lon, geo::PointSource::Detection});
    grid_.emplace(pts_, radius);
  }

  std::size_t nearest(double lat, double lon) const {
    std::size_t best = npos;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j : grid_->within(lat, lon)) {
      double d = geo::haversine_m(lat, lon, sites_[j].lat, sites_[j].lon);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    return best;
  }

  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

 private:
  std::span<const IntersectionSite> sites_;
  double radius_;
  std::vector<geo::GeoPoint> pts_;
  std::optional<geo::SpatialGrid> grid_;
};

std::vector<ApproachWindow> extract_with(const TripTrace& trace,
                                         std::span<const IntersectionSite> sites,
                                         const SiteLocator& locator, const StopConfig& cfg) {
  std::vector<ApproachWindow> out;
  const auto& s = trace.samples;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t site = locator.nearest(s[i].lat, s[i].lon);
    if (site == SiteLocator::npos) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < s.size() && locator.nearest(s[j].lat, s[j].lon) == site) ++j;
    ApproachWindow w;
    w.trip_id = trace.trip_id;
    w.participant_id = trace.participant_id;
    w.site_id = sites[site].site_id;
    w.samples.assign(s.begin() + i, s.begin() + j);
    w.event_id = event_id_for(w.trip_id, w.site_id, w.samples.front().t);
    w.entry_speed_mps = w.samples.front().speed_mps;
    w.min_speed_mps = w.entry_speed_mps;
    for (const auto& x : w.samples) {
      w.min_speed_mps = std::min(w.min_speed_mps, x.speed_mps);
      if (x.speed_mps <= cfg.stop_speed_mps) w.dwell_below_stop_s += 1.0;  // 1 Hz
    }
    out.push_back(std::move(w));
    i = j;
  }
  return out;
}

}  // namespace

std::vector<ApproachWindow> extract_approaches(const TripTrace& trace,
                                               std::span<const IntersectionSite> sites,
                                               const StopConfig& cfg) {
  if (sites.empty()) return {};
  SiteLocator locator(sites, cfg.zone_radius_m);
  return extract_with(trace, sites, locator, cfg);
}

std::vector<ApproachWindow> extract_all(std::span<const TripTrace> traces,
                                        std::span<const IntersectionSite> sites,
                                        const StopConfig& cfg, Exec exec) {
  if (sites.empty()) return {};
  SiteLocator locator(sites, cfg.zone_radius_m);
  std::vector<std::vector<ApproachWindow>> per_trip(traces.size());
  const long long n = static_cast<long long>(traces.size());
#pragma omp parallel for schedule(dynamic) if (exec == Exec::Parallel)
  for (long long k = 0; k < n; ++k) per_trip[k] = extract_with(traces[k], sites, locator, cfg);

  std::vector<ApproachWindow> out;
  for (auto& v : per_trip)
    for (auto& w : v) out.push_back(std::move(w));
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.trip_id != b.trip_id) return a.trip_id < b.trip_id;
    return a.samples.front().t < b.samples.front().t;
  });
  return out;
}

StopClassification classify_stop(const ApproachWindow& w, const StopConfig& cfg) {
  if (w.dwell_below_stop_s >= cfg.full_stop_dwell_s) return StopClassification::FullStop;
  // Arrived already (nearly) stopped: decided by dwell alone.
  if (w.entry_speed_mps <= cfg.stop_speed_mps) return StopClassification::RollingStop;
  if (w.min_speed_mps < cfg.rolling_fraction * w.entry_speed_mps)
    return StopClassification::RollingStop;
  return StopClassification::NoStop;
}

Outcome collapse_outcome(StopClassification c) {
  return c == StopClassification::FullStop ? Outcome::Safe : Outcome::Unsafe;
}

StopEvent to_event(const ApproachWindow& w, const StopConfig& cfg) {
  StopEvent e;
  e.event_id = w.event_id;
  e.participant_id = w.participant_id;
  e.trip_id = w.trip_id;
  e.site_id = w.site_id;
  e.t_entry = w.samples.front().t;
  e.entry_speed_mps = w.entry_speed_mps;
  e.min_speed_mps = w.min_speed_mps;
  e.dwell_s = w.dwell_below_stop_s;
  e.classification = classify_stop(w, cfg);
  e.outcome = collapse_outcome(e.classification);
  return e;
}

FilterResult apply_filters(std::span<const StopEvent> events,
                           std::span<const AnnotationRecord> annotations) {
  FilterResult r;
  r.funnel = summarize_review_funnel(events, annotations);
  std::unordered_map<std::string_view, const AnnotationRecord*> by_id;
  for (const auto& a : annotations) by_id.emplace(a.event_id, &a);
  for (const auto& e : events) {
    auto it = by_id.find(e.event_id);
    if (it == by_id.end()) continue;
    const auto& a = *it->second;
    if (a.clip_quality == ClipQuality::Bad || is_confounded(a)) continue;
    StopEvent kept = e;
    kept.context = a;
    r.kept.push_back(std::move(kept));
  }
  return r;
}

ContextMargins context_margins(std::span<const StopEvent> events,
                               std::span<const AnnotationRecord> annotations) {
  std::unordered_map<std::string_view, const AnnotationRecord*> by_id;
  for (const auto& a : annotations) by_id.emplace(a.event_id, &a);
  ContextMargins m;
  auto bump = [](ContextMargins::Cell& c, bool safe) { safe ? ++c.safe : ++c.unsafe; };
  for (const auto& e : events) {
    auto it = by_id.find(e.event_id);
    if (it == by_id.end() || it->second->clip_quality == ClipQuality::Bad) continue;
    const auto& a = *it->second;
    bool safe = e.outcome == Outcome::Safe;
    safe ? ++m.safe : ++m.unsafe;
    if (e.classification == StopClassification::RollingStop) ++m.rolling;
    if (e.classification == StopClassification::NoStop) ++m.no_stop;
    bump(m.lead[static_cast<int>(a.lead_vehicle)], safe);
    bump(m.crossing_vehicle[static_cast<int>(a.crossing_vehicle)], safe);
    bump(m.crossing_pedestrian[static_cast<int>(a.crossing_pedestrian)], safe);
    bump(m.participant_driving[a.is_participant_driving ? 1 : 0], safe);
  }
  return m;
}

void write_events_csv(std::ostream& out, std::span<const StopEvent> events) {
  out << "event_id,participant_id,trip_id,site_id,t_entry,entry_speed_mps,min_speed_mps,"
         "dwell_s,classification,outcome\n";
  for (const auto& e : events) {
    std::array f{e.event_id,
                 e.participant_id,
                 e.trip_id,
                 e.site_id,
                 format_iso8601(e.t_entry),
                 format_double(e.entry_speed_mps),
                 format_double(e.min_speed_mps),
                 format_double(e.dwell_s),
                 std::string(to_string(e.classification)),
                 std::string(to_string(e.outcome))};
    csv::write_row(out, f);
  }
}

std::vector<StopEvent> read_events_csv(std::istream& in) {
  using namespace std::string_view_literals;
  static constexpr std::array cols{"event_id"sv,        "participant_id"sv, "trip_id"sv,
                                   "site_id"sv,         "t_entry"sv,        "entry_speed_mps"sv,
                                   "min_speed_mps"sv,   "dwell_s"sv,        "classification"sv,
                                   "outcome"sv};
  csv::Reader reader(in);
  std::vector<std::string> fields;
  if (!reader.next(fields)) throw ParseError(0, "", "events.csv: missing header row");
  csv::Header header(fields, cols, "events.csv");
  std::vector<StopEvent> out;
  std::size_t row = 0;
  while (reader.next(fields)) {
    if (fields.size() == 1 && fields[0].empty()) continue;
    csv::Row r(header, fields, ++row);
    StopEvent e;
    e.event_id = r.text("event_id");
    e.participant_id = r.text("participant_id");
    e.trip_id = r.text("trip_id");
    e.site_id = r.text("site_id");
    e.t_entry = r.timestamp("t_entry");
    e.entry_speed_mps = r.number("entry_speed_mps");
    e.min_speed_mps = r.number("min_speed_mps");
    e.dwell_s = r.number("dwell_s");
    auto c = classification_from_string(r.text("classification"));
    if (!c) r.fail("classification", "unknown classification '" + r.text("classification") + "'");
    e.classification = *c;
    auto o = outcome_from_string(r.text("outcome"));
    if (!o) r.fail("outcome", "unknown outcome '" + r.text("outcome") + "'");
    if (*o != collapse_outcome(*c)) r.fail("outcome", "outcome inconsistent with classification");
    e.outcome = *o;
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace stopsafe::stops
