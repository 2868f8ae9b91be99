#include "stopsafe/domain.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "stopsafe/csv.hpp"
#include "stopsafe/error.hpp"
#include "stopsafe/util.hpp"

namespace stopsafe {

std::string_view to_string(Cohort c) { return c == Cohort::T1DM ? "T1DM" : "Control"; }
std::string_view to_string(Gender g) { return g == Gender::Female ? "F" : "M"; }
std::string_view to_string(ContextStatus s) {
  switch (s) {
    case ContextStatus::NonePresent: return "NonePresent";
    case ContextStatus::PresentWithEffect: return "PresentWithEffect";
    case ContextStatus::PresentWithoutEffect: return "PresentWithoutEffect";
  }
  return {};
}
std::string_view to_string(ClipQuality q) { return q == ClipQuality::Good ? "Good" : "Bad"; }
std::string_view to_string(SiteProvenance p) {
  return p == SiteProvenance::Clustered ? "Clustered" : "Registry";
}
std::string_view to_string(StopClassification c) {
  switch (c) {
    case StopClassification::FullStop: return "FullStop";
    case StopClassification::RollingStop: return "RollingStop";
    case StopClassification::NoStop: return "NoStop";
  }
  return {};
}
std::string_view to_string(Outcome o) { return o == Outcome::Safe ? "Safe" : "Unsafe"; }

std::optional<StopClassification> classification_from_string(std::string_view s) {
  for (auto c : {StopClassification::FullStop, StopClassification::RollingStop,
                 StopClassification::NoStop})
    if (to_string(c) == s) return c;
  return std::nullopt;
}

std::optional<Outcome> outcome_from_string(std::string_view s) {
  if (s == "Safe") return Outcome::Safe;
  if (s == "Unsafe") return Outcome::Unsafe;
  return std::nullopt;
}

namespace {

using namespace std::string_view_literals;

bool blank(const std::vector<std::string>& f) { return f.size() == 1 && f[0].empty(); }

// Drives a header + row loop; `fn` receives each bound data row.
template <class Fn>
void for_each_row(std::istream& in, std::span<const std::string_view> required,
                  std::string_view file, Fn&& fn) {
  csv::Reader reader(in);
  std::vector<std::string> fields;
  if (!reader.next(fields)) throw ParseError(0, "", std::string(file) + ": missing header row");
  csv::Header header(fields, required, file);
  std::size_t row = 0;
  while (reader.next(fields)) {
    if (blank(fields)) continue;
    ++row;
    csv::Row r(header, fields, row);
    fn(r);
  }
}

void check_coord(const csv::Row& r, double lat, double lon) {
  if (!(lat >= -90 && lat <= 90)) r.fail("lat", "latitude out of [-90, 90]");
  if (!(lon >= -180 && lon <= 180)) r.fail("lon", "longitude out of [-180, 180]");
}

std::unordered_set<std::string> id_set(std::span<const ParticipantProfile> roster) {
  std::unordered_set<std::string> ids;
  for (const auto& p : roster) ids.insert(p.participant_id);
  return ids;
}

ContextStatus parse_status(const csv::Row& r, std::string_view column) {
  const auto& s = r.text(column);
  for (auto st : {ContextStatus::NonePresent, ContextStatus::PresentWithEffect,
                  ContextStatus::PresentWithoutEffect})
    if (to_string(st) == s) return st;
  r.fail(column, "invalid status '" + s +
                     "'; allowed values: NonePresent, PresentWithEffect, PresentWithoutEffect");
}

std::string num(double v) { return format_double(v); }

}  // namespace

std::vector<ParticipantProfile> parse_roster(std::istream& in) {
  static constexpr std::array cols{"participant_id"sv, "cohort"sv,   "age"sv,
                                   "gender"sv,         "driving_experience_y"sv,
                                   "height_m"sv,       "weight_kg"sv, "hba1c_pct"sv};
  std::vector<ParticipantProfile> out;
  std::unordered_set<std::string> seen;
  for_each_row(in, cols, "roster.csv", [&](const csv::Row& r) {
    ParticipantProfile p;
    p.participant_id = r.text("participant_id");
    if (p.participant_id.empty()) r.fail("participant_id", "empty participant id");
    if (!seen.insert(p.participant_id).second)
      r.fail("participant_id", "duplicate participant_id '" + p.participant_id + "'");
    const auto& cohort = r.text("cohort");
    if (cohort == "T1DM") p.cohort = Cohort::T1DM;
    else if (cohort == "Control") p.cohort = Cohort::Control;
    else r.fail("cohort", "cohort must be T1DM or Control, got '" + cohort + "'");
    auto age = r.integer("age");
    if (age < 16 || age > 120) r.fail("age", "age out of [16, 120]");
    p.age = static_cast<int>(age);
    const auto& g = r.text("gender");
    if (g == "F") p.gender = Gender::Female;
    else if (g == "M") p.gender = Gender::Male;
    else r.fail("gender", "gender must be F or M, got '" + g + "'");
    p.driving_experience = r.number("driving_experience_y");
    if (p.driving_experience < 0) r.fail("driving_experience_y", "negative driving experience");
    p.height_m = r.number("height_m");
    if (!(p.height_m > 0.5 && p.height_m < 2.5)) r.fail("height_m", "height out of (0.5, 2.5) m");
    p.weight_kg = r.number("weight_kg");
    if (!(p.weight_kg > 20 && p.weight_kg < 400)) r.fail("weight_kg", "weight out of (20, 400) kg");
    p.hba1c_pct = r.number("hba1c_pct");
    bool ok = p.cohort == Cohort::T1DM ? p.hba1c_pct >= 6.5 : p.hba1c_pct < 5.7;
    if (!ok) r.fail("hba1c_pct", "cohort/HbA1c contradiction");
    out.push_back(std::move(p));
  });
  return out;
}

std::vector<TripTrace> parse_trips(std::istream& in, std::span<const ParticipantProfile> roster) {
  static constexpr std::array cols{"participant_id"sv, "trip_id"sv, "timestamp"sv,
                                   "lat"sv,            "lon"sv,     "speed_mps"sv};
  auto known = id_set(roster);
  std::vector<TripTrace> out;
  std::unordered_map<std::string, std::size_t> index;
  for_each_row(in, cols, "trips.csv", [&](const csv::Row& r) {
    const auto& pid = r.text("participant_id");
    if (!known.count(pid)) r.fail("participant_id", "unknown participant '" + pid + "'");
    const auto& tid = r.text("trip_id");
    if (tid.empty()) r.fail("trip_id", "empty trip id");
    TelematicsSample s{r.timestamp("timestamp"), r.number("lat"), r.number("lon"),
                       r.number("speed_mps")};
    check_coord(r, s.lat, s.lon);
    if (s.speed_mps < 0) r.fail("speed_mps", "negative speed");
    auto [it, fresh] = index.try_emplace(tid, out.size());
    if (fresh) out.push_back(TripTrace{tid, pid, {}});
    auto& trace = out[it->second];
    if (trace.participant_id != pid)
      r.fail("participant_id", "trip '" + tid + "' spans several participants");
    if (!trace.samples.empty() && s.t <= trace.samples.back().t)
      r.fail("timestamp", "non-monotone timestamps in trip '" + tid + "'");
    trace.samples.push_back(s);
  });
  return out;
}

std::vector<StopSignDetection> parse_detections(std::istream& in,
                                                std::span<const TripTrace> trips) {
  static constexpr std::array cols{"trip_id"sv, "timestamp"sv, "lat"sv, "lon"sv};
  std::unordered_map<std::string, std::pair<std::int64_t, std::int64_t>> span;
  for (const auto& t : trips)
    if (!t.samples.empty()) span[t.trip_id] = {t.samples.front().t, t.samples.back().t};
  std::vector<StopSignDetection> out;
  for_each_row(in, cols, "detections.csv", [&](const csv::Row& r) {
    StopSignDetection d{r.text("trip_id"), r.timestamp("timestamp"), r.number("lat"),
                        r.number("lon")};
    check_coord(r, d.lat, d.lon);
    auto it = span.find(d.trip_id);
    if (it == span.end()) r.fail("trip_id", "unknown trip '" + d.trip_id + "'");
    if (d.t < it->second.first || d.t > it->second.second)
      r.fail("timestamp", "detection outside the trip's time span");
    out.push_back(std::move(d));
  });
  return out;
}

std::vector<GlucoseReading> parse_cgm(std::istream& in, std::span<const ParticipantProfile> roster) {
  static constexpr std::array cols{"participant_id"sv, "timestamp"sv, "bg_mgdl"sv};
  auto known = id_set(roster);
  std::unordered_map<std::string, std::int64_t> last;
  std::vector<GlucoseReading> out;
  for_each_row(in, cols, "cgm.csv", [&](const csv::Row& r) {
    GlucoseReading g{r.text("participant_id"), r.timestamp("timestamp"), r.number("bg_mgdl")};
    if (!known.count(g.participant_id))
      r.fail("participant_id", "unknown participant '" + g.participant_id + "'");
    if (g.bg_mgdl <= 0) r.fail("bg_mgdl", "glucose must be positive");
    auto [it, fresh] = last.try_emplace(g.participant_id, g.t);
    if (!fresh) {
      if (g.t < it->second) r.fail("timestamp", "non-monotone timestamps for participant '" +
                                                   g.participant_id + "'");
      it->second = g.t;
    }
    out.push_back(std::move(g));
  });
  return out;
}

std::vector<SleepNight> parse_sleep(std::istream& in, std::span<const ParticipantProfile> roster) {
  static constexpr std::array cols{"participant_id"sv, "date"sv, "duration_h"sv};
  auto known = id_set(roster);
  std::vector<SleepNight> out;
  for_each_row(in, cols, "sleep.csv", [&](const csv::Row& r) {
    SleepNight s;
    s.participant_id = r.text("participant_id");
    if (!known.count(s.participant_id))
      r.fail("participant_id", "unknown participant '" + s.participant_id + "'");
    auto d = parse_date(r.text("date"));
    if (!d) r.fail("date", "not a YYYY-MM-DD date: '" + r.text("date") + "'");
    s.date = *d;
    s.duration_h = r.number("duration_h");
    if (s.duration_h < 0 || s.duration_h > 24) r.fail("duration_h", "duration out of [0,24]");
    out.push_back(std::move(s));
  });
  return out;
}

std::vector<AnnotationRecord> parse_annotations(std::istream& in) {
  static constexpr std::array cols{"event_id"sv,           "lead_vehicle"sv,
                                   "crossing_vehicle"sv,   "crossing_pedestrian"sv,
                                   "is_participant_driving"sv, "clip_quality"sv};
  std::vector<AnnotationRecord> out;
  std::unordered_set<std::string> seen;
  for_each_row(in, cols, "annotations.csv", [&](const csv::Row& r) {
    AnnotationRecord a;
    a.event_id = r.text("event_id");
    if (a.event_id.empty()) r.fail("event_id", "empty event id");
    if (!seen.insert(a.event_id).second)
      r.fail("event_id", "duplicate event_id '" + a.event_id + "'");
    a.lead_vehicle = parse_status(r, "lead_vehicle");
    a.crossing_vehicle = parse_status(r, "crossing_vehicle");
    a.crossing_pedestrian = parse_status(r, "crossing_pedestrian");
    const auto& drv = r.text("is_participant_driving");
    if (drv == "true") a.is_participant_driving = true;
    else if (drv == "false") a.is_participant_driving = false;
    else r.fail("is_participant_driving", "expected true or false, got '" + drv + "'");
    const auto& q = r.text("clip_quality");
    if (q == "Good") a.clip_quality = ClipQuality::Good;
    else if (q == "Bad") a.clip_quality = ClipQuality::Bad;
    else r.fail("clip_quality", "expected Good or Bad, got '" + q + "'");
    out.push_back(std::move(a));
  });
  return out;
}

void write_roster(std::ostream& out, std::span<const ParticipantProfile> roster) {
  out << "participant_id,cohort,age,gender,driving_experience_y,height_m,weight_kg,hba1c_pct\n";
  for (const auto& p : roster) {
    std::array f{p.participant_id,       std::string(to_string(p.cohort)),
                 std::to_string(p.age),  std::string(to_string(p.gender)),
                 num(p.driving_experience), num(p.height_m),
                 num(p.weight_kg),       num(p.hba1c_pct)};
    csv::write_row(out, f);
  }
}

void write_trips(std::ostream& out, std::span<const TripTrace> trips) {
  out << "participant_id,trip_id,timestamp,lat,lon,speed_mps\n";
  for (const auto& t : trips)
    for (const auto& s : t.samples) {
      std::array f{t.participant_id, t.trip_id, format_iso8601(s.t), num(s.lat), num(s.lon),
                   num(s.speed_mps)};
      csv::write_row(out, f);
    }
}

void write_detections(std::ostream& out, std::span<const StopSignDetection> detections) {
  out << "trip_id,timestamp,lat,lon\n";
  for (const auto& d : detections) {
    std::array f{d.trip_id, format_iso8601(d.t), num(d.lat), num(d.lon)};
    csv::write_row(out, f);
  }
}

void write_cgm(std::ostream& out, std::span<const GlucoseReading> readings) {
  out << "participant_id,timestamp,bg_mgdl\n";
  for (const auto& g : readings) {
    std::array f{g.participant_id, format_iso8601(g.t), num(g.bg_mgdl)};
    csv::write_row(out, f);
  }
}

void write_sleep(std::ostream& out, std::span<const SleepNight> nights) {
  out << "participant_id,date,duration_h\n";
  for (const auto& s : nights) {
    std::array f{s.participant_id, format_date(s.date), num(s.duration_h)};
    csv::write_row(out, f);
  }
}

void write_annotations(std::ostream& out, std::span<const AnnotationRecord> annotations) {
  out << "event_id,lead_vehicle,crossing_vehicle,crossing_pedestrian,is_participant_driving,"
         "clip_quality\n";
  for (const auto& a : annotations) {
    std::array f{a.event_id,
                 std::string(to_string(a.lead_vehicle)),
                 std::string(to_string(a.crossing_vehicle)),
                 std::string(to_string(a.crossing_pedestrian)),
                 std::string(a.is_participant_driving ? "true" : "false"),
                 std::string(to_string(a.clip_quality))};
    csv::write_row(out, f);
  }
}

bool is_confounded(const AnnotationRecord& a) {
  return !a.is_participant_driving || a.lead_vehicle == ContextStatus::PresentWithEffect ||
         a.crossing_vehicle == ContextStatus::PresentWithEffect ||
         a.crossing_pedestrian == ContextStatus::PresentWithEffect;
}

FunnelCounts summarize_review_funnel(std::span<const StopEvent> events,
                                     std::span<const AnnotationRecord> annotations) {
  std::unordered_map<std::string_view, const AnnotationRecord*> by_id;
  for (const auto& a : annotations) by_id.emplace(a.event_id, &a);
  FunnelCounts f;
  for (const auto& e : events) {
    ++f.total;
    auto it = by_id.find(e.event_id);
    if (it == by_id.end()) {
      ++f.unannotated;
    } else if (it->second->clip_quality == ClipQuality::Bad) {
      ++f.bad;
    } else {
      ++f.good;
      if (is_confounded(*it->second)) ++f.discarded;
      else ++f.analyzable;
    }
  }
  return f;
}

}  // namespace stopsafe
