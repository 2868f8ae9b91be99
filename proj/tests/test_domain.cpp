#include <fstream>
#include <sstream>

#include "doctest.h"

#include "stopsafe/domain.hpp"
#include "stopsafe/error.hpp"
#include "stopsafe/util.hpp"

using namespace stopsafe;

namespace {

const char* kRosterHeader = "participant_id,cohort,age,gender,driving_experience_y,height_m,weight_kg,hba1c_pct\n";

std::vector<ParticipantProfile> roster_of(const std::string& rows) {
  std::istringstream in(std::string(kRosterHeader) + rows);
  return parse_roster(in);
}

std::vector<ParticipantProfile> two_people() {
  return roster_of("P01,T1DM,31,F,15,1.70,81.8,7.8\nP02,Control,45,M,20,1.80,80,5.1\n");
}

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("roster row parses every field") {
  auto r = roster_of("P01,T1DM,31,F,15,1.70,81.8,7.8\n");
  REQUIRE(r.size() == 1);
  CHECK(r[0].participant_id == "P01");
  CHECK(r[0].cohort == Cohort::T1DM);
  CHECK(r[0].age == 31);
  CHECK(r[0].gender == Gender::Female);
  CHECK(r[0].driving_experience == 15);
  CHECK(r[0].height_m == 1.70);
  CHECK(r[0].weight_kg == 81.8);
  CHECK(r[0].hba1c_pct == 7.8);
}

TEST_CASE("roster with header only is empty") { CHECK(roster_of("").empty()); }

TEST_CASE("roster rejects bad rows") {
  CHECK(error_of([] { roster_of("P01,Control,40,F,10,1.6,60,6.0\n"); }).find("cohort/HbA1c contradiction") !=
        std::string::npos);
  CHECK(error_of([] { roster_of("P01,T1DM,40,F,10,1.6,60,6.4\n"); }).find("cohort/HbA1c") != std::string::npos);
  CHECK(error_of([] { roster_of("P01,Control,40,F,10,1.6,60,5.7\n"); }).find("cohort/HbA1c") != std::string::npos);
  CHECK(error_of([] { roster_of("P01,T1DM,15,F,1,1.6,60,7\n"); }).find("age") != std::string::npos);
  CHECK(error_of([] { roster_of("P01,T1DM,30,X,1,1.6,60,7\n"); }).find("gender") != std::string::npos);
  CHECK(error_of([] { roster_of("P01,T1DM,30,F,1,2.6,60,7\n"); }).find("height") != std::string::npos);
  CHECK(error_of([] { roster_of("P01,T1DM,30,F,1,1.6,60,7\nP01,T1DM,31,F,1,1.6,60,7\n"); })
            .find("duplicate") != std::string::npos);
}

TEST_CASE("parse errors carry row and field") {
  try {
    roster_of("P01,T1DM,31,F,15,1.70,81.8,7.8\nP02,T1DM,abc,F,15,1.70,81.8,7.8\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.row() == 2);
    CHECK(e.field() == "age");
  }
}

TEST_CASE("trips group by trip id and require increasing time") {
  auto roster = two_people();
  const std::string h = "participant_id,trip_id,timestamp,lat,lon,speed_mps\n";
  {
    std::istringstream in(h + "P01,A,2022-01-01T00:00:00Z,41,-96,1\nP01,A,2022-01-01T00:00:01Z,41,-96,2\n"
                              "P01,A,2022-01-01T00:00:02Z,41,-96,3\n");
    auto t = parse_trips(in, roster);
    REQUIRE(t.size() == 1);
    CHECK(t[0].samples.size() == 3);
    CHECK(t[0].samples[2].speed_mps == 3);
  }
  {
    std::istringstream in(h + "P01,A,2022-01-01T00:00:00Z,41,-96,1\nP02,B,2022-01-01T00:00:00Z,41,-96,1\n"
                              "P01,A,2022-01-01T00:00:01Z,41,-96,1\nP02,B,2022-01-01T00:00:05Z,41,-96,1\n");
    auto t = parse_trips(in, roster);
    REQUIRE(t.size() == 2);
    for (const auto& tr : t) CHECK(tr.samples.size() == 2);
  }
  std::istringstream dup(h + "P01,A,2022-01-01T00:00:00Z,41,-96,1\nP01,A,2022-01-01T00:00:00Z,41,-96,1\n");
  CHECK(error_of([&] { parse_trips(dup, roster); }).find("non-monotone timestamps") != std::string::npos);
  std::istringstream neg(h + "P01,A,2022-01-01T00:00:00Z,41,-96,-1\n");
  CHECK(error_of([&] { parse_trips(neg, roster); }).find("negative speed") != std::string::npos);
  std::istringstream who(h + "P09,A,2022-01-01T00:00:00Z,41,-96,1\n");
  CHECK(error_of([&] { parse_trips(who, roster); }).find("unknown participant") != std::string::npos);
  std::istringstream lat(h + "P01,A,2022-01-01T00:00:00Z,91,-96,1\n");
  CHECK(error_of([&] { parse_trips(lat, roster); }).find("latitude") != std::string::npos);
}

TEST_CASE("cgm, sleep and annotations") {
  auto roster = two_people();
  std::istringstream cgm("participant_id,timestamp,bg_mgdl\nP01,2017-10-01T00:00:00Z,112\n");
  auto g = parse_cgm(cgm, roster);
  REQUIRE(g.size() == 1);
  CHECK(g[0].bg_mgdl == 112);
  CHECK(g[0].t == *parse_iso8601("2017-10-01T00:00:00Z"));

  std::istringstream sleep("participant_id,date,duration_h\nP01,2022-01-01,25.0\n");
  CHECK(error_of([&] { parse_sleep(sleep, roster); }).find("duration out of [0,24]") != std::string::npos);

  const std::string ah =
      "event_id,lead_vehicle,crossing_vehicle,crossing_pedestrian,is_participant_driving,clip_quality\n";
  std::istringstream bad(ah + "E1,PresentMaybe,NonePresent,NonePresent,true,Good\n");
  auto msg = error_of([&] { parse_annotations(bad); });
  CHECK(msg.find("PresentMaybe") != std::string::npos);
  CHECK(msg.find("PresentWithoutEffect") != std::string::npos);  // lists the allowed values

  std::istringstream ok(ah + "E1,PresentWithEffect,NonePresent,PresentWithoutEffect,false,Bad\n");
  auto a = parse_annotations(ok);
  REQUIRE(a.size() == 1);
  CHECK(a[0].lead_vehicle == ContextStatus::PresentWithEffect);
  CHECK(a[0].crossing_pedestrian == ContextStatus::PresentWithoutEffect);
  CHECK_FALSE(a[0].is_participant_driving);
  CHECK(a[0].clip_quality == ClipQuality::Bad);
}

TEST_CASE("detections must fall inside their trip") {
  auto roster = two_people();
  std::istringstream tin("participant_id,trip_id,timestamp,lat,lon,speed_mps\n"
                         "P01,A,2022-01-01T00:00:00Z,41,-96,1\nP01,A,2022-01-01T00:00:10Z,41,-96,1\n");
  auto trips = parse_trips(tin, roster);
  std::istringstream inside("trip_id,timestamp,lat,lon\nA,2022-01-01T00:00:05Z,41,-96\n");
  CHECK(parse_detections(inside, trips).size() == 1);
  std::istringstream outside("trip_id,timestamp,lat,lon\nA,2022-01-01T00:00:11Z,41,-96\n");
  CHECK(error_of([&] { parse_detections(outside, trips); }).find("time span") != std::string::npos);
  std::istringstream unknown("trip_id,timestamp,lat,lon\nZ,2022-01-01T00:00:05Z,41,-96\n");
  CHECK(error_of([&] { parse_detections(unknown, trips); }).find("unknown trip") != std::string::npos);
}

TEST_CASE("unknown columns are ignored with a warning") {
  std::vector<std::string> warnings;
  auto prev = log::set_sink([&](const std::string& m) { warnings.push_back(m); });
  std::istringstream in("participant_id,cohort,age,gender,driving_experience_y,height_m,weight_kg,hba1c_pct,extra\n"
                        "P01,T1DM,31,F,15,1.70,81.8,7.8,zzz\n");
  auto r = parse_roster(in);
  log::set_sink(prev);
  CHECK(r.size() == 1);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("extra") != std::string::npos);
}

TEST_CASE("canonical files round-trip byte for byte") {
  const std::string dir = STOPSAFE_FIXTURE_DIR "/cohort/";
  auto roster_text = slurp(dir + "roster.csv");
  std::istringstream rin(roster_text);
  auto roster = parse_roster(rin);
  std::ostringstream rout;
  write_roster(rout, roster);
  CHECK(rout.str() == roster_text);

  auto trips_text = slurp(dir + "trips.csv");
  std::istringstream tin(trips_text);
  auto trips = parse_trips(tin, roster);
  std::ostringstream tout;
  write_trips(tout, trips);
  CHECK(tout.str() == trips_text);

  auto check = [&](const std::string& file, auto parse, auto write) {
    auto text = slurp(dir + file);
    std::istringstream in(text);
    auto recs = parse(in);
    std::ostringstream out;
    write(out, recs);
    CHECK_MESSAGE(out.str() == text, file);
  };
  check("detections.csv", [&](std::istream& in) { return parse_detections(in, trips); },
        [](std::ostream& o, const auto& v) { write_detections(o, v); });
  check("cgm.csv", [&](std::istream& in) { return parse_cgm(in, roster); },
        [](std::ostream& o, const auto& v) { write_cgm(o, v); });
  check("sleep.csv", [&](std::istream& in) { return parse_sleep(in, roster); },
        [](std::ostream& o, const auto& v) { write_sleep(o, v); });
  check("annotations.csv", [](std::istream& in) { return parse_annotations(in); },
        [](std::ostream& o, const auto& v) { write_annotations(o, v); });
}

TEST_CASE("review funnel arithmetic") {
  std::vector<StopEvent> events(10);
  std::vector<AnnotationRecord> ann;
  for (int i = 0; i < 10; ++i) {
    events[i].event_id = "E" + std::to_string(i);
    AnnotationRecord a;
    a.event_id = events[i].event_id;
    if (i < 2) a.clip_quality = ClipQuality::Bad;
    else if (i == 2) a.lead_vehicle = ContextStatus::PresentWithEffect;
    else if (i == 3) a.is_participant_driving = false;
    else if (i == 4) a.crossing_pedestrian = ContextStatus::PresentWithEffect;
    else if (i == 5) a.crossing_vehicle = ContextStatus::PresentWithoutEffect;  // kept
    ann.push_back(a);
  }
  auto f = summarize_review_funnel(events, ann);
  CHECK(f == FunnelCounts{10, 2, 8, 3, 5, 0});

  ann.pop_back();
  f = summarize_review_funnel(events, ann);
  CHECK(f.unannotated == 1);
  CHECK(f.total == f.bad + f.discarded + f.analyzable + f.unannotated);
  CHECK(f.good == f.discarded + f.analyzable);

  CHECK(summarize_review_funnel({}, {}) == FunnelCounts{});
}

TEST_CASE("time helpers") {
  CHECK(parse_iso8601("1970-01-01T00:00:00Z") == 0);
  CHECK(format_iso8601(1640995200) == "2022-01-01T00:00:00Z");
  CHECK(parse_date("2022-01-01") == 18993);
  CHECK(format_date(18993) == "2022-01-01");
  CHECK_FALSE(parse_iso8601("2022-13-01T00:00:00Z").has_value());
  CHECK(format_double(0.1) == "0.1");
  CHECK(*parse_double(format_double(1.0 / 3)) == 1.0 / 3);
}
