#pragma once

// Core record types shared by every stage, plus ingestion and canonical
// serialization of the six input files.

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace stopsafe {

enum class Cohort { T1DM, Control };
enum class Gender { Female, Male };

struct ParticipantProfile {
  std::string participant_id;
  Cohort cohort = Cohort::Control;
  int age = 0;
  Gender gender = Gender::Female;
  double driving_experience = 0;
  double height_m = 0;
  double weight_kg = 0;
  double hba1c_pct = 0;
};

struct TelematicsSample {
  std::int64_t t = 0;  // UTC epoch seconds
  double lat = 0;
  double lon = 0;
  double speed_mps = 0;
};

struct TripTrace {
  std::string trip_id;
  std::string participant_id;
  std::vector<TelematicsSample> samples;  // strictly increasing t
};

struct StopSignDetection {
  std::string trip_id;
  std::int64_t t = 0;
  double lat = 0;
  double lon = 0;
};

struct GlucoseReading {
  std::string participant_id;
  std::int64_t t = 0;
  double bg_mgdl = 0;
};

struct SleepNight {
  std::string participant_id;
  std::int64_t date = 0;  // days since epoch
  double duration_h = 0;
};

enum class ContextStatus { NonePresent, PresentWithEffect, PresentWithoutEffect };
enum class ClipQuality { Good, Bad };

struct AnnotationRecord {
  std::string event_id;
  ContextStatus lead_vehicle = ContextStatus::NonePresent;
  ContextStatus crossing_vehicle = ContextStatus::NonePresent;
  ContextStatus crossing_pedestrian = ContextStatus::NonePresent;
  bool is_participant_driving = true;
  ClipQuality clip_quality = ClipQuality::Good;
};

enum class SiteProvenance { Clustered, Registry };

struct IntersectionSite {
  std::string site_id;
  double lat = 0;
  double lon = 0;
  std::size_t support = 0;
  SiteProvenance provenance = SiteProvenance::Clustered;
};

enum class StopClassification { FullStop, RollingStop, NoStop };
enum class Outcome { Safe, Unsafe };

struct StopEvent {
  std::string event_id;
  std::string participant_id;
  std::string trip_id;
  std::string site_id;
  std::int64_t t_entry = 0;
  double entry_speed_mps = 0;
  double min_speed_mps = 0;
  double dwell_s = 0;
  StopClassification classification = StopClassification::NoStop;
  Outcome outcome = Outcome::Unsafe;
  std::optional<AnnotationRecord> context;
};

/// Review funnel: total = bad + discarded + analyzable + unannotated,
/// good = discarded + analyzable.
struct FunnelCounts {
  std::size_t total = 0;
  std::size_t bad = 0;
  std::size_t good = 0;
  std::size_t discarded = 0;
  std::size_t analyzable = 0;
  std::size_t unannotated = 0;

  bool operator==(const FunnelCounts&) const = default;
};

// Enum spellings used in files and reports.
std::string_view to_string(Cohort c);
std::string_view to_string(Gender g);
std::string_view to_string(ContextStatus s);
std::string_view to_string(ClipQuality q);
std::string_view to_string(SiteProvenance p);
std::string_view to_string(StopClassification c);
std::string_view to_string(Outcome o);
std::optional<StopClassification> classification_from_string(std::string_view s);
std::optional<Outcome> outcome_from_string(std::string_view s);

// Ingestion. Each parser either returns records satisfying every type
// invariant or throws ParseError naming the row and field.
std::vector<ParticipantProfile> parse_roster(std::istream& in);
std::vector<TripTrace> parse_trips(std::istream& in, std::span<const ParticipantProfile> roster);
std::vector<StopSignDetection> parse_detections(std::istream& in, std::span<const TripTrace> trips);
std::vector<GlucoseReading> parse_cgm(std::istream& in, std::span<const ParticipantProfile> roster);
std::vector<SleepNight> parse_sleep(std::istream& in, std::span<const ParticipantProfile> roster);
std::vector<AnnotationRecord> parse_annotations(std::istream& in);

// Canonical writers; parse(write(x)) == x and write(parse(f)) == f for
// canonical files.
void write_roster(std::ostream& out, std::span<const ParticipantProfile> roster);
void write_trips(std::ostream& out, std::span<const TripTrace> trips);
void write_detections(std::ostream& out, std::span<const StopSignDetection> detections);
void write_cgm(std::ostream& out, std::span<const GlucoseReading> readings);
void write_sleep(std::ostream& out, std::span<const SleepNight> nights);
void write_annotations(std::ostream& out, std::span<const AnnotationRecord> annotations);

/// Joins annotations to events by event_id and counts the review funnel.
FunnelCounts summarize_review_funnel(std::span<const StopEvent> events,
                                     std::span<const AnnotationRecord> annotations);

/// True when the annotation removes the event from analysis (non-participant
/// driver or any traffic factor present with effect).
bool is_confounded(const AnnotationRecord& a);

}  // namespace stopsafe
