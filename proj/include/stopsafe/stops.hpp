#pragma once

// Approach windows at stop intersections, rule-based stop classification
// and review-based filtering.

#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "stopsafe/domain.hpp"
#include "stopsafe/exec.hpp"

namespace stopsafe::stops {

struct StopConfig {
  double zone_radius_m = 30.0;
  double stop_speed_mps = 1.0;    // at or below counts as stopped
  double full_stop_dwell_s = 2.0;
  double rolling_fraction = 0.5;  // of entry speed
};

struct ApproachWindow {
  std::string event_id;
  std::string trip_id;
  std::string participant_id;
  std::string site_id;
  std::vector<TelematicsSample> samples;
  double entry_speed_mps = 0;
  double min_speed_mps = 0;
  double dwell_below_stop_s = 0;
};

std::string event_id_for(std::string_view trip_id, std::string_view site_id, std::int64_t t);

/// One window per maximal run of consecutive samples whose nearest site is
/// the same and within zone_radius_m.
std::vector<ApproachWindow> extract_approaches(const TripTrace& trace,
                                               std::span<const IntersectionSite> sites,
                                               const StopConfig& cfg);

/// All traces, merged in (trip_id, entry time) order. Trips are processed in
/// parallel under Exec::Parallel.
std::vector<ApproachWindow> extract_all(std::span<const TripTrace> traces,
                                        std::span<const IntersectionSite> sites,
                                        const StopConfig& cfg, Exec exec = Exec::Parallel);

StopClassification classify_stop(const ApproachWindow& w, const StopConfig& cfg);
Outcome collapse_outcome(StopClassification c);
StopEvent to_event(const ApproachWindow& w, const StopConfig& cfg);

struct FilterResult {
  std::vector<StopEvent> kept;  // annotated, good clip, unconfounded
  FunnelCounts funnel;
};

/// Joins annotations by event_id and drops bad clips, non-participant
/// drivers and traffic factors present with effect. Unannotated events are
/// excluded and counted separately.
FilterResult apply_filters(std::span<const StopEvent> events,
                           std::span<const AnnotationRecord> annotations);

/// Table-2 style margins over good clips: counts per context status split by
/// outcome.
struct ContextMargins {
  struct Cell {
    std::size_t safe = 0, unsafe = 0;
  };
  std::size_t safe = 0, unsafe = 0, rolling = 0, no_stop = 0;
  Cell lead[3], crossing_vehicle[3], crossing_pedestrian[3];
  Cell participant_driving[2];  // [0] = no, [1] = yes
};
ContextMargins context_margins(std::span<const StopEvent> events,
                               std::span<const AnnotationRecord> annotations);

void write_events_csv(std::ostream& out, std::span<const StopEvent> events);
std::vector<StopEvent> read_events_csv(std::istream& in);

}  // namespace stopsafe::stops
