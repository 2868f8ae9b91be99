#pragma once

// Run configuration: one JSON file holding every setting that affects the
// numbers, so a run can be replayed from its artifact directory.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "stopsafe/geolocate.hpp"
#include "stopsafe/glmm.hpp"
#include "stopsafe/physiology.hpp"
#include "stopsafe/protocol.hpp"
#include "stopsafe/simgen.hpp"
#include "stopsafe/stops.hpp"

namespace stopsafe {

struct InputPaths {
  std::string roster = "roster.csv";
  std::string trips = "trips.csv";
  std::string detections = "detections.csv";
  std::string cgm = "cgm.csv";
  std::string sleep = "sleep.csv";
  std::string annotations = "annotations.csv";
  std::string registry;  // optional GeoJSON of known sites
};

struct RunConfig {
  InputPaths inputs;
  std::string output_dir = "out";
  geo::ClusterConfig cluster;
  double registry_radius_m = 25.0;
  stops::StopConfig stops;
  phys::QcConfig qc;
  proto::ProtocolOptions protocol;
  std::vector<proto::Hypothesis> hypotheses{std::begin(proto::kAllHypotheses),
                                            std::end(proto::kAllHypotheses)};
  std::uint64_t seed = 1;
  sim::SimConfig simulation;
};

nlohmann::ordered_json to_json(const RunConfig& c);
/// Missing keys keep their defaults; unknown keys are an error.
RunConfig run_config_from_json(const nlohmann::ordered_json& j);

RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& c, const std::string& path);

/// Input paths resolved against the directory of the config file.
InputPaths resolve_inputs(const InputPaths& in, const std::string& config_path);

}  // namespace stopsafe
