#pragma once

// Stop-intersection geolocation: density clustering of stop-sign detections
// and slow trajectory samples under the great-circle metric.

#include <cstddef>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include "stopsafe/domain.hpp"
#include "stopsafe/exec.hpp"

namespace stopsafe::geo {

inline constexpr double kEarthRadiusM = 6'371'000.0;

enum class PointSource { Detection, LowSpeedSample };

struct GeoPoint {
  double lat = 0;
  double lon = 0;
  PointSource source = PointSource::Detection;
};

struct ClusterConfig {
  double eps_m = 15.0;
  std::size_t min_pts = 3;
  double low_speed_cutoff_mps = 2.0;
};

/// DBSCAN result. `labels[i]` is the cluster of input point i, or kNoise.
/// Cluster ids are canonical: numbered by the smallest canonical rank among
/// their members, where canonical rank orders points by (lat, lon, source).
struct Partition {
  static constexpr int kNoise = -1;
  std::vector<int> labels;
  std::vector<bool> core;
  int n_clusters = 0;

  bool operator==(const Partition&) const = default;
};

double haversine_m(double lat1, double lon1, double lat2, double lon2);
inline double haversine_m(const GeoPoint& a, const GeoPoint& b) {
  return haversine_m(a.lat, a.lon, b.lat, b.lon);
}

/// Uniform lat/lon bucketing sized so that every pair within `radius_m`
/// lies in adjacent cells. Falls back to a linear scan near the poles or
/// across the antimeridian.
class SpatialGrid {
 public:
  SpatialGrid(std::span<const GeoPoint> points, double radius_m);
  /// Indices j with haversine(query, points[j]) <= radius_m, ascending.
  std::vector<std::size_t> within(double lat, double lon) const;

 private:
  struct Cell {
    long long ilat, ilon;
    auto operator<=>(const Cell&) const = default;
  };
  Cell cell_of(double lat, double lon) const;

  std::span<const GeoPoint> points_;
  double radius_m_;
  double dlat_ = 0, dlon_ = 0;
  bool linear_ = false;
  std::vector<std::pair<Cell, std::size_t>> sorted_;  // (cell, point) sorted by cell
};

/// Canonical rank order: point indices sorted by (lat, lon, source, index).
std::vector<std::size_t> canonical_order(std::span<const GeoPoint> points);

/// Density clustering. Core point: >= min_pts neighbours within eps_m, self
/// included. A border point joins the cluster of its core neighbour with
/// the lowest canonical rank. Neighbour queries run in parallel under
/// Exec::Parallel; labelling is a sequential pass, so both paths agree.
Partition dbscan(std::span<const GeoPoint> points, const ClusterConfig& cfg,
                 Exec exec = Exec::Parallel);

/// Site id derived from the centroid rounded to 5 decimals.
std::string site_id_for(double lat, double lon);

/// Detections plus samples slower than the cutoff, clustered; one site per
/// cluster at the arithmetic centroid of its members.
std::vector<IntersectionSite> derive_sites(std::span<const TripTrace> traces,
                                           std::span<const StopSignDetection> detections,
                                           const ClusterConfig& cfg, Exec exec = Exec::Parallel);

/// Clustered sites within radius_m of a registry entry adopt its id (nearest
/// entry wins); registry entries pass through; result is unique by site_id.
std::vector<IntersectionSite> match_registry(std::span<const IntersectionSite> sites,
                                             std::span<const IntersectionSite> registry,
                                             double radius_m = 25.0);

void write_geojson(std::ostream& out, std::span<const IntersectionSite> sites);
std::vector<IntersectionSite> read_geojson(std::istream& in);

}  // namespace stopsafe::geo
