#include "stopsafe/geolocate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <unordered_map>

#include "json.hpp"

#include "stopsafe/error.hpp"
#include "stopsafe/util.hpp"

namespace stopsafe::geo {

namespace {
constexpr double kDeg = std::numbers::pi / 180.0;
}

double haversine_m(double lat1, double lon1, double lat2, double lon2) {
  double p1 = lat1 * kDeg, p2 = lat2 * kDeg;
  double dp = p2 - p1, dl = (lon2 - lon1) * kDeg;
  double a = std::sin(dp / 2) * std::sin(dp / 2) +
             std::cos(p1) * std::cos(p2) * std::sin(dl / 2) * std::sin(dl / 2);
  a = std::clamp(a, 0.0, 1.0);
  return 2 * kEarthRadiusM * std::asin(std::sqrt(a));
}

SpatialGrid::SpatialGrid(std::span<const GeoPoint> points, double radius_m)
    : points_(points), radius_m_(radius_m) {
  if (points.empty()) return;
  double max_abs_lat = 0, min_lon = 180, max_lon = -180;
  for (const auto& p : points) {
    max_abs_lat = std::max(max_abs_lat, std::abs(p.lat));
    min_lon = std::min(min_lon, p.lon);
    max_lon = std::max(max_lon, p.lon);
  }
  // |dlat| <= d/R always. For longitude, hav(d/R) >= cos(p1)cos(p2)hav(dlon)
  // gives sin(dlon/2) <= sin(d/2R)/cos(max_lat).
  double half = std::sin(radius_m / (2 * kEarthRadiusM));
  double c = std::cos(std::min(max_abs_lat + radius_m / kEarthRadiusM / kDeg, 90.0) * kDeg);
  if (c < 1e-3 || half / c >= 1.0 || max_lon - min_lon > 180.0) {
    linear_ = true;
    return;
  }
  dlat_ = radius_m / kEarthRadiusM / kDeg;
  dlon_ = 2 * std::asin(half / c) / kDeg;
  // cells must be at least as wide as the search radius
  dlat_ *= 1.000001;
  dlon_ *= 1.000001;
  sorted_.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i)
    sorted_.emplace_back(cell_of(points[i].lat, points[i].lon), i);
  std::sort(sorted_.begin(), sorted_.end());
}

SpatialGrid::Cell SpatialGrid::cell_of(double lat, double lon) const {
  return {static_cast<long long>(std::floor(lat / dlat_)),
          static_cast<long long>(std::floor(lon / dlon_))};
}

std::vector<std::size_t> SpatialGrid::within(double lat, double lon) const {
  std::vector<std::size_t> out;
  if (linear_) {
    for (std::size_t j = 0; j < points_.size(); ++j)
      if (haversine_m(lat, lon, points_[j].lat, points_[j].lon) <= radius_m_) out.push_back(j);
    return out;
  }
  if (sorted_.empty()) return out;
  Cell c = cell_of(lat, lon);
  for (long long di = -1; di <= 1; ++di)
    for (long long dj = -1; dj <= 1; ++dj) {
      Cell key{c.ilat + di, c.ilon + dj};
      auto lo = std::lower_bound(sorted_.begin(), sorted_.end(), key,
                                 [](const auto& e, const Cell& k) { return e.first < k; });
      for (auto it = lo; it != sorted_.end() && it->first == key; ++it) {
        const auto& p = points_[it->second];
        if (haversine_m(lat, lon, p.lat, p.lon) <= radius_m_) out.push_back(it->second);
      }
    }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> canonical_order(std::span<const GeoPoint> points) {
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto &pa = points[a], &pb = points[b];
    if (pa.lat != pb.lat) return pa.lat < pb.lat;
    if (pa.lon != pb.lon) return pa.lon < pb.lon;
    return static_cast<int>(pa.source) < static_cast<int>(pb.source);
  });
  return order;
}

Partition dbscan(std::span<const GeoPoint> points, const ClusterConfig& cfg, Exec exec) {
  if (!(cfg.eps_m > 0) || !std::isfinite(cfg.eps_m))
    throw Error("dbscan: eps_m must be finite and positive");
  if (cfg.min_pts < 1) throw Error("dbscan: min_pts must be >= 1");
  const std::size_t n = points.size();
  Partition part;
  part.labels.assign(n, Partition::kNoise);
  part.core.assign(n, false);
  if (n == 0) return part;

  // Work in canonical order so the result does not depend on input order.
  auto order = canonical_order(points);
  std::vector<GeoPoint> canon(n);
  for (std::size_t r = 0; r < n; ++r) canon[r] = points[order[r]];

  SpatialGrid grid(canon, cfg.eps_m);
  std::vector<std::vector<std::size_t>> nbrs(n);
  const long long nn = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 64) if (exec == Exec::Parallel)
  for (long long i = 0; i < nn; ++i) nbrs[i] = grid.within(canon[i].lat, canon[i].lon);

  std::vector<bool> core(n);
  for (std::size_t i = 0; i < n; ++i) core[i] = nbrs[i].size() >= cfg.min_pts;

  // Connected components over core points; component id = smallest rank.
  std::vector<long long> comp(n, -1);
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < n; ++i) {
    if (!core[i] || comp[i] >= 0) continue;
    comp[i] = static_cast<long long>(i);
    stack.assign(1, i);
    while (!stack.empty()) {
      std::size_t k = stack.back();
      stack.pop_back();
      for (std::size_t j : nbrs[k])
        if (core[j] && comp[j] < 0) {
          comp[j] = static_cast<long long>(i);
          stack.push_back(j);
        }
    }
  }
  // Border points: lowest-rank core neighbour (neighbour lists are sorted).
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i]) continue;
    for (std::size_t j : nbrs[i])
      if (core[j]) {
        comp[i] = comp[j];
        break;
      }
  }
  // Clusters numbered by smallest member rank. A cluster's root (its
  // lowest-rank core point) need not be its lowest-rank member, because a
  // border point can rank lower.
  std::unordered_map<long long, int> relabel;
  for (std::size_t r = 0; r < n; ++r) {
    if (comp[r] < 0) continue;
    auto [it, fresh] = relabel.try_emplace(comp[r], static_cast<int>(relabel.size()));
    part.labels[order[r]] = it->second;
    part.core[order[r]] = core[r];
  }
  part.n_clusters = static_cast<int>(relabel.size());
  return part;
}

std::string site_id_for(double lat, double lon) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.5f,%.5f", lat, lon);
  return "S" + hex16(fnv1a64(buf));
}

std::vector<IntersectionSite> derive_sites(std::span<const TripTrace> traces,
                                           std::span<const StopSignDetection> detections,
                                           const ClusterConfig& cfg, Exec exec) {
  std::vector<GeoPoint> pts;
  for (const auto& d : detections) pts.push_back({d.lat, d.lon, PointSource::Detection});
  for (const auto& t : traces)
    for (const auto& s : t.samples)
      if (s.speed_mps < cfg.low_speed_cutoff_mps)
        pts.push_back({s.lat, s.lon, PointSource::LowSpeedSample});
  if (pts.empty()) return {};

  auto part = dbscan(pts, cfg, exec);
  // Sum in canonical order so centroids do not depend on input order.
  auto order = canonical_order(pts);
  std::vector<double> slat(part.n_clusters, 0), slon(part.n_clusters, 0);
  std::vector<std::size_t> count(part.n_clusters, 0);
  for (std::size_t idx : order) {
    int c = part.labels[idx];
    if (c == Partition::kNoise) continue;
    slat[c] += pts[idx].lat;
    slon[c] += pts[idx].lon;
    ++count[c];
  }
  std::vector<IntersectionSite> sites;
  sites.reserve(part.n_clusters);
  for (int c = 0; c < part.n_clusters; ++c) {
    double lat = slat[c] / count[c], lon = slon[c] / count[c];
    sites.push_back({site_id_for(lat, lon), lat, lon, count[c], SiteProvenance::Clustered});
  }
  return sites;
}

std::vector<IntersectionSite> match_registry(std::span<const IntersectionSite> sites,
                                             std::span<const IntersectionSite> registry,
                                             double radius_m) {
  if (!(radius_m > 0)) throw Error("match_registry: radius_m must be positive");
  std::vector<IntersectionSite> out;
  std::unordered_map<std::string, std::size_t> pos;
  auto add = [&](IntersectionSite s) {
    auto [it, fresh] = pos.try_emplace(s.site_id, out.size());
    if (fresh) out.push_back(std::move(s));
    else out[it->second].support += s.support;
  };
  std::vector<std::size_t> matched_support(registry.size(), 0);
  std::vector<bool> matched(registry.size(), false);
  std::vector<IntersectionSite> unmatched;
  for (const auto& s : sites) {
    std::size_t best = registry.size();
    double best_d = radius_m;
    for (std::size_t r = 0; r < registry.size(); ++r) {
      double d = haversine_m(s.lat, s.lon, registry[r].lat, registry[r].lon);
      if (d <= best_d && (best == registry.size() || d < best_d)) {
        best = r;
        best_d = d;
      }
    }
    if (best == registry.size()) {
      unmatched.push_back(s);
    } else {
      matched[best] = true;
      matched_support[best] += s.support;
    }
  }
  for (std::size_t r = 0; r < registry.size(); ++r) {
    IntersectionSite reg = registry[r];
    reg.provenance = SiteProvenance::Registry;
    reg.support += matched_support[r];
    add(std::move(reg));
  }
  for (auto& s : unmatched) add(std::move(s));
  return out;
}

void write_geojson(std::ostream& out, std::span<const IntersectionSite> sites) {
  nlohmann::ordered_json fc;
  fc["type"] = "FeatureCollection";
  fc["features"] = nlohmann::ordered_json::array();
  for (const auto& s : sites) {
    nlohmann::ordered_json f;
    f["type"] = "Feature";
    f["geometry"] = {{"type", "Point"}, {"coordinates", {s.lon, s.lat}}};
    f["properties"] = {{"site_id", s.site_id},
                       {"support", s.support},
                       {"provenance", std::string(to_string(s.provenance))}};
    fc["features"].push_back(std::move(f));
  }
  out << fc.dump(2) << '\n';
}

std::vector<IntersectionSite> read_geojson(std::istream& in) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, "", std::string("GeoJSON: ") + e.what());
  }
  if (doc.value("type", "") != "FeatureCollection" || !doc.contains("features"))
    throw ParseError(0, "type", "GeoJSON: expected a FeatureCollection");
  std::vector<IntersectionSite> out;
  std::size_t row = 0;
  for (const auto& f : doc["features"]) {
    ++row;
    try {
      const auto& g = f.at("geometry");
      if (g.at("type") != "Point") throw ParseError(row, "geometry", "expected Point geometry");
      const auto& c = g.at("coordinates");
      IntersectionSite s;
      s.lon = c.at(0).get<double>();
      s.lat = c.at(1).get<double>();
      if (!(s.lat >= -90 && s.lat <= 90 && s.lon >= -180 && s.lon <= 180))
        throw ParseError(row, "coordinates", "coordinate out of range");
      const auto& p = f.at("properties");
      s.site_id = p.at("site_id").get<std::string>();
      s.support = p.value("support", std::size_t{0});
      s.provenance = p.value("provenance", std::string("Registry")) == "Clustered"
                         ? SiteProvenance::Clustered
                         : SiteProvenance::Registry;
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(row, "", std::string("GeoJSON feature: ") + e.what());
    }
  }
  return out;
}

}  // namespace stopsafe::geo
