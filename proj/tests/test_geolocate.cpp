#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "doctest.h"

#include "stopsafe/geolocate.hpp"
#include "stopsafe/oracles.hpp"
#include "stopsafe/simgen.hpp"
#include "stopsafe/verify.hpp"

using namespace stopsafe;
using geo::GeoPoint;

namespace {

// Same partition up to relabelling, with points matched through `perm`
// (b[k] is a[perm[k]]).
bool same_partition(const geo::Partition& a, const geo::Partition& b, const std::vector<std::size_t>& perm) {
  if (a.n_clusters != b.n_clusters) return false;
  std::vector<int> map(a.n_clusters, -1);
  for (std::size_t k = 0; k < perm.size(); ++k) {
    int la = a.labels[perm[k]], lb = b.labels[k];
    if ((la < 0) != (lb < 0)) return false;
    if (la < 0) continue;
    if (map[la] == -1) map[la] = lb;
    else if (map[la] != lb) return false;
  }
  return true;
}

GeoPoint offset(double lat, double lon, double east_m, double north_m) {
  const double m = 1.0 / 111194.93;
  return {lat + north_m * m, lon + east_m * m / std::cos(lat * M_PI / 180), geo::PointSource::Detection};
}

}  // namespace

TEST_CASE("haversine") {
  CHECK(geo::haversine_m(41, -96, 41, -96) == 0);
  CHECK(geo::haversine_m(0, 0, 1, 0) == doctest::Approx(M_PI / 180 * 6.371e6).epsilon(1e-9));
  CHECK(std::abs(geo::haversine_m(0, 0, 1, 0) - 111195) < 1);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> lat(-89, 89), lon(-180, 180);
  for (int i = 0; i < 100; ++i) {
    double a = lat(rng), b = lon(rng), c = lat(rng), d = lon(rng);
    CHECK(geo::haversine_m(a, b, c, d) == geo::haversine_m(c, d, a, b));
    CHECK(geo::haversine_m(a, b, c, d) >= 0);
  }
}

TEST_CASE("dbscan rule cases") {
  geo::ClusterConfig cfg;
  std::vector<GeoPoint> pts;
  for (int i = 0; i < 5; ++i) pts.push_back({41.0, -96.0, geo::PointSource::Detection});
  for (int i = 0; i < 5; ++i) pts.push_back({41.09, -96.0, geo::PointSource::Detection});  // 10 km north
  auto p = geo::dbscan(pts, cfg);
  CHECK(p.n_clusters == 2);
  CHECK(std::count(p.labels.begin(), p.labels.end(), geo::Partition::kNoise) == 0);
  CHECK(p.labels[0] == 0);
  CHECK(p.labels[9] == 1);

  geo::ClusterConfig two;
  two.min_pts = 2;
  std::vector<GeoPoint> one{{41, -96, geo::PointSource::Detection}};
  auto q = geo::dbscan(one, two);
  CHECK(q.n_clusters == 0);
  CHECK(q.labels[0] == geo::Partition::kNoise);

  // min_pts counts the point itself: a pair is a cluster at min_pts 2.
  std::vector<GeoPoint> pair{offset(41, -96, 0, 0), offset(41, -96, 10, 0)};
  CHECK(geo::dbscan(pair, two).n_clusters == 1);
  // 15.5 m apart is beyond eps.
  std::vector<GeoPoint> far{offset(41, -96, 0, 0), offset(41, -96, 15.5, 0)};
  CHECK(geo::dbscan(far, two).n_clusters == 0);
}

TEST_CASE("dbscan border tie goes to the lowest-ranked core") {
  // Cores at x = 0 and x = 26 m each have two satellites outside; the point
  // at 13 m sees only the two cores, so it is a border point of both.
  geo::ClusterConfig cfg;
  cfg.min_pts = 4;
  std::vector<GeoPoint> pts{offset(41, -96, 0, 0),   offset(41, -96, -10, 0), offset(41, -96, -10, 1),
                            offset(41, -96, 26, 0),  offset(41, -96, 36, 0),  offset(41, -96, 36, 1),
                            offset(41, -96, 13, 0)};
  auto p = geo::dbscan(pts, cfg);
  REQUIRE(p.n_clusters == 2);
  CHECK(p.core[0]);
  CHECK(p.core[3]);
  CHECK_FALSE(p.core[6]);
  // The western core has the smaller longitude, hence the lower rank.
  CHECK(p.labels[6] == p.labels[0]);
  CHECK(p.labels[6] != p.labels[3]);
  CHECK(p == sim::oracle_dbscan_bruteforce(pts, cfg));
}

TEST_CASE("dbscan matches the brute-force oracle") {
  SUBCASE("uniform points in a 1 km box") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0, 1000);
    std::vector<GeoPoint> pts;
    for (int i = 0; i < 200; ++i) pts.push_back(offset(41.25, -96, u(rng), u(rng)));
    geo::ClusterConfig cfg;
    cfg.eps_m = 50;
    cfg.min_pts = 4;
    CHECK(geo::dbscan(pts, cfg) == sim::oracle_dbscan_bruteforce(pts, cfg));
  }
  SUBCASE("clumped instances, serial and parallel") {
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
      auto pts = verify::random_cluster_instance(seed, 50 + seed % 250);
      geo::ClusterConfig cfg;
      cfg.min_pts = 1 + seed % 5;
      auto oracle = sim::oracle_dbscan_bruteforce(pts, cfg);
      CHECK(geo::dbscan(pts, cfg, Exec::Serial) == oracle);
      CHECK(geo::dbscan(pts, cfg, Exec::Parallel) == oracle);
    }
  }
}

TEST_CASE("dbscan invariants and permutation invariance") {
  auto pts = verify::random_cluster_instance(5, 250);
  geo::ClusterConfig cfg;
  auto p = geo::dbscan(pts, cfg);
  std::vector<int> size(p.n_clusters, 0);
  for (int l : p.labels)
    if (l >= 0) ++size[l];
  for (int s : size) CHECK(s >= int(cfg.min_pts));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::size_t nb = 0;
    for (const auto& q : pts) nb += geo::haversine_m(pts[i], q) <= cfg.eps_m;
    CHECK((nb >= cfg.min_pts) == bool(p.core[i]));
  }

  std::vector<std::size_t> perm(pts.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(9));
  std::vector<GeoPoint> shuffled;
  for (auto k : perm) shuffled.push_back(pts[k]);
  auto q = geo::dbscan(shuffled, cfg);
  CHECK(same_partition(p, q, perm));
  // Canonical ids: the same cluster gets the same number.
  for (std::size_t k = 0; k < perm.size(); ++k) CHECK(q.labels[k] == p.labels[perm[k]]);
}

TEST_CASE("spatial grid finds exactly the neighbours within radius") {
  auto pts = verify::random_cluster_instance(21, 300);
  geo::SpatialGrid grid(pts, 15);
  for (std::size_t i = 0; i < pts.size(); i += 7) {
    std::vector<std::size_t> brute;
    for (std::size_t j = 0; j < pts.size(); ++j)
      if (geo::haversine_m(pts[i], pts[j]) <= 15) brute.push_back(j);
    CHECK(grid.within(pts[i].lat, pts[i].lon) == brute);
  }
}

TEST_CASE("derive_sites") {
  geo::ClusterConfig cfg;
  CHECK(geo::derive_sites({}, {}, cfg).empty());

  std::vector<StopSignDetection> dets;
  const double d[4][2] = {{0, 0}, {3, 0}, {0, 4}, {3, 4}};
  double lat = 0, lon = 0;
  for (auto& e : d) {
    auto p = offset(41.3, -96.1, e[0], e[1]);
    dets.push_back({"T", 0, p.lat, p.lon});
    lat += p.lat / 4;
    lon += p.lon / 4;
  }
  auto sites = geo::derive_sites({}, dets, cfg);
  REQUIRE(sites.size() == 1);
  CHECK(sites[0].lat == doctest::Approx(lat).epsilon(1e-12));
  CHECK(sites[0].lon == doctest::Approx(lon).epsilon(1e-12));
  CHECK(sites[0].support == 4);
  CHECK(sites[0].provenance == SiteProvenance::Clustered);
  CHECK(sites[0].site_id == geo::site_id_for(sites[0].lat, sites[0].lon));

  // Fast samples are ignored, slow ones join.
  TripTrace t{"T", "P01", {{0, dets[0].lat, dets[0].lon, 5.0}, {1, dets[0].lat, dets[0].lon, 0.5}}};
  auto with_slow = geo::derive_sites(std::vector<TripTrace>{t}, dets, cfg);
  REQUIRE(with_slow.size() == 1);
  CHECK(with_slow[0].support == 5);
}

TEST_CASE("derive_sites recovers planted intersections from simulated trips") {
  sim::SimConfig c;
  c.seed = 77;
  c.n_t1dm = 2;
  c.n_control = 2;
  c.n_intersections = 3;
  c.events_per_participant = 25;  // 5 legs per trip -> 20 trips
  auto cohort = sim::simulate_cohort(c);
  REQUIRE(cohort.trips.size() == 20);
  auto sites = geo::derive_sites(cohort.trips, cohort.detections, geo::ClusterConfig{});
  REQUIRE(sites.size() == 3);
  for (auto [lat, lon] : cohort.truth.sites) {
    double best = 1e9;
    for (const auto& s : sites) best = std::min(best, geo::haversine_m(lat, lon, s.lat, s.lon));
    CHECK(best < 10);
  }
}

TEST_CASE("match_registry") {
  std::vector<IntersectionSite> sites{{"a", 41.0, -96.0, 5, SiteProvenance::Clustered}};
  CHECK(geo::match_registry(sites, {}, 25)[0].site_id == "a");

  auto near = offset(41.0, -96.0, 5, 0);
  std::vector<IntersectionSite> reg{{"R1", near.lat, near.lon, 0, SiteProvenance::Registry}};
  auto m = geo::match_registry(sites, reg, 25);
  REQUIRE(m.size() == 1);
  CHECK(m[0].site_id == "R1");

  auto other = offset(41.0, -96.0, 10, 0);
  sites.push_back({"b", other.lat, other.lon, 4, SiteProvenance::Clustered});
  auto far = offset(41.0, -96.0, 5000, 0);
  reg.push_back({"R2", far.lat, far.lon, 0, SiteProvenance::Registry});
  m = geo::match_registry(sites, reg, 25);
  REQUIRE(m.size() == 2);  // both clustered sites fold into R1; R2 passes through
  CHECK(std::count_if(m.begin(), m.end(), [](const auto& s) { return s.site_id == "R1"; }) == 1);
  CHECK(std::count_if(m.begin(), m.end(), [](const auto& s) { return s.site_id == "R2"; }) == 1);
}

TEST_CASE("geojson round trip") {
  std::vector<IntersectionSite> sites{{"s1", 41.123456789, -96.5, 7, SiteProvenance::Clustered},
                                      {"R9", 40.0, -95.25, 0, SiteProvenance::Registry}};
  std::stringstream io;
  geo::write_geojson(io, sites);
  auto back = geo::read_geojson(io);
  REQUIRE(back.size() == 2);
  CHECK(back[0].site_id == "s1");
  CHECK(back[0].lat == sites[0].lat);
  CHECK(back[0].support == 7);
  CHECK(back[1].provenance == SiteProvenance::Registry);
}
