// Serial reference against the OpenMP path for the parallel kernels.
// Arg(0) is serial, Arg(1) parallel.

#include <benchmark/benchmark.h>

#include "planted.hpp"
#include "stopsafe/geolocate.hpp"
#include "stopsafe/glmm.hpp"
#include "stopsafe/physiology.hpp"
#include "stopsafe/simgen.hpp"
#include "stopsafe/stops.hpp"
#include "stopsafe/util.hpp"
#include "stopsafe/verify.hpp"

using namespace stopsafe;

namespace {

Exec exec_of(const benchmark::State& s) { return s.range(0) ? Exec::Parallel : Exec::Serial; }

const sim::SimulatedCohort& cohort() {
  static const sim::SimulatedCohort c = [] {
    sim::SimConfig cfg;
    cfg.seed = 5;
    cfg.n_intersections = 60;
    cfg.events_per_participant = 30;
    return sim::simulate_cohort(cfg);
  }();
  return c;
}

void BM_Dbscan(benchmark::State& state) {
  auto pts = verify::random_cluster_instance(3, 5000);
  geo::ClusterConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(geo::dbscan(pts, cfg, exec_of(state)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(pts.size()));
}
BENCHMARK(BM_Dbscan)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_ExtractAll(benchmark::State& state) {
  const auto& c = cohort();
  static const auto sites = geo::derive_sites(c.trips, c.detections, geo::ClusterConfig{});
  for (auto _ : state)
    benchmark::DoNotOptimize(stops::extract_all(c.trips, sites, stops::StopConfig{}, exec_of(state)));
}
BENCHMARK(BM_ExtractAll)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Covariates(benchmark::State& state) {
  const auto& c = cohort();
  for (auto _ : state)
    benchmark::DoNotOptimize(phys::compute_covariates(c.roster, c.cgm, c.sleep, phys::QcConfig{}, exec_of(state)));
}
BENCHMARK(BM_Covariates)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_CooksDistance(benchmark::State& state) {
  static const auto d = planted::influence_design();
  static const auto fit = glmm::fit_glmm(d);
  for (auto _ : state)
    benchmark::DoNotOptimize(glmm::cooks_distance_by_group(d, fit, "participant", {}, exec_of(state)));
}
BENCHMARK(BM_CooksDistance)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
  log::set_sink([](const std::string&) {});
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
}
