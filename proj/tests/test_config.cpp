#include <filesystem>

#include "doctest.h"

#include "stopsafe/config.hpp"
#include "stopsafe/error.hpp"

using namespace stopsafe;
namespace fs = std::filesystem;

TEST_CASE("config round-trips through json") {
  RunConfig c;
  c.inputs.registry = "sites.geojson";
  c.cluster.eps_m = 12.5;
  c.cluster.min_pts = 3;
  c.protocol.alpha = 0.01;
  c.protocol.influence_overrides["participant:P07"] = false;
  c.protocol.fit.fixed_theta = std::vector<double>{0.5, 0.25};
  c.hypotheses = {proto::Hypothesis::Obesity};
  c.seed = 99;
  c.simulation.n_t1dm = 3;
  c.simulation.true_beta["bmi"] = -1.5;
  c.simulation.cgm.days = 5;
  auto j = to_json(c);
  auto back = run_config_from_json(j);
  CHECK(to_json(back).dump() == j.dump());
  CHECK(back.cluster.eps_m == 12.5);
  CHECK(back.hypotheses.size() == 1);
  CHECK(back.protocol.influence_overrides.at("participant:P07") == false);
}

TEST_CASE("missing keys default, unknown keys fail") {
  auto c = run_config_from_json(nlohmann::ordered_json::parse(R"({"seed": 5, "cluster": {"min_pts": 7}})"));
  CHECK(c.seed == 5);
  CHECK(c.cluster.min_pts == 7);
  CHECK(c.cluster.eps_m == geo::ClusterConfig{}.eps_m);
  CHECK(c.hypotheses.size() == 4);
  CHECK(to_json(run_config_from_json(nlohmann::ordered_json::object())).dump() == to_json(RunConfig{}).dump());

  CHECK_THROWS_WITH_AS(run_config_from_json(nlohmann::ordered_json::parse(R"({"clusters": {}})")),
                       doctest::Contains("clusters"), Error);
  CHECK_THROWS_WITH_AS(run_config_from_json(nlohmann::ordered_json::parse(R"({"cluster": {"eps": 1}})")),
                       doctest::Contains("eps"), Error);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::ordered_json::parse(R"({"protocol": {"alpha": 1.5}})")),
                  Error);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::ordered_json::parse(R"({"protocol": {"hypotheses": ["x"]}})")),
                  Error);
}

TEST_CASE("input paths resolve against the config directory") {
  InputPaths in;
  in.trips = "data/trips.csv";
  in.cgm = "/abs/cgm.csv";
  auto r = resolve_inputs(in, "/work/study/run.json");
  CHECK(r.trips == "/work/study/data/trips.csv");
  CHECK(r.cgm == "/abs/cgm.csv");
  CHECK(r.roster == "/work/study/roster.csv");
  CHECK(r.registry.empty());

  auto dir = fs::temp_directory_path() / "stopsafe_config_test";
  fs::create_directories(dir);
  RunConfig c;
  c.seed = 31;
  save_run_config(c, (dir / "c.json").string());
  CHECK(load_run_config((dir / "c.json").string()).seed == 31);
  fs::remove_all(dir);
  CHECK_THROWS_AS(load_run_config((dir / "c.json").string()), Error);
}
