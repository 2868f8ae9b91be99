#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "stopsafe/error.hpp"
#include "stopsafe/pipeline.hpp"
#include "stopsafe/verify.hpp"

using namespace stopsafe;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("missing input fails with a path and a stale manifest") {
  auto dir = fs::temp_directory_path() / "stopsafe_pipeline_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  RunConfig cfg;
  save_run_config(cfg, (dir / "config.json").string());
  auto ctx = pipeline::make_context((dir / "config.json").string(), (dir / "out").string(), std::nullopt);
  CHECK(ctx.cfg.inputs.roster == (dir / "roster.csv").string());
  const auto roster = (dir / "roster.csv").string();
  CHECK_THROWS_WITH_AS(pipeline::run_stage(pipeline::Stage::Ingest, ctx), doctest::Contains(roster.c_str()),
                       Error);
  auto manifest = slurp(dir / "out" / "MANIFEST");
  CHECK(manifest.find("status: stale") != std::string::npos);
  CHECK(manifest.find("error: ingest") != std::string::npos);
  CHECK(manifest.rfind(pipeline::kManifestTimestampPrefix, 0) == 0);
  fs::remove_all(dir);
}

TEST_CASE("geolocate before ingest points at the missing artifact") {
  auto dir = fs::temp_directory_path() / "stopsafe_pipeline_order";
  fs::remove_all(dir);
  auto ctx = pipeline::make_context(std::nullopt, dir.string(), 3);
  CHECK(ctx.cfg.seed == 3);
  CHECK(ctx.cfg.simulation.seed == 3);
  CHECK_THROWS_AS(pipeline::run_stage(pipeline::Stage::Geolocate, ctx), Error);
  fs::remove_all(dir);
}

TEST_CASE("self-checks pass and detect a perturbed tolerance") {
  auto names = verify::check_names();
  CHECK(names.size() == 6);
  auto dbscan = verify::run_check("dbscan-bruteforce", false);
  CHECK(dbscan.passed);
  auto broken = verify::run_check("gv-hand", true);
  CHECK_FALSE(broken.passed);
  CHECK(verify::format_check(broken).rfind("FAIL gv-hand", 0) == 0);
  CHECK_THROWS_AS(verify::run_check("nope", false), Error);
}
