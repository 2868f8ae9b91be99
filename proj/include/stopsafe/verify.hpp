#pragma once

// Oracle cross-checks behind `stopsafe verify`.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "stopsafe/geolocate.hpp"

namespace stopsafe::verify {

struct Check {
  std::string name;
  bool passed = false;
  double error = 0;      // measured discrepancy
  double tolerance = 0;  // pass when error <= tolerance
  std::string detail;
  double seconds = 0;
};

/// Names accepted by run_checks / --perturb, in run order.
const std::vector<std::string>& check_names();

/// Runs one check. With `perturb` the tolerance is replaced by an
/// unattainable one so the check must fail (test mode).
Check run_check(std::string_view name, bool perturb = false);

/// Runs every check; `perturb` names one to sabotage (empty for none).
/// Throws Error for an unknown name.
std::vector<Check> run_checks(std::string_view perturb = {});

std::string format_check(const Check& c);

/// Clumped random points around 41.25N, 96W: a few dense blobs, sparse
/// scatter and exact duplicates, so noise, border and core points all occur.
std::vector<geo::GeoPoint> random_cluster_instance(std::uint64_t seed, std::size_t n);

}  // namespace stopsafe::verify
