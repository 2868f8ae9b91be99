#pragma once

// Influence fixture shared by the unit and acceptance tests: 29 ordinary
// participants with a covariate spread over [-1, 1] and no true effect,
// plus P30, every event unsafe, at covariate 4.

#include <cmath>
#include <cstdio>
#include <random>

#include "stopsafe/glmm.hpp"

namespace planted {

inline constexpr int kGroups = 30;
inline constexpr int kPerGroup = 30;
inline const char* kPlantedId = "P30";

inline stopsafe::glmm::Design influence_design(std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0, 1);
  std::uniform_real_distribution<double> u(0, 1);
  const int n = kGroups * kPerGroup;
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  stopsafe::glmm::Factor f{"participant", {}, {}};
  for (int g = 0; g < kGroups; ++g) {
    char id[16];
    std::snprintf(id, sizeof id, "P%02d", g + 1);
    f.levels.push_back(id);
  }
  for (int g = 0; g < kGroups; ++g) {
    const bool planted = g == kGroups - 1;
    const double x = planted ? 4.0 : -1.0 + 2.0 * g / (kGroups - 2);
    const double b = planted ? 0.0 : 0.5 * z(rng);
    for (int k = 0; k < kPerGroup; ++k) {
      const int r = g * kPerGroup + k;
      X(r, 0) = 1;
      X(r, 1) = x;
      y(r) = planted || u(rng) < 1 / (1 + std::exp(-b)) ? 1 : 0;
      f.index.push_back(g);
    }
  }
  return stopsafe::glmm::make_design(std::move(X), std::move(y), {f}, {"(Intercept)", "x"});
}

}  // namespace planted
