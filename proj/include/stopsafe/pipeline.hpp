#pragma once

// Stage runners behind the command-line tool. Every stage reads its inputs
// from the configured files or from earlier artifacts in the output
// directory, writes its own artifacts, then rewrites MANIFEST.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stopsafe/config.hpp"

namespace stopsafe::pipeline {

enum class Stage { Ingest, Geolocate, ExtractStops, Metrics, Protocol, Report };
inline constexpr Stage kAllStages[] = {Stage::Ingest,  Stage::Geolocate, Stage::ExtractStops,
                                       Stage::Metrics, Stage::Protocol,  Stage::Report};
std::string_view to_string(Stage s);

struct Context {
  RunConfig cfg;  // input paths resolved
  std::string out_dir;
};

/// Loads the config (defaults when no path), resolves input paths and the
/// output directory against the config file's directory, then applies
/// command-line overrides. `--out` is taken relative to the working
/// directory.
Context make_context(const std::optional<std::string>& config_path,
                     const std::optional<std::string>& out_dir,
                     const std::optional<std::uint64_t>& seed);

/// Runs one stage and returns a short human-readable summary. On failure
/// the manifest is marked stale and the error is rethrown.
std::string run_stage(Stage s, const Context& ctx);

/// All stages in order; returns the one-screen run summary.
std::string run_all(const Context& ctx);

/// Writes out/MANIFEST: a timestamp line, status, then one
/// "hash size path" line per artifact in sorted path order.
void write_manifest(const std::string& out_dir, std::string_view command,
                    const std::optional<std::string>& failure = std::nullopt);

/// Name of the manifest's timestamp line prefix ("generated: ").
inline constexpr std::string_view kManifestTimestampPrefix = "generated: ";

}  // namespace stopsafe::pipeline
