#include "stopsafe/pipeline.hpp"

#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "stopsafe/domain.hpp"
#include "stopsafe/error.hpp"
#include "stopsafe/exec.hpp"
#include "stopsafe/geolocate.hpp"
#include "stopsafe/physiology.hpp"
#include "stopsafe/protocol.hpp"
#include "stopsafe/stops.hpp"
#include "stopsafe/util.hpp"

namespace stopsafe::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Ingest: return "ingest";
    case Stage::Geolocate: return "geolocate";
    case Stage::ExtractStops: return "extract-stops";
    case Stage::Metrics: return "metrics";
    case Stage::Protocol: return "protocol";
    case Stage::Report: return "report";
  }
  return "?";
}

namespace {

template <class F>
auto read_file(const std::string& path, const char* what, F&& parse) {
  if (path.empty()) throw Error(std::string("no path configured for ") + what);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(std::string("cannot open ") + what + " '" + path + "'");
  try {
    return parse(in);
  } catch (const ParseError& e) {
    throw Error(path + ": " + e.what());
  }
}

std::string artifact(const Context& ctx, const std::string& name) {
  return (fs::path(ctx.out_dir) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
  if (!out) throw Error("write failed for '" + path + "'");
}

template <class F>
void write_with(const std::string& path, F&& fn) {
  std::ostringstream s;
  fn(s);
  write_text(path, s.str());
}

json read_json(const std::string& path) {
  return read_file(path, "artifact", [&](std::istream& in) {
    try {
      return json::parse(in);
    } catch (const json::exception& e) {
      throw Error(path + ": " + e.what());
    }
  });
}

std::vector<ParticipantProfile> load_roster(const Context& c) {
  return read_file(c.cfg.inputs.roster, "roster", [](std::istream& in) { return parse_roster(in); });
}
std::vector<TripTrace> load_trips(const Context& c, std::span<const ParticipantProfile> roster) {
  return read_file(c.cfg.inputs.trips, "trips", [&](std::istream& in) { return parse_trips(in, roster); });
}
std::vector<StopSignDetection> load_detections(const Context& c, std::span<const TripTrace> trips) {
  return read_file(c.cfg.inputs.detections, "detections",
                   [&](std::istream& in) { return parse_detections(in, trips); });
}
std::vector<GlucoseReading> load_cgm(const Context& c, std::span<const ParticipantProfile> roster) {
  return read_file(c.cfg.inputs.cgm, "cgm", [&](std::istream& in) { return parse_cgm(in, roster); });
}
std::vector<SleepNight> load_sleep(const Context& c, std::span<const ParticipantProfile> roster) {
  return read_file(c.cfg.inputs.sleep, "sleep", [&](std::istream& in) { return parse_sleep(in, roster); });
}
std::vector<AnnotationRecord> load_annotations(const Context& c) {
  return read_file(c.cfg.inputs.annotations, "annotations",
                   [](std::istream& in) { return parse_annotations(in); });
}
std::vector<IntersectionSite> load_sites(const Context& c) {
  return read_file(artifact(c, "sites.geojson"), "sites artifact (run geolocate first)",
                   [](std::istream& in) { return geo::read_geojson(in); });
}
std::vector<StopEvent> load_events(const Context& c) {
  return read_file(artifact(c, "events.csv"), "events artifact (run extract-stops first)",
                   [](std::istream& in) { return stops::read_events_csv(in); });
}
std::vector<phys::CovariateRow> load_covariates(const Context& c) {
  return read_file(artifact(c, "covariates.csv"), "covariates artifact (run metrics first)",
                   [](std::istream& in) { return phys::read_covariates_csv(in); });
}

std::string hypothesis_dir(proto::Hypothesis h) { return std::string(proto::to_string(h)); }

// Saved copy of the effective config: inputs absolute, output the artifact
// directory itself, so the directory alone replays the run.
void save_effective_config(const Context& ctx) {
  RunConfig c = ctx.cfg;
  auto abs = [](std::string& p) {
    if (!p.empty()) p = fs::absolute(p).lexically_normal().string();
  };
  for (auto* p : {&c.inputs.roster, &c.inputs.trips, &c.inputs.detections, &c.inputs.cgm, &c.inputs.sleep,
                  &c.inputs.annotations, &c.inputs.registry})
    abs(*p);
  c.output_dir = ".";
  write_text(artifact(ctx, "config.json"), to_json(c).dump(2) + "\n");
}

std::string do_ingest(const Context& ctx) {
  auto roster = load_roster(ctx);
  auto trips = load_trips(ctx, roster);
  auto dets = load_detections(ctx, trips);
  auto cgm = load_cgm(ctx, roster);
  auto sleep = load_sleep(ctx, roster);
  auto ann = load_annotations(ctx);
  std::size_t t1dm = 0, samples = 0;
  for (const auto& p : roster) t1dm += p.cohort == Cohort::T1DM;
  for (const auto& t : trips) samples += t.samples.size();
  json j{{"participants", roster.size()}, {"t1dm", t1dm},
         {"control", roster.size() - t1dm}, {"trips", trips.size()},
         {"samples", samples},              {"detections", dets.size()},
         {"cgm_readings", cgm.size()},      {"sleep_nights", sleep.size()},
         {"annotations", ann.size()}};
  if (!ctx.cfg.inputs.registry.empty()) {
    auto reg = read_file(ctx.cfg.inputs.registry, "registry", [](std::istream& in) { return geo::read_geojson(in); });
    j["registry_sites"] = reg.size();
  }
  write_text(artifact(ctx, "ingest.json"), j.dump(2) + "\n");
  save_effective_config(ctx);
  return "ingest: " + std::to_string(roster.size()) + " participants (" + std::to_string(t1dm) + " T1DM), " +
         std::to_string(trips.size()) + " trips, " + std::to_string(dets.size()) + " detections, " +
         std::to_string(ann.size()) + " annotations";
}

std::string do_geolocate(const Context& ctx) {
  auto roster = load_roster(ctx);
  auto trips = load_trips(ctx, roster);
  auto dets = load_detections(ctx, trips);
  auto sites = geo::derive_sites(trips, dets, ctx.cfg.cluster);
  std::size_t clustered = sites.size();
  if (!ctx.cfg.inputs.registry.empty()) {
    auto reg = read_file(ctx.cfg.inputs.registry, "registry", [](std::istream& in) { return geo::read_geojson(in); });
    sites = geo::match_registry(sites, reg, ctx.cfg.registry_radius_m);
  }
  write_with(artifact(ctx, "sites.geojson"), [&](std::ostream& o) { geo::write_geojson(o, sites); });
  return "geolocate: " + std::to_string(clustered) + " clustered sites, " + std::to_string(sites.size()) +
         " after registry matching";
}

json cell_json(const stops::ContextMargins::Cell& c) { return {{"safe", c.safe}, {"unsafe", c.unsafe}}; }

json status_cells(const stops::ContextMargins::Cell (&cells)[3]) {
  json j;
  for (int k = 0; k < 3; ++k) j[std::string(to_string(static_cast<ContextStatus>(k)))] = cell_json(cells[k]);
  return j;
}

std::string do_extract(const Context& ctx) {
  auto roster = load_roster(ctx);
  auto trips = load_trips(ctx, roster);
  auto sites = load_sites(ctx);
  auto ann = load_annotations(ctx);
  auto windows = stops::extract_all(trips, sites, ctx.cfg.stops);
  std::vector<StopEvent> events;
  events.reserve(windows.size());
  for (const auto& w : windows) events.push_back(stops::to_event(w, ctx.cfg.stops));
  write_with(artifact(ctx, "events.csv"), [&](std::ostream& o) { stops::write_events_csv(o, events); });

  auto filtered = stops::apply_filters(events, ann);
  auto m = stops::context_margins(events, ann);
  const auto& f = filtered.funnel;
  json j;
  j["funnel"] = {{"total", f.total},         {"bad", f.bad},
                 {"good", f.good},           {"discarded", f.discarded},
                 {"analyzable", f.analyzable}, {"unannotated", f.unannotated}};
  j["margins"] = {{"safe", m.safe},
                  {"unsafe", m.unsafe},
                  {"rolling", m.rolling},
                  {"no_stop", m.no_stop},
                  {"lead_vehicle", status_cells(m.lead)},
                  {"crossing_vehicle", status_cells(m.crossing_vehicle)},
                  {"crossing_pedestrian", status_cells(m.crossing_pedestrian)},
                  {"participant_driving",
                   {{"no", cell_json(m.participant_driving[0])}, {"yes", cell_json(m.participant_driving[1])}}}};
  write_text(artifact(ctx, "funnel.json"), j.dump(2) + "\n");
  return "extract-stops: " + std::to_string(f.total) + " events, " + std::to_string(f.bad) + " bad clips, " +
         std::to_string(f.discarded) + " discarded, " + std::to_string(f.analyzable) + " analyzable, " +
         std::to_string(f.unannotated) + " unannotated";
}

std::string do_metrics(const Context& ctx) {
  auto roster = load_roster(ctx);
  auto cgm = load_cgm(ctx, roster);
  auto sleep = load_sleep(ctx, roster);
  auto res = phys::compute_covariates(roster, cgm, sleep, ctx.cfg.qc);
  write_with(artifact(ctx, "covariates.csv"), [&](std::ostream& o) { phys::write_covariates_csv(o, res.rows); });

  std::vector<phys::GvMetrics> gv;
  for (const auto& r : res.rows)
    if (r.cohort == Cohort::T1DM && r.gv) gv.push_back(*r.gv);
  json j;
  j["warnings"] = res.warnings;
  j["gv_correlation"] = {{"participants", gv.size()}};
  if (gv.size() >= 3) {
    auto c = phys::pearson_corr_matrix(gv);
    json rows = json::object();
    for (int a = 0; a < 4; ++a) {
      json row = json::object();
      for (int b = 0; b < 4; ++b) row[phys::kGvNames[b]] = c(a, b);
      rows[phys::kGvNames[a]] = row;
    }
    j["gv_correlation"]["matrix"] = rows;
  }
  write_text(artifact(ctx, "metrics.json"), j.dump(2) + "\n");
  return "metrics: " + std::to_string(res.rows.size()) + " participants, " + std::to_string(res.warnings.size()) +
         " warnings";
}

std::string run_line(const proto::ProtocolRun& run) {
  std::ostringstream s;
  s << proto::display_name(run.spec.name) << ": " << run.n_obs_step4 << " obs, "
    << (run.keep_intersection ? "with" : "without") << " intersection RE (LRT chi2 "
    << format_fixed(run.lrt.chi2, 2) << ", p " << proto::format_p(run.lrt.p) << "), removed "
    << run.removed_participants.size() << " participants / " << run.removed_intersections.size()
    << " intersections";
  return s.str();
}

std::string do_protocol(const Context& ctx) {
  auto events = load_events(ctx);
  auto ann = load_annotations(ctx);
  auto cov = load_covariates(ctx);
  auto kept = stops::apply_filters(events, ann).kept;
  std::string summary = "protocol: " + std::to_string(kept.size()) + " analyzable events";
  std::vector<std::string> failures;
  for (auto h : ctx.cfg.hypotheses) {
    const std::string dir = hypothesis_dir(h);
    try {
      auto spec = proto::hypothesis_spec(h);
      auto run = proto::run_protocol(spec, kept, cov, ctx.cfg.protocol);
      write_text(artifact(ctx, dir + "/report.json"), proto::report_json(run).dump(2) + "\n");
      write_text(artifact(ctx, dir + "/influence.csv"), proto::influence_csv(run));
      summary += "\n  " + run_line(run);
    } catch (const Error& e) {
      std::error_code ec;
      fs::remove(artifact(ctx, dir + "/report.json"), ec);
      failures.push_back(e.what());
    }
  }
  if (!failures.empty()) {
    std::string msg;
    for (const auto& f : failures) msg += (msg.empty() ? "" : "; ") + f;
    throw Error(msg);
  }
  return summary;
}

std::string margins_markdown(const json& f) {
  std::ostringstream o;
  const auto& fu = f.at("funnel");
  o << "| Review funnel | Count |\n|---|---|\n";
  for (const char* k : {"total", "bad", "good", "discarded", "analyzable", "unannotated"})
    o << "| " << k << " | " << fu.at(k).get<std::size_t>() << " |\n";
  const auto& m = f.at("margins");
  auto safe = m.at("safe").get<std::size_t>(), unsafe = m.at("unsafe").get<std::size_t>();
  o << "\n| Good clips | Safe | Unsafe |\n|---|---|---|\n";
  o << "| Outcome | " << safe << " | " << unsafe << " (" << m.at("rolling").get<std::size_t>() << " rolling, "
    << m.at("no_stop").get<std::size_t>() << " no stop) |\n";
  auto cells = [&](const char* key, const char* label) {
    o << "| **" << label << "** | | |\n";
    for (const auto& [status, c] : m.at(key).items())
      o << "| " << status << " | " << proto::format_count_percent(c.at("safe").get<std::size_t>(), safe) << " | "
        << proto::format_count_percent(c.at("unsafe").get<std::size_t>(), unsafe) << " |\n";
  };
  cells("lead_vehicle", "Lead vehicle");
  cells("crossing_vehicle", "Crossing vehicle");
  cells("crossing_pedestrian", "Crossing pedestrian");
  cells("participant_driving", "Participant driving");
  return o.str();
}

std::string do_report(const Context& ctx) {
  auto roster = load_roster(ctx);
  auto cov = load_covariates(ctx);
  auto funnel = read_json(artifact(ctx, "funnel.json"));
  std::vector<proto::ProtocolRun> runs;
  for (auto h : ctx.cfg.hypotheses) {
    const std::string dir = hypothesis_dir(h);
    auto run = proto::protocol_run_from_json(read_json(artifact(ctx, dir + "/report.json")));
    write_text(artifact(ctx, dir + "/report.md"), proto::render_report_markdown(run));
    runs.push_back(std::move(run));
  }
  std::ostringstream s;
  s << "# Run summary\n\n## Participants\n\n"
    << proto::render_markdown(proto::describe_cohort(roster, cov)) << "\n## Stop events\n\n"
    << margins_markdown(funnel) << "\n## Models\n\n";
  for (const auto& r : runs) s << "- " << run_line(r) << '\n';
  if (!runs.empty()) s << "\n## Control variables (final models)\n\n" << proto::render_control_summary(runs);
  write_text(artifact(ctx, "summary.md"), s.str());
  return "report: " + std::to_string(runs.size()) + " hypothesis reports, summary.md";
}

std::string dispatch(Stage s, const Context& ctx) {
  switch (s) {
    case Stage::Ingest: return do_ingest(ctx);
    case Stage::Geolocate: return do_geolocate(ctx);
    case Stage::ExtractStops: return do_extract(ctx);
    case Stage::Metrics: return do_metrics(ctx);
    case Stage::Protocol: return do_protocol(ctx);
    case Stage::Report: return do_report(ctx);
  }
  throw Error("unknown stage");
}

std::string stage_failure(Stage s, const std::exception& e) {
  return std::string(to_string(s)) + ": " + e.what();
}

}  // namespace

Context make_context(const std::optional<std::string>& config_path, const std::optional<std::string>& out_dir,
                     const std::optional<std::uint64_t>& seed) {
  Context ctx;
  std::string base = ".";
  if (config_path) {
    if (!fs::exists(*config_path)) throw Error("config file not found: '" + *config_path + "'");
    ctx.cfg = load_run_config(*config_path);
    ctx.cfg.inputs = resolve_inputs(ctx.cfg.inputs, *config_path);
    base = fs::path(*config_path).parent_path().string();
  }
  if (out_dir) {
    ctx.out_dir = *out_dir;
  } else {
    fs::path o(ctx.cfg.output_dir);
    ctx.out_dir = (o.is_absolute() || base.empty() ? o : fs::path(base) / o).lexically_normal().string();
  }
  if (seed) {
    ctx.cfg.seed = *seed;
    ctx.cfg.simulation.seed = *seed;
  }
  return ctx;
}

std::string run_stage(Stage s, const Context& ctx) {
  fs::create_directories(ctx.out_dir);
  try {
    auto summary = dispatch(s, ctx);
    write_manifest(ctx.out_dir, to_string(s));
    return summary;
  } catch (const std::exception& e) {
    write_manifest(ctx.out_dir, to_string(s), stage_failure(s, e));
    throw Error(stage_failure(s, e));
  }
}

std::string run_all(const Context& ctx) {
  fs::create_directories(ctx.out_dir);
  std::string summary;
  for (auto s : kAllStages) {
    try {
      summary += dispatch(s, ctx) + '\n';
    } catch (const std::exception& e) {
      write_manifest(ctx.out_dir, "run", stage_failure(s, e));
      throw Error(stage_failure(s, e));
    }
  }
  write_manifest(ctx.out_dir, "run");
  return summary + "artifacts: " + ctx.out_dir + '\n';
}

void write_manifest(const std::string& out_dir, std::string_view command,
                    const std::optional<std::string>& failure) {
  std::vector<std::string> files;
  if (fs::exists(out_dir))
    for (const auto& e : fs::recursive_directory_iterator(out_dir)) {
      if (!e.is_regular_file()) continue;
      auto rel = fs::relative(e.path(), out_dir).generic_string();
      if (rel != "MANIFEST") files.push_back(rel);
    }
  std::sort(files.begin(), files.end());
  std::ostringstream o;
  o << kManifestTimestampPrefix << format_iso8601(std::time(nullptr)) << '\n';
  o << "command: " << command << '\n';
  if (failure) o << "status: stale\nerror: " << *failure << '\n';
  else o << "status: complete\n";
  for (const auto& f : files) {
    std::ifstream in(fs::path(out_dir) / f, std::ios::binary);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    o << hex16(fnv1a64(content)) << ' ' << content.size() << ' ' << f << '\n';
  }
  write_text((fs::path(out_dir) / "MANIFEST").string(), o.str());
}

}  // namespace stopsafe::pipeline
