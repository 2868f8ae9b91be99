#include "stopsafe/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "stopsafe/error.hpp"

namespace stopsafe {

using json = nlohmann::ordered_json;

namespace {

// Reads fields from one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j.is_object()) throw Error("config: '" + name_ + "' must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw Error("config: unknown key '" + k + "' in '" + name_ + "'");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw Error("config: '" + name_ + "." + key + "': " + e.what());
    }
  }
  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const char* key) const { return j_.at(key); }
  std::string path(const char* key) const { return name_ + "." + key; }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

json fit_to_json(const glmm::FitOptions& f) {
  return {{"pirls_tol", f.pirls_tol},           {"max_pirls_iter", f.max_pirls_iter},
          {"theta_tol", f.theta_tol},           {"max_outer_iter", f.max_outer_iter},
          {"refine", f.refine},                 {"separation_bound", f.separation_bound}};
}

void fit_from_json(const json& j, const std::string& name, glmm::FitOptions& f) {
  Section s(j, name);
  s.get("pirls_tol", f.pirls_tol);
  s.get("max_pirls_iter", f.max_pirls_iter);
  s.get("theta_tol", f.theta_tol);
  s.get("max_outer_iter", f.max_outer_iter);
  s.get("refine", f.refine);
  s.get("separation_bound", f.separation_bound);
}

json sim_to_json(const sim::SimConfig& c) {
  return {{"seed", c.seed},
          {"n_t1dm", c.n_t1dm},
          {"n_control", c.n_control},
          {"n_intersections", c.n_intersections},
          {"events_per_participant", c.events_per_participant},
          {"true_beta", c.true_beta},
          {"tau_subj", c.tau_subj},
          {"tau_intxn", c.tau_intxn},
          {"unsafe_rolling_share", c.unsafe_rolling_share},
          {"confound_rate", c.confound_rate},
          {"benign_context_rate", c.benign_context_rate},
          {"bad_clip_rate", c.bad_clip_rate},
          {"other_driver_rate", c.other_driver_rate},
          {"cgm",
           {{"mean", c.cgm.mean},
            {"between_sd", c.cgm.between_sd},
            {"ar1_rho", c.cgm.ar1_rho},
            {"noise_sd", c.cgm.noise_sd},
            {"days", c.cgm.days}}},
          {"sleep",
           {{"mean_h", c.sleep.mean_h},
            {"sd_h", c.sleep.sd_h},
            {"nights", c.sleep.nights},
            {"n_missing", c.sleep.n_missing}}},
          {"geometry",
           {{"center_lat", c.geometry.center_lat},
            {"center_lon", c.geometry.center_lon},
            {"site_spacing_m", c.geometry.site_spacing_m},
            {"leg_half_length_m", c.geometry.leg_half_length_m},
            {"legs_per_trip", c.geometry.legs_per_trip}}},
          {"start_epoch", c.start_epoch}};
}

void sim_from_json(const json& j, sim::SimConfig& c) {
  Section s(j, "simulation");
  s.get("seed", c.seed);
  s.get("n_t1dm", c.n_t1dm);
  s.get("n_control", c.n_control);
  s.get("n_intersections", c.n_intersections);
  s.get("events_per_participant", c.events_per_participant);
  s.get("true_beta", c.true_beta);
  s.get("tau_subj", c.tau_subj);
  s.get("tau_intxn", c.tau_intxn);
  s.get("unsafe_rolling_share", c.unsafe_rolling_share);
  s.get("confound_rate", c.confound_rate);
  s.get("benign_context_rate", c.benign_context_rate);
  s.get("bad_clip_rate", c.bad_clip_rate);
  s.get("other_driver_rate", c.other_driver_rate);
  s.get("start_epoch", c.start_epoch);
  if (s.has("cgm")) {
    Section g(s.at("cgm"), s.path("cgm"));
    g.get("mean", c.cgm.mean);
    g.get("between_sd", c.cgm.between_sd);
    g.get("ar1_rho", c.cgm.ar1_rho);
    g.get("noise_sd", c.cgm.noise_sd);
    g.get("days", c.cgm.days);
  }
  if (s.has("sleep")) {
    Section g(s.at("sleep"), s.path("sleep"));
    g.get("mean_h", c.sleep.mean_h);
    g.get("sd_h", c.sleep.sd_h);
    g.get("nights", c.sleep.nights);
    g.get("n_missing", c.sleep.n_missing);
  }
  if (s.has("geometry")) {
    Section g(s.at("geometry"), s.path("geometry"));
    g.get("center_lat", c.geometry.center_lat);
    g.get("center_lon", c.geometry.center_lon);
    g.get("site_spacing_m", c.geometry.site_spacing_m);
    g.get("leg_half_length_m", c.geometry.leg_half_length_m);
    g.get("legs_per_trip", c.geometry.legs_per_trip);
  }
}

}  // namespace

json to_json(const RunConfig& c) {
  json hyps = json::array();
  for (auto h : c.hypotheses) hyps.push_back(std::string(proto::to_string(h)));
  json j;
  j["inputs"] = {{"roster", c.inputs.roster},         {"trips", c.inputs.trips},
                 {"detections", c.inputs.detections}, {"cgm", c.inputs.cgm},
                 {"sleep", c.inputs.sleep},           {"annotations", c.inputs.annotations},
                 {"registry", c.inputs.registry}};
  j["output_dir"] = c.output_dir;
  j["cluster"] = {{"eps_m", c.cluster.eps_m},
                  {"min_pts", c.cluster.min_pts},
                  {"low_speed_cutoff_mps", c.cluster.low_speed_cutoff_mps},
                  {"registry_radius_m", c.registry_radius_m}};
  j["stops"] = {{"zone_radius_m", c.stops.zone_radius_m},
                {"stop_speed_mps", c.stops.stop_speed_mps},
                {"full_stop_dwell_s", c.stops.full_stop_dwell_s},
                {"rolling_fraction", c.stops.rolling_fraction}};
  j["qc"] = {{"min_mgdl", c.qc.min_mgdl}, {"max_mgdl", c.qc.max_mgdl}, {"min_n", c.qc.min_n}};
  j["protocol"] = {{"hypotheses", hyps},
                   {"alpha", c.protocol.alpha},
                   {"cooks_threshold", c.protocol.cooks_threshold},
                   {"visual_multiplier", c.protocol.visual_multiplier},
                   {"gv_correlation_cutoff", c.protocol.gv_correlation_cutoff},
                   {"influence_overrides", c.protocol.influence_overrides},
                   {"fit", fit_to_json(c.protocol.fit)}};
  j["seed"] = c.seed;
  j["simulation"] = sim_to_json(c.simulation);
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Section top(j, "config");
  if (top.has("inputs")) {
    Section s(top.at("inputs"), "inputs");
    s.get("roster", c.inputs.roster);
    s.get("trips", c.inputs.trips);
    s.get("detections", c.inputs.detections);
    s.get("cgm", c.inputs.cgm);
    s.get("sleep", c.inputs.sleep);
    s.get("annotations", c.inputs.annotations);
    s.get("registry", c.inputs.registry);
  }
  top.get("output_dir", c.output_dir);
  if (top.has("cluster")) {
    Section s(top.at("cluster"), "cluster");
    s.get("eps_m", c.cluster.eps_m);
    s.get("min_pts", c.cluster.min_pts);
    s.get("low_speed_cutoff_mps", c.cluster.low_speed_cutoff_mps);
    s.get("registry_radius_m", c.registry_radius_m);
  }
  if (top.has("stops")) {
    Section s(top.at("stops"), "stops");
    s.get("zone_radius_m", c.stops.zone_radius_m);
    s.get("stop_speed_mps", c.stops.stop_speed_mps);
    s.get("full_stop_dwell_s", c.stops.full_stop_dwell_s);
    s.get("rolling_fraction", c.stops.rolling_fraction);
  }
  if (top.has("qc")) {
    Section s(top.at("qc"), "qc");
    s.get("min_mgdl", c.qc.min_mgdl);
    s.get("max_mgdl", c.qc.max_mgdl);
    s.get("min_n", c.qc.min_n);
  }
  if (top.has("protocol")) {
    Section s(top.at("protocol"), "protocol");
    if (s.has("hypotheses")) {
      c.hypotheses.clear();
      for (const auto& h : s.at("hypotheses")) {
        auto parsed = h.is_string() ? proto::hypothesis_from_string(h.get<std::string>()) : std::nullopt;
        if (!parsed) throw Error("config: unknown hypothesis " + h.dump());
        c.hypotheses.push_back(*parsed);
      }
    }
    s.get("alpha", c.protocol.alpha);
    s.get("cooks_threshold", c.protocol.cooks_threshold);
    s.get("visual_multiplier", c.protocol.visual_multiplier);
    s.get("gv_correlation_cutoff", c.protocol.gv_correlation_cutoff);
    s.get("influence_overrides", c.protocol.influence_overrides);
    if (s.has("fit")) fit_from_json(s.at("fit"), "protocol.fit", c.protocol.fit);
  }
  top.get("seed", c.seed);
  if (top.has("simulation")) sim_from_json(top.at("simulation"), c.simulation);

  if (!(c.protocol.alpha > 0 && c.protocol.alpha < 1)) throw Error("config: protocol.alpha must be in (0, 1)");
  if (c.cluster.min_pts < 1) throw Error("config: cluster.min_pts must be >= 1");
  if (!(c.cluster.eps_m > 0)) throw Error("config: cluster.eps_m must be positive");
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw Error("config '" + path + "': " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const RunConfig& c, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write config '" + path + "'");
  f << to_json(c).dump(2) << '\n';
}

InputPaths resolve_inputs(const InputPaths& in, const std::string& config_path) {
  namespace fs = std::filesystem;
  fs::path base = fs::path(config_path).parent_path();
  auto r = [&](const std::string& p) {
    if (p.empty() || fs::path(p).is_absolute()) return p;
    return (base / p).lexically_normal().string();
  };
  return {r(in.roster), r(in.trips), r(in.detections), r(in.cgm), r(in.sleep), r(in.annotations), r(in.registry)};
}

}  // namespace stopsafe
