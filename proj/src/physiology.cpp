#include "stopsafe/physiology.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "stopsafe/csv.hpp"
#include "stopsafe/error.hpp"
#include "stopsafe/util.hpp"

namespace stopsafe::phys {

CgmSeries qc_cgm(std::span<const GlucoseReading> readings, const QcConfig& cfg) {
  CgmSeries out;
  out.qc.n_raw = readings.size();
  if (!readings.empty()) out.participant_id = readings.front().participant_id;
  for (const auto& r : readings) {
    if (r.participant_id != out.participant_id)
      throw Error("qc_cgm: readings from several participants");
    if (!out.readings.empty() && r.t < out.readings.back().t)
      throw Error("qc_cgm: readings for '" + out.participant_id + "' are not sorted by time");
    if (!out.readings.empty() && r.t == out.readings.back().t) {
      ++out.qc.n_dropped_duplicate;
      log::warn("cgm: duplicate timestamp " + format_iso8601(r.t) + " for '" +
                out.participant_id + "', keeping the first reading");
      continue;
    }
    if (r.bg_mgdl < cfg.min_mgdl || r.bg_mgdl > cfg.max_mgdl) {
      ++out.qc.n_dropped_range;
      continue;
    }
    out.readings.push_back(r);
  }
  if (out.readings.size() < cfg.min_n)
    throw Error("qc_cgm: participant '" + out.participant_id + "' has " +
                std::to_string(out.readings.size()) + " usable readings of " +
                std::to_string(out.qc.n_raw) + " (need " + std::to_string(cfg.min_n) + ")");
  return out;
}

double bg_risk_scale(double bg) { return 1.509 * (std::pow(std::log(bg), 1.084) - 5.381); }

double bg_risk_pivot() { return std::exp(std::pow(5.381, 1.0 / 1.084)); }

GvMetrics gv_metrics(std::span<const double> bg) {
  const std::size_t n = bg.size();
  if (n < 2) throw Error("gv_metrics: need at least 2 readings");
  double mean = 0;
  for (double v : bg) mean += v;
  mean /= static_cast<double>(n);
  if (!(mean > 0)) throw Error("gv_metrics: mean glucose must be positive");
  double ss = 0, rl = 0, rh = 0;
  for (double v : bg) {
    ss += (v - mean) * (v - mean);
    double f = bg_risk_scale(v);
    double r = 10 * f * f;
    if (f < 0) rl += r;
    else if (f > 0) rh += r;
  }
  GvMetrics m;
  m.n = n;
  m.sd = std::sqrt(ss / static_cast<double>(n - 1));
  m.cv = m.sd / mean;
  m.lbgi = rl / static_cast<double>(n);
  m.hbgi = rh / static_cast<double>(n);
  return m;
}

GvMetrics gv_metrics(const CgmSeries& series) {
  std::vector<double> bg;
  bg.reserve(series.readings.size());
  for (const auto& r : series.readings) bg.push_back(r.bg_mgdl);
  return gv_metrics(bg);
}

SleepSummary avg_sleep(std::span<const SleepNight> nights) {
  if (nights.empty()) throw Error("avg_sleep: no nights recorded");
  double s = 0;
  for (const auto& n : nights) s += n.duration_h;
  SleepSummary out;
  out.n_nights = nights.size();
  out.avg_duration_h = s / static_cast<double>(nights.size());
  out.abnormal = out.avg_duration_h < 7.0 || out.avg_duration_h > 9.0;
  return out;
}

BodyMetrics bmi(const ParticipantProfile& p) {
  BodyMetrics b;
  b.bmi = p.weight_kg / (p.height_m * p.height_m);
  b.obese = b.bmi >= 30.0;
  return b;
}

StandardizedCovariate standardize(const std::string& name,
                                  const std::map<std::string, double>& values,
                                  std::span<const std::string> sample) {
  if (sample.size() < 2) throw Error("standardize '" + name + "': need at least 2 participants");
  std::vector<double> xs;
  xs.reserve(sample.size());
  for (const auto& id : sample) {
    auto it = values.find(id);
    if (it == values.end())
      throw Error("standardize '" + name + "': no value for participant '" + id + "'");
    xs.push_back(it->second);
  }
  double mean = 0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  if (!(sd > 0)) throw Error("standardize '" + name + "': zero variance over the sample");
  StandardizedCovariate out{name, {}, mean, sd};
  for (std::size_t i = 0; i < sample.size(); ++i) out.z[sample[i]] = (xs[i] - mean) / sd;
  return out;
}

Eigen::Matrix4d pearson_corr_matrix(std::span<const GvMetrics> metrics) {
  const auto n = static_cast<Eigen::Index>(metrics.size());
  if (n < 3) throw Error("pearson_corr_matrix: need at least 3 participants");
  Eigen::MatrixXd m(n, 4);
  for (Eigen::Index i = 0; i < n; ++i)
    m.row(i) << metrics[i].sd, metrics[i].cv, metrics[i].lbgi, metrics[i].hbgi;
  Eigen::MatrixXd c = m.rowwise() - m.colwise().mean();
  Eigen::Matrix4d cov = (c.transpose() * c) / static_cast<double>(n - 1);
  Eigen::Vector4d sd = cov.diagonal().cwiseSqrt();
  for (int k = 0; k < 4; ++k)
    if (!(sd(k) > 0))
      throw Error(std::string("pearson_corr_matrix: zero variance in ") + kGvNames[k]);
  Eigen::Matrix4d r = cov.array() / (sd * sd.transpose()).array();
  for (int k = 0; k < 4; ++k) r(k, k) = 1.0;
  return r.cwiseMax(-1.0).cwiseMin(1.0);
}

MetricsResult compute_covariates(std::span<const ParticipantProfile> roster,
                                 std::span<const GlucoseReading> cgm,
                                 std::span<const SleepNight> sleep, const QcConfig& qc,
                                 Exec exec) {
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < roster.size(); ++i) pos[roster[i].participant_id] = i;
  std::vector<std::vector<GlucoseReading>> cgm_by(roster.size());
  std::vector<std::vector<SleepNight>> sleep_by(roster.size());
  for (const auto& g : cgm) cgm_by[pos.at(g.participant_id)].push_back(g);
  for (const auto& s : sleep) sleep_by[pos.at(s.participant_id)].push_back(s);

  MetricsResult res;
  res.rows.resize(roster.size());
  std::vector<std::string> warn(roster.size());
  const long long n = static_cast<long long>(roster.size());
#pragma omp parallel for schedule(dynamic) if (exec == Exec::Parallel)
  for (long long i = 0; i < n; ++i) {
    const auto& p = roster[i];
    auto& row = res.rows[i];
    row.participant_id = p.participant_id;
    row.cohort = p.cohort;
    row.gender = p.gender;
    row.age = p.age;
    row.driving_experience = p.driving_experience;
    row.hba1c = p.hba1c_pct;
    row.bmi = bmi(p).bmi;
    if (!sleep_by[i].empty()) row.sleep_h = avg_sleep(sleep_by[i]).avg_duration_h;
    else warn[i] = "participant '" + p.participant_id + "': no sleep data (N-Miss)";
    if (!cgm_by[i].empty()) {
      try {
        auto series = qc_cgm(cgm_by[i], qc);
        row.gv = gv_metrics(series);
        row.cgm_qc = series.qc;
      } catch (const Error& e) {
        if (!warn[i].empty()) warn[i] += "; ";
        warn[i] += e.what();
      }
    }
  }
  for (auto& w : warn)
    if (!w.empty()) {
      log::warn(w);
      res.warnings.push_back(std::move(w));
    }
  return res;
}

namespace {

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

// z-scores over participants that have the value; blank otherwise.
std::vector<std::string> zcol(std::span<const CovariateRow> rows,
                              std::optional<double> (*get)(const CovariateRow&)) {
  std::vector<std::string> out(rows.size());
  std::map<std::string, double> vals;
  std::vector<std::string> ids;
  for (const auto& r : rows)
    if (auto v = get(r)) {
      vals[r.participant_id] = *v;
      ids.push_back(r.participant_id);
    }
  if (ids.size() < 2) return out;
  double mean = 0, ss = 0;
  for (const auto& id : ids) mean += vals[id];
  mean /= static_cast<double>(ids.size());
  for (const auto& id : ids) ss += (vals[id] - mean) * (vals[id] - mean);
  double sd = std::sqrt(ss / static_cast<double>(ids.size() - 1));
  if (!(sd > 0)) return out;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (auto v = get(rows[i])) out[i] = format_double((*v - mean) / sd);
  return out;
}

}  // namespace

void write_covariates_csv(std::ostream& out, std::span<const CovariateRow> rows) {
  using Get = std::optional<double> (*)(const CovariateRow&);
  const Get getters[] = {
      [](const CovariateRow& r) -> std::optional<double> { return r.age; },
      [](const CovariateRow& r) -> std::optional<double> { return r.bmi; },
      [](const CovariateRow& r) { return r.sleep_h; },
      [](const CovariateRow& r) { return r.gv ? std::optional(r.gv->sd) : std::nullopt; },
      [](const CovariateRow& r) { return r.gv ? std::optional(r.gv->cv) : std::nullopt; },
      [](const CovariateRow& r) { return r.gv ? std::optional(r.gv->lbgi) : std::nullopt; },
      [](const CovariateRow& r) { return r.gv ? std::optional(r.gv->hbgi) : std::nullopt; },
  };
  std::vector<std::vector<std::string>> z;
  for (auto g : getters) z.push_back(zcol(rows, g));

  out << "participant_id,cohort,age_z,bmi_z,sleep_z,sd_z,cv_z,lbgi_z,hbgi_z,gender,age,"
         "driving_experience_y,hba1c_pct,bmi,sleep_h,sd,cv,lbgi,hbgi,cgm_n,cgm_n_raw,"
         "cgm_dropped_range,cgm_dropped_duplicate\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    std::vector<std::string> f{r.participant_id, std::string(to_string(r.cohort))};
    for (const auto& col : z) f.push_back(col[i]);
    f.push_back(std::string(to_string(r.gender)));
    f.push_back(format_double(r.age));
    f.push_back(format_double(r.driving_experience));
    f.push_back(format_double(r.hba1c));
    f.push_back(format_double(r.bmi));
    f.push_back(opt(r.sleep_h));
    for (auto g : {&GvMetrics::sd, &GvMetrics::cv, &GvMetrics::lbgi, &GvMetrics::hbgi})
      f.push_back(r.gv ? format_double((*r.gv).*g) : std::string());
    f.push_back(r.gv ? std::to_string(r.gv->n) : std::string());
    f.push_back(r.cgm_qc ? std::to_string(r.cgm_qc->n_raw) : std::string());
    f.push_back(r.cgm_qc ? std::to_string(r.cgm_qc->n_dropped_range) : std::string());
    f.push_back(r.cgm_qc ? std::to_string(r.cgm_qc->n_dropped_duplicate) : std::string());
    csv::write_row(out, f);
  }
}

std::vector<CovariateRow> read_covariates_csv(std::istream& in) {
  using namespace std::string_view_literals;
  static constexpr std::array cols{
      "participant_id"sv, "cohort"sv, "age_z"sv,  "bmi_z"sv,  "sleep_z"sv,
      "sd_z"sv,           "cv_z"sv,   "lbgi_z"sv, "hbgi_z"sv, "gender"sv,
      "age"sv,            "driving_experience_y"sv, "hba1c_pct"sv, "bmi"sv, "sleep_h"sv,
      "sd"sv,             "cv"sv,     "lbgi"sv,   "hbgi"sv,   "cgm_n"sv,
      "cgm_n_raw"sv,      "cgm_dropped_range"sv,  "cgm_dropped_duplicate"sv};
  csv::Reader reader(in);
  std::vector<std::string> fields;
  if (!reader.next(fields)) throw ParseError(0, "", "covariates.csv: missing header row");
  csv::Header header(fields, cols, "covariates.csv");
  std::vector<CovariateRow> out;
  std::size_t row = 0;
  while (reader.next(fields)) {
    if (fields.size() == 1 && fields[0].empty()) continue;
    csv::Row r(header, fields, ++row);
    CovariateRow c;
    c.participant_id = r.text("participant_id");
    c.cohort = r.text("cohort") == "T1DM" ? Cohort::T1DM : Cohort::Control;
    c.gender = r.text("gender") == "M" ? Gender::Male : Gender::Female;
    c.age = r.number("age");
    c.driving_experience = r.number("driving_experience_y");
    c.hba1c = r.number("hba1c_pct");
    c.bmi = r.number("bmi");
    if (!r.text("sleep_h").empty()) c.sleep_h = r.number("sleep_h");
    if (!r.text("sd").empty()) {
      GvMetrics g;
      g.sd = r.number("sd");
      g.cv = r.number("cv");
      g.lbgi = r.number("lbgi");
      g.hbgi = r.number("hbgi");
      g.n = static_cast<std::size_t>(r.integer("cgm_n"));
      c.gv = g;
      QcReport q;
      q.n_raw = static_cast<std::size_t>(r.integer("cgm_n_raw"));
      q.n_dropped_range = static_cast<std::size_t>(r.integer("cgm_dropped_range"));
      q.n_dropped_duplicate = static_cast<std::size_t>(r.integer("cgm_dropped_duplicate"));
      c.cgm_qc = q;
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace stopsafe::phys
