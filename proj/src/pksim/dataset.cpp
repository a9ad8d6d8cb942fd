#include "pkode/pksim/dataset.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "pkode/numcore/errors.hpp"

namespace pkode::pksim {

using nlohmann::json;

namespace {

json eta_json(const Eta& eta) { return json(std::vector<double>(eta.begin(), eta.end())); }

Eta eta_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != kEtaSize) throw ParseError("eta must have 5 entries");
  Eta eta{};
  std::copy(v.begin(), v.end(), eta.begin());
  return eta;
}

json obs_json(const ObservationSet& o) { return {{"times", o.times}, {"values", o.values}}; }

ObservationSet obs_from(const json& j) {
  ObservationSet o;
  o.times = j.at("times").get<std::vector<double>>();
  o.values = j.at("values").get<std::vector<double>>();
  if (o.times.size() != o.values.size()) throw ParseError("times and values differ in length");
  return o;
}

json solver_json(const numcore::SolverConfig& s) {
  return {{"method", numcore::to_string(s.method)},
          {"fixed_step", s.fixed_step},
          {"rel_tol", s.rel_tol},
          {"abs_tol", s.abs_tol},
          {"max_steps", s.max_steps}};
}

numcore::SolverConfig solver_from(const json& j) {
  numcore::SolverConfig s;
  s.method = numcore::parse_solver_method(j.at("method").get<std::string>());
  s.fixed_step = j.at("fixed_step").get<double>();
  s.rel_tol = j.at("rel_tol").get<double>();
  s.abs_tol = j.at("abs_tol").get<double>();
  s.max_steps = j.at("max_steps").get<std::size_t>();
  return s;
}

}  // namespace

json to_json(const PopulationParams& p) {
  return {{"theta_ktr", p.theta_ktr},       {"theta_cl", p.theta_cl},   {"theta_st_ktr", p.theta_st_ktr},
          {"theta_hct", p.theta_hct},       {"theta_cyp_cl", p.theta_cyp_cl},
          {"theta_vc", p.theta_vc},         {"theta_st_vc", p.theta_st_vc},
          {"theta_q", p.theta_q},           {"theta_vp", p.theta_vp},   {"omega", eta_json(p.omega)},
          {"sigma_prop", p.sigma_prop},     {"sigma_add", p.sigma_add}, {"km", p.km},
          {"vmax", p.vmax},                 {"covariate_reading", to_string(p.reading)}};
}

PopulationParams population_from_json(const json& j) {
  PopulationParams p;
  p.theta_ktr = j.at("theta_ktr").get<double>();
  p.theta_cl = j.at("theta_cl").get<double>();
  p.theta_st_ktr = j.at("theta_st_ktr").get<double>();
  p.theta_hct = j.at("theta_hct").get<double>();
  p.theta_cyp_cl = j.at("theta_cyp_cl").get<double>();
  p.theta_vc = j.at("theta_vc").get<double>();
  p.theta_st_vc = j.at("theta_st_vc").get<double>();
  p.theta_q = j.at("theta_q").get<double>();
  p.theta_vp = j.at("theta_vp").get<double>();
  p.omega = eta_from(j.at("omega"));
  p.sigma_prop = j.at("sigma_prop").get<double>();
  p.sigma_add = j.at("sigma_add").get<double>();
  p.km = j.at("km").get<double>();
  p.vmax = j.at("vmax").get<double>();
  p.reading = parse_covariate_reading(j.at("covariate_reading").get<std::string>());
  return p;
}

json to_json(const SimulationConfig& c) {
  json cov = {{"p_cyp", c.covariates.p_cyp},         {"p_st", c.covariates.p_st},
              {"dose_min", c.covariates.dose_min},   {"dose_max", c.covariates.dose_max},
              {"dose_step", c.covariates.dose_step}, {"hct_mean", c.covariates.hct_mean},
              {"hct_sd", c.covariates.hct_sd},       {"hct_min", c.covariates.hct_min},
              {"hct_max", c.covariates.hct_max},
              {"fixed_hct", c.covariates.fixed_hct ? json(*c.covariates.fixed_hct) : json(nullptr)}};
  return {{"scenario", to_string(c.scenario)},
          {"seed", c.seed},
          {"population", to_json(c.pop)},
          {"covariates", cov},
          {"dosing",
           {{"loading_doses", c.dosing.loading_doses},
            {"interval", c.dosing.interval},
            {"grid_step", c.dosing.grid_step}}},
          {"solver", solver_json(c.solver)},
          {"rich_times", c.rich_times},
          {"sparse_times", c.sparse_times},
          {"residual_error", c.residual_error}};
}

SimulationConfig simulation_config_from_json(const json& j) {
  SimulationConfig c;
  c.scenario = parse_scenario(j.at("scenario").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.pop = population_from_json(j.at("population"));
  const json& cov = j.at("covariates");
  c.covariates.p_cyp = cov.at("p_cyp").get<double>();
  c.covariates.p_st = cov.at("p_st").get<double>();
  c.covariates.dose_min = cov.at("dose_min").get<double>();
  c.covariates.dose_max = cov.at("dose_max").get<double>();
  c.covariates.dose_step = cov.at("dose_step").get<double>();
  c.covariates.hct_mean = cov.at("hct_mean").get<double>();
  c.covariates.hct_sd = cov.at("hct_sd").get<double>();
  c.covariates.hct_min = cov.at("hct_min").get<double>();
  c.covariates.hct_max = cov.at("hct_max").get<double>();
  if (!cov.at("fixed_hct").is_null()) c.covariates.fixed_hct = cov.at("fixed_hct").get<double>();
  const json& d = j.at("dosing");
  c.dosing.loading_doses = d.at("loading_doses").get<int>();
  c.dosing.interval = d.at("interval").get<double>();
  c.dosing.grid_step = d.at("grid_step").get<double>();
  c.solver = solver_from(j.at("solver"));
  c.rich_times = j.at("rich_times").get<std::vector<double>>();
  c.sparse_times = j.at("sparse_times").get<std::vector<double>>();
  c.residual_error = j.at("residual_error").get<bool>();
  return c;
}

json to_json(const PatientRecord& r) {
  const auto& t = r.truth;
  return {{"id", r.id},
          {"covariates",
           {{"cyp", r.covariates.cyp},
            {"st", r.covariates.st},
            {"dose", r.covariates.dose},
            {"hct", r.covariates.hct}}},
          {"truth",
           {{"ktr", t.ktr},
            {"cl", t.cl},
            {"vc", t.vc},
            {"q", t.q},
            {"vp", t.vp},
            {"vmax", t.vmax},
            {"km", t.km},
            {"eta", eta_json(t.eta)}}},
          {"dense_curve", {{"times", r.dense_times}, {"conc", r.dense_conc}}},
          {"true_auc", r.true_auc},
          {"rich_obs", obs_json(r.rich)},
          {"sparse_obs", obs_json(r.sparse)},
          {"clipped", r.clipped}};
}

PatientRecord record_from_json(const json& j) {
  PatientRecord r;
  r.id = j.at("id").get<std::uint64_t>();
  const json& c = j.at("covariates");
  r.covariates.cyp = c.at("cyp").get<int>();
  r.covariates.st = c.at("st").get<int>();
  r.covariates.dose = c.at("dose").get<double>();
  r.covariates.hct = c.at("hct").get<double>();
  const json& t = j.at("truth");
  r.truth.ktr = t.at("ktr").get<double>();
  r.truth.cl = t.at("cl").get<double>();
  r.truth.vc = t.at("vc").get<double>();
  r.truth.q = t.at("q").get<double>();
  r.truth.vp = t.at("vp").get<double>();
  r.truth.vmax = t.at("vmax").get<double>();
  r.truth.km = t.at("km").get<double>();
  r.truth.eta = eta_from(t.at("eta"));
  const json& dc = j.at("dense_curve");
  r.dense_times = dc.at("times").get<std::vector<double>>();
  r.dense_conc = dc.at("conc").get<std::vector<double>>();
  if (r.dense_times.size() != r.dense_conc.size()) throw ParseError("dense_curve times/conc differ in length");
  r.true_auc = j.at("true_auc").get<double>();
  r.rich = obs_from(j.at("rich_obs"));
  r.sparse = obs_from(j.at("sparse_obs"));
  r.clipped = j.at("clipped").get<std::size_t>();
  return r;
}

void write_dataset(std::ostream& out, const Dataset& ds) {
  json header = {{"format", "pkode-dataset"},
                 {"schema_version", kDatasetSchemaVersion},
                 {"generator", kGeneratorVersion},
                 {"n", ds.records.size()},
                 {"clipped_observations", count_clipped(ds.records)},
                 {"config", to_json(ds.config)},
                 {"provenance", ds.provenance}};
  out << header.dump() << '\n';
  for (const auto& r : ds.records) out << to_json(r).dump() << '\n';
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  write_dataset(out, ds);
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

Dataset read_dataset(std::istream& in) {
  Dataset ds;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("dataset: empty input, missing header line");
  std::size_t declared = 0;
  try {
    const json header = json::parse(line);
    if (header.at("format").get<std::string>() != "pkode-dataset") throw ParseError("not a pkode dataset");
    const int version = header.at("schema_version").get<int>();
    if (version != kDatasetSchemaVersion) {
      throw ParseError("dataset schema version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kDatasetSchemaVersion) + ")");
    }
    declared = header.at("n").get<std::size_t>();
    ds.config = simulation_config_from_json(header.at("config"));
    if (header.contains("provenance")) ds.provenance = header.at("provenance");
  } catch (const json::exception& e) {
    throw ParseError(std::string("dataset header (line 1): ") + e.what());
  } catch (const ContractViolation& e) {
    throw ParseError(std::string("dataset header (line 1): ") + e.what());
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::size_t index = ds.records.size();
    try {
      ds.records.push_back(record_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw ParseError("dataset record " + std::to_string(index) + " (line " + std::to_string(line_no) +
                       "): " + e.what());
    }
  }
  if (ds.records.size() != declared) {
    throw ParseError("dataset truncated: header declares " + std::to_string(declared) + " records, found " +
                     std::to_string(ds.records.size()));
  }
  return ds;
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset '" + path.string() + "'");
  return read_dataset(in);
}

}  // namespace pkode::pksim
