#include "pkode/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "pkode/numcore/errors.hpp"

namespace pkode::cli {

namespace {

struct Field {
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string format_double(double v) {
  char buf[32];
  // Shortest form that parses back to the same double.
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw ParseError("configuration key '" + std::string(key) + "': cannot read '" + std::string(value) + "' as " +
                   expected);
}

double parse_double(std::string_view key, std::string_view text) {
  const std::string s(text);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) bad_value(key, text, "a number");
  return v;
}

template <class Int>
Int parse_int(std::string_view key, std::string_view text) {
  Int v{};
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (text.empty() || ec != std::errc() || ptr != last) bad_value(key, text, "an integer");
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  bad_value(key, text, "a boolean (true/false)");
}

std::vector<std::size_t> parse_size_list(std::string_view key, std::string_view text) {
  std::vector<std::size_t> out;
  std::string item;
  std::stringstream ss{std::string(text)};
  while (std::getline(ss, item, ',')) out.push_back(parse_int<std::size_t>(key, trim(item)));
  if (out.empty()) bad_value(key, text, "a comma-separated list of sizes");
  return out;
}

template <class T>
Field number(T RunConfig::*member) {
  return {[member](RunConfig& c, std::string_view v) {
            if constexpr (std::is_floating_point_v<T>) {
              c.*member = parse_double("", v);
            } else {
              c.*member = parse_int<T>("", v);
            }
          },
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          }};
}

// Accessor-based fields for nested members.
template <class T, class Access>
Field nested(Access access) {
  return {[access](RunConfig& c, std::string_view v) {
            T& ref = access(c);
            if constexpr (std::is_same_v<T, bool>) {
              ref = parse_bool("", v);
            } else if constexpr (std::is_floating_point_v<T>) {
              ref = parse_double("", v);
            } else {
              ref = parse_int<T>("", v);
            }
          },
          [access](const RunConfig& c) {
            T& ref = access(const_cast<RunConfig&>(c));
            if constexpr (std::is_same_v<T, bool>) {
              return std::string(ref ? "true" : "false");
            } else if constexpr (std::is_floating_point_v<T>) {
              return format_double(ref);
            } else {
              return std::to_string(ref);
            }
          }};
}

#define PKODE_FIELD(type, expr) nested<type>([](RunConfig& c) -> type& { return c.expr; })

const std::map<std::string, Field, std::less<>>& fields() {
  static const std::map<std::string, Field, std::less<>> table = [] {
    std::map<std::string, Field, std::less<>> t;
    t["seed"] = number(&RunConfig::seed);
    t["n"] = number(&RunConfig::n);
    t["scenario"] = {[](RunConfig& c, std::string_view v) { c.simulation.scenario = pksim::parse_scenario(v); },
                     [](const RunConfig& c) { return std::to_string(pksim::scenario_number(c.simulation.scenario)); }};
    t["covariate_reading"] = {
        [](RunConfig& c, std::string_view v) { c.simulation.pop.reading = pksim::parse_covariate_reading(v); },
        [](const RunConfig& c) { return pksim::to_string(c.simulation.pop.reading); }};
    t["residual_error"] = PKODE_FIELD(bool, simulation.residual_error);
    t["loading_doses"] = PKODE_FIELD(int, simulation.dosing.loading_doses);
    t["dosing_interval"] = PKODE_FIELD(double, simulation.dosing.interval);
    t["grid_step"] = PKODE_FIELD(double, simulation.dosing.grid_step);
    t["sim_rel_tol"] = PKODE_FIELD(double, simulation.solver.rel_tol);
    t["sim_abs_tol"] = PKODE_FIELD(double, simulation.solver.abs_tol);
    t["p_cyp"] = PKODE_FIELD(double, simulation.covariates.p_cyp);
    t["p_st"] = PKODE_FIELD(double, simulation.covariates.p_st);
    t["dose_min"] = PKODE_FIELD(double, simulation.covariates.dose_min);
    t["dose_max"] = PKODE_FIELD(double, simulation.covariates.dose_max);
    t["dose_step"] = PKODE_FIELD(double, simulation.covariates.dose_step);
    t["hct_mean"] = PKODE_FIELD(double, simulation.covariates.hct_mean);
    t["hct_sd"] = PKODE_FIELD(double, simulation.covariates.hct_sd);
    t["km"] = PKODE_FIELD(double, simulation.pop.km);
    t["vmax"] = PKODE_FIELD(double, simulation.pop.vmax);
    t["rich_times"] = {[](RunConfig& c, std::string_view v) {
                         std::vector<double> out;
                         std::string item;
                         std::stringstream ss{std::string(v)};
                         while (std::getline(ss, item, ',')) out.push_back(parse_double("rich_times", trim(item)));
                         c.simulation.rich_times = out;
                       },
                       [](const RunConfig& c) {
                         std::string s;
                         for (double t : c.simulation.rich_times) s += (s.empty() ? "" : ",") + format_double(t);
                         return s;
                       }};
    t["sparse_times"] = {[](RunConfig& c, std::string_view v) {
                           std::vector<double> out;
                           std::string item;
                           std::stringstream ss{std::string(v)};
                           while (std::getline(ss, item, ',')) {
                             out.push_back(parse_double("sparse_times", trim(item)));
                           }
                           c.simulation.sparse_times = out;
                         },
                         [](const RunConfig& c) {
                           std::string s;
                           for (double t : c.simulation.sparse_times) s += (s.empty() ? "" : ",") + format_double(t);
                           return s;
                         }};

    t["latent_dim"] = PKODE_FIELD(Eigen::Index, model.latent_dim);
    t["gmm_components"] = PKODE_FIELD(Eigen::Index, model.gmm_components);
    t["gru_hidden"] = PKODE_FIELD(Eigen::Index, model.gru_hidden);
    t["dynamics_hidden"] = PKODE_FIELD(Eigen::Index, model.dynamics_hidden);
    t["encoder_ode_hidden"] = PKODE_FIELD(Eigen::Index, model.encoder_ode_hidden);
    t["covariate_hidden"] = PKODE_FIELD(Eigen::Index, model.covariate_hidden);
    t["time_input"] = PKODE_FIELD(bool, model.time_input);
    t["encoder_step"] = PKODE_FIELD(double, model.encoder_step);
    t["train_step_hours"] = PKODE_FIELD(double, model.train_step_hours);
    t["predict_rel_tol"] = PKODE_FIELD(double, model.predict_solver.rel_tol);
    t["predict_abs_tol"] = PKODE_FIELD(double, model.predict_solver.abs_tol);
    t["sigma_obs_init"] = PKODE_FIELD(double, model.sigma_obs_init);

    t["epochs"] = PKODE_FIELD(int, train.epochs);
    t["batch_size"] = PKODE_FIELD(int, train.batch_size);
    t["learning_rate"] = PKODE_FIELD(double, train.learning_rate);
    t["final_lr_fraction"] = PKODE_FIELD(double, train.final_lr_fraction);
    t["kl_anneal_fraction"] = PKODE_FIELD(double, train.kl_anneal_fraction);
    t["mc_samples"] = PKODE_FIELD(int, train.mc_samples);
    t["grad_clip"] = PKODE_FIELD(double, train.grad_clip);
    t["adam_beta1"] = PKODE_FIELD(double, train.adam_beta1);
    t["adam_beta2"] = PKODE_FIELD(double, train.adam_beta2);
    t["adam_eps"] = PKODE_FIELD(double, train.adam_eps);
    t["posterior_samples"] = number(&RunConfig::posterior_samples);

    t["mapbe_starts"] = PKODE_FIELD(int, estimator.starts);
    t["mapbe_tol_diameter"] = PKODE_FIELD(double, estimator.tol_diameter);
    t["mapbe_max_evaluations"] = PKODE_FIELD(std::size_t, estimator.max_evaluations);
    t["mapbe_initial_step"] = PKODE_FIELD(double, estimator.initial_step);

    t["runs"] = number(&RunConfig::runs);
    t["n_train"] = number(&RunConfig::n_train);
    t["n_test"] = number(&RunConfig::n_test);
    t["sizes"] = {[](RunConfig& c, std::string_view v) { c.sizes = parse_size_list("sizes", v); },
                  [](const RunConfig& c) {
                    std::string s;
                    for (auto v : c.sizes) s += (s.empty() ? "" : ",") + std::to_string(v);
                    return s;
                  }};
    t["repeats"] = number(&RunConfig::repeats);
    return t;
  }();
  return table;
}

#undef PKODE_FIELD

const Field& field(std::string_view key) {
  const auto& t = fields();
  auto it = t.find(key);
  if (it == t.end()) {
    throw ParseError("unknown configuration key '" + std::string(key) + "' (did you mean '" + nearest_key(key) +
                     "'?)");
  }
  return it->second;
}

}  // namespace

void RunConfig::validate() const {
  simulation.validate();
  model.validate();
  train.validate();
  estimator.validate();
  require(n >= 1, "config: n must be >= 1");
  require(posterior_samples >= 0, "config: posterior_samples must be >= 0");
  require(runs >= 1, "config: runs must be >= 1");
  require(n_train >= 1 && n_test >= 1, "config: n_train and n_test must be >= 1");
  require(repeats >= 1, "config: repeats must be >= 1");
  require(!sizes.empty(), "config: sizes must not be empty");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : fields()) keys.push_back(k);
  return keys;
}

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string nearest_key(std::string_view key) {
  std::string best;
  std::size_t best_d = static_cast<std::size_t>(-1);
  for (const auto& [k, _] : fields()) {
    const auto d = edit_distance(key, k);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

void set_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  const Field& f = field(key);
  try {
    f.set(cfg, value);
  } catch (const ParseError& e) {
    // Re-throw with the key filled in.
    std::string msg = e.what();
    const std::string marker = "configuration key ''";
    if (msg.rfind(marker, 0) == 0) msg = "configuration key '" + std::string(key) + "'" + msg.substr(marker.size());
    throw ParseError(msg);
  } catch (const std::exception& e) {
    throw ParseError("configuration key '" + std::string(key) + "': " + e.what());
  }
}

std::string get_value(const RunConfig& cfg, std::string_view key) { return field(key).get(cfg); }

void apply_config(RunConfig& cfg, std::string_view text) {
  std::map<std::string, std::size_t, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string content = trim(line);
    if (content.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw ParseError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(content).substr(0, eq));
    const std::string value = trim(std::string_view(content).substr(eq + 1));
    if (key.empty()) throw ParseError("config line " + std::to_string(line_no) + ": missing key");
    if (auto it = seen.find(key); it != seen.end()) {
      throw ParseError("config line " + std::to_string(line_no) + ": key '" + key + "' already set on line " +
                       std::to_string(it->second));
    }
    seen.emplace(key, line_no);
    try {
      set_value(cfg, key, value);
    } catch (const ParseError& e) {
      throw ParseError("config line " + std::to_string(line_no) + ": " + e.what());
    }
    if (end == text.size()) break;
  }
}

RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  apply_config(cfg, text);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string emit_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(cfg) + "\n";
  return out;
}

nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, f] : fields()) j[k] = f.get(cfg);
  return j;
}

}  // namespace pkode::cli
