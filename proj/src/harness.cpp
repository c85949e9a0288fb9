#include "rnddpc/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "rnddpc/rng.hpp"

namespace rnddpc::harness {

Config Config::defaults() {
  Config c;
  auto& kv = c.kv_;
  kv["seed"] = "1";

  kv["platoon.n"] = "3";
  kv["platoon.ts"] = "0.05";
  kv["platoon.headway"] = "1.2";
  kv["ovm.k1"] = "0.6";
  kv["ovm.k2"] = "0.9";
  kv["ovm.v_max"] = "38";
  kv["ovm.s_max"] = "35";
  kv["ovm.s_min"] = "5";
  kv["bounds.eps_max"] = "2";
  kv["bounds.theta_max"] = "3";
  kv["bounds.omega_max"] = "0.03";

  kv["collect.T"] = "4000";
  kv["collect.v_star"] = "19";
  kv["collect.profile"] = "levels";  // levels | uniform
  kv["collect.eps_low"] = "6";
  kv["collect.eps_high"] = "21";
  kv["collect.hold"] = "2";
  kv["collect.jitter"] = "1";
  kv["collect.theta_amp"] = "2";
  kv["collect.u_dither"] = "0.5";
  kv["collect.cav_policy"] = "headway";  // headway | ovm

  kv["train.nz"] = "0";  // 0 selects 4n
  kv["train.batch"] = "128";
  kv["train.lr"] = "0.001";
  kv["train.epochs"] = "200";
  kv["train.patience"] = "20";
  kv["train.alpha1"] = "1";
  kv["train.alpha2"] = "10";
  kv["train.alpha3"] = "3";
  kv["train.alpha4"] = "0.0001";
  kv["train.split_train"] = "0.7";
  kv["train.split_test"] = "0.2";
  kv["train.split_valid"] = "0.1";
  kv["train.hidden"] = "32,32,64,32";
  kv["train.refit_ls"] = "true";

  kv["sets.T_set"] = "2000";
  kv["sets.sigma_coverage"] = "0.992";  // 0 switches to the fixed bounds below
  kv["sets.rho_coverage"] = "0.984";
  kv["sets.sigma_bound"] = "0.3";
  kv["sets.rho_bound"] = "0.3";
  kv["sets.matzono_order"] = "0";  // generator budget = order * rows, 0 keeps the factored form

  kv["reach.zono_order"] = "10";

  kv["ctrl.N"] = "5";
  kv["ctrl.N_mpc"] = "10";
  kv["ctrl.rho_s"] = "1";
  kv["ctrl.rho_v"] = "1";
  kv["ctrl.xi"] = "0.6";
  kv["ctrl.R"] = "0.1";
  kv["ctrl.x_tilde_s"] = "7";
  kv["ctrl.x_tilde_v"] = "7";
  kv["ctrl.u_max"] = "5";
  kv["ctrl.tube_budget"] = "0";

  kv["qp.tol_feas"] = "1e-6";
  kv["qp.tol_opt"] = "1e-6";
  kv["qp.max_iter"] = "20000";

  kv["scenario.name"] = "emergency";
  kv["scenario.attack"] = "random";  // none | random | delay
  kv["scenario.cycle"] = "";
  kv["scenario.constant_v"] = "19";
  kv["scenario.duration"] = "30";
  return c;
}

Config Config::from_file(const std::string& path) {
  Config cfg = defaults();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void Config::set(const std::string& key, const std::string& value) {
  if (defaults().kv_.count(key) == 0) {
    throw std::runtime_error("unknown config key '" + key + "'");
  }
  kv_[key] = value;
}

std::string Config::get_str(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) throw std::runtime_error("missing config key '" + key + "'");
  return it->second;
}

double Config::get_num(const std::string& key) const {
  try {
    return std::stod(get_str(key));
  } catch (const std::invalid_argument&) {
    throw std::runtime_error("config key '" + key + "' is not numeric");
  }
}

int Config::get_int(const std::string& key) const {
  return static_cast<int>(std::llround(get_num(key)));
}

bool Config::get_bool(const std::string& key) const {
  const std::string v = get_str(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::runtime_error("config key '" + key + "' is not boolean");
}

std::vector<int> Config::get_int_list(const std::string& key) const {
  std::vector<int> out;
  std::istringstream ss(get_str(key));
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty()) out.push_back(std::stoi(cell));
  }
  return out;
}

std::string Config::dump() const {
  std::ostringstream os;
  for (const auto& [k, v] : kv_) os << k << " = " << v << "\n";
  return os.str();
}

std::string Config::hash() const {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(dump());
  return os.str();
}

platoon::PlatoonConfig platoon_config(const Config& cfg) {
  platoon::PlatoonConfig pc;
  pc.n = cfg.get_int("platoon.n");
  pc.ts = cfg.get_num("platoon.ts");
  pc.headway = cfg.get_num("platoon.headway");
  pc.ovm.k1 = cfg.get_num("ovm.k1");
  pc.ovm.k2 = cfg.get_num("ovm.k2");
  pc.ovm.v_max = cfg.get_num("ovm.v_max");
  pc.ovm.s_max = cfg.get_num("ovm.s_max");
  pc.ovm.s_min = cfg.get_num("ovm.s_min");
  pc.eps_max = cfg.get_num("bounds.eps_max");
  pc.theta_max = cfg.get_num("bounds.theta_max");
  pc.omega_max = cfg.get_num("bounds.omega_max");
  if (pc.n < 2) throw std::runtime_error("platoon.n must be >= 2");
  if (pc.ts <= 0) throw std::runtime_error("platoon.ts must be positive");
  return pc;
}

platoon::CollectOptions collect_options(const Config& cfg) {
  platoon::CollectOptions opts;
  opts.v_star = cfg.get_num("collect.v_star");
  const std::string profile = cfg.get_str("collect.profile");
  if (profile == "levels") {
    opts.profile = platoon::CollectOptions::Profile::levels;
  } else if (profile == "uniform") {
    opts.profile = platoon::CollectOptions::Profile::uniform;
  } else {
    throw std::runtime_error("collect.profile must be levels or uniform");
  }
  opts.eps_low = cfg.get_num("collect.eps_low");
  opts.eps_high = cfg.get_num("collect.eps_high");
  opts.hold_s = cfg.get_num("collect.hold");
  opts.jitter = cfg.get_num("collect.jitter");
  opts.theta_amp = cfg.get_num("collect.theta_amp");
  opts.noise_amp = cfg.get_num("bounds.omega_max");
  opts.u_dither = cfg.get_num("collect.u_dither");
  const std::string policy = cfg.get_str("collect.cav_policy");
  if (policy == "headway") {
    opts.cav_policy = platoon::CollectOptions::CavPolicy::headway;
  } else if (policy == "ovm") {
    opts.cav_policy = platoon::CollectOptions::CavPolicy::ovm;
  } else {
    throw std::runtime_error("collect.cav_policy must be headway or ovm");
  }
  return opts;
}

lifting::TrainConfig train_config(const Config& cfg, std::uint64_t seed) {
  lifting::TrainConfig tc;
  tc.nz = cfg.get_int("train.nz");
  if (tc.nz == 0) tc.nz = 4 * cfg.get_int("platoon.n");
  tc.batch = cfg.get_int("train.batch");
  tc.lr = cfg.get_num("train.lr");
  tc.epochs = cfg.get_int("train.epochs");
  tc.patience = cfg.get_int("train.patience");
  tc.alpha1 = cfg.get_num("train.alpha1");
  tc.alpha2 = cfg.get_num("train.alpha2");
  tc.alpha3 = cfg.get_num("train.alpha3");
  tc.alpha4 = cfg.get_num("train.alpha4");
  tc.split_train = cfg.get_num("train.split_train");
  tc.split_test = cfg.get_num("train.split_test");
  tc.split_valid = cfg.get_num("train.split_valid");
  tc.hidden = cfg.get_int_list("train.hidden");
  tc.refit_ls = cfg.get_bool("train.refit_ls");
  tc.seed = seed;
  return tc;
}

control::ControllerConfig controller_config(const Config& cfg, const std::string& controller) {
  control::ControllerConfig cc;
  const bool baseline_mpc = controller == "kmpc" || controller == "lmpc";
  cc.N = cfg.get_int(baseline_mpc ? "ctrl.N_mpc" : "ctrl.N");
  cc.rho_s = cfg.get_num("ctrl.rho_s");
  cc.rho_v = cfg.get_num("ctrl.rho_v");
  cc.xi = cfg.get_num("ctrl.xi");
  cc.r_u = cfg.get_num("ctrl.R");
  cc.x_tilde_s = cfg.get_num("ctrl.x_tilde_s");
  cc.x_tilde_v = cfg.get_num("ctrl.x_tilde_v");
  cc.u_max = cfg.get_num("ctrl.u_max");
  cc.qp_tol_feas = cfg.get_num("qp.tol_feas");
  cc.qp_tol_opt = cfg.get_num("qp.tol_opt");
  cc.qp_max_iter = cfg.get_int("qp.max_iter");
  cc.tube_gen_budget = cfg.get_int("ctrl.tube_budget");
  return cc;
}

MetricsReport compute_metrics(const control::TrajectoryLog& log,
                              const control::ControllerConfig& cc) {
  if (log.steps() == 0) throw std::invalid_argument("compute_metrics: empty log");
  const int n = log.n;
  const int Ns = log.steps();
  MetricsReport rep;
  rep.controller = log.controller;
  rep.per_vehicle_v = Eigen::VectorXd::Zero(n);
  rep.per_vehicle_s = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd Q = control::tracking_weight(n, cc);

  for (int k = 0; k < Ns; ++k) {
    Eigen::VectorXd err = log.X.col(k) - log.R.col(k);
    for (int i = 0; i < n; ++i) {
      rep.per_vehicle_s(i) += std::abs(err(2 * i));
      rep.per_vehicle_v(i) += std::abs(err(2 * i + 1));
    }
    const double u = log.rows[static_cast<std::size_t>(k)].u;
    rep.R_c += err.dot(Q * err) + cc.r_u * u * u;
    rep.R_t += log.rows[static_cast<std::size_t>(k)].solve_ms;
  }
  rep.per_vehicle_v /= Ns;
  rep.per_vehicle_s /= Ns;
  rep.R_v = rep.per_vehicle_v.mean();
  rep.R_s = rep.per_vehicle_s.mean();
  rep.R_c /= Ns;
  rep.R_t /= Ns;
  rep.feasible_fraction = log.feasible_fraction();
  return rep;
}

MetricsReport aggregate(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate: no reports");
  MetricsReport out = reports.front();
  for (std::size_t i = 1; i < reports.size(); ++i) {
    const auto& r = reports[i];
    if (r.controller != out.controller) {
      throw std::invalid_argument("aggregate: mixed controllers");
    }
    out.R_v += r.R_v;
    out.R_s += r.R_s;
    out.R_c += r.R_c;
    out.R_t += r.R_t;
    out.per_vehicle_v += r.per_vehicle_v;
    out.per_vehicle_s += r.per_vehicle_s;
    out.feasible_fraction += r.feasible_fraction;
  }
  const double m = static_cast<double>(reports.size());
  out.R_v /= m;
  out.R_s /= m;
  out.R_c /= m;
  out.R_t /= m;
  out.per_vehicle_v /= m;
  out.per_vehicle_s /= m;
  out.feasible_fraction /= m;
  out.runs = static_cast<int>(reports.size());
  return out;
}

void write_metrics_csv(const std::vector<MetricsReport>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "controller,runs,R_v,R_s,R_c,R_t_ms,feasible_fraction\n";
  out.precision(10);
  for (const auto& r : rows) {
    out << r.controller << "," << r.runs << "," << r.R_v << "," << r.R_s << "," << r.R_c << ","
        << r.R_t << "," << r.feasible_fraction << "\n";
  }
}

void write_metrics_markdown(const std::vector<MetricsReport>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "| controller | runs | R_v | R_s | R_c | R_t (ms) | feasible |\n";
  out << "|---|---|---|---|---|---|---|\n";
  out << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    out << "| " << r.controller << " | " << r.runs << " | " << r.R_v << " | " << r.R_s << " | "
        << r.R_c << " | " << r.R_t << " | " << r.feasible_fraction << " |\n";
  }
}

}  // namespace rnddpc::harness
