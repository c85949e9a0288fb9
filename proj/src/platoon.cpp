#include "rnddpc/platoon.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "rnddpc/serialize.hpp"

namespace rnddpc::platoon {

double ovm_desired_velocity(double s, const OVMParams& p) {
  if (s <= p.s_min) return 0.0;
  if (s >= p.s_max) return p.v_max;
  return 0.5 * p.v_max * (1.0 - std::cos(M_PI * (s - p.s_min) / (p.s_max - p.s_min)));
}

double ovm_inverse_velocity(double v, const OVMParams& p) {
  if (v <= 0.0 || v >= p.v_max) {
    throw std::invalid_argument("ovm_inverse_velocity: v must lie in (0, v_max)");
  }
  return p.s_min + (p.s_max - p.s_min) / M_PI * std::acos(1.0 - 2.0 * v / p.v_max);
}

double ovm_accel(double s, double v, double v_prev, const OVMParams& p) {
  return p.k1 * (ovm_desired_velocity(s, p) - v) + p.k2 * (v_prev - v);
}

PlatoonState step_platoon(const PlatoonState& state, double u_cav, double eps, double attack,
                          const Eigen::VectorXd& noise, const PlatoonConfig& cfg) {
  const int n = cfg.n;
  if (state.x.size() != 2 * n) throw std::invalid_argument("step_platoon: state dim mismatch");
  if (noise.size() != 2 * n) throw std::invalid_argument("step_platoon: noise dim mismatch");

  Eigen::VectorXd next(2 * n);
  for (int i = 0; i < n; ++i) {
    const double s = state.x(2 * i);
    const double v = state.x(2 * i + 1);
    const double v_prev = i == 0 ? eps : state.x(2 * (i - 1) + 1);
    next(2 * i) = s + cfg.ts * (v_prev - v);
    if (i == 0) {
      next(2 * i + 1) = v + cfg.ts * (u_cav + attack);
    } else {
      next(2 * i + 1) = v + cfg.ts * ovm_accel(s, v, v_prev, cfg.ovm);
    }
  }
  next += noise;
  for (int i = 0; i < n; ++i) next(2 * i + 1) = std::max(0.0, next(2 * i + 1));
  return PlatoonState{std::move(next), eps};
}

Eigen::VectorXd desired_state(double v_star, const PlatoonConfig& cfg) {
  if (v_star <= 0.0 || v_star >= cfg.ovm.v_max) {
    throw std::invalid_argument("desired_state: v_star must lie in (0, v_max)");
  }
  Eigen::VectorXd r(2 * cfg.n);
  const double s_hdv = ovm_inverse_velocity(v_star, cfg.ovm);
  for (int i = 0; i < cfg.n; ++i) {
    r(2 * i) = i == 0 ? cfg.headway * v_star + cfg.ovm.s_min : s_hdv;
    r(2 * i + 1) = v_star;
  }
  return r;
}

PlatoonState ovm_equilibrium_state(double v_star, const PlatoonConfig& cfg) {
  const double s = ovm_inverse_velocity(v_star, cfg.ovm);
  Eigen::VectorXd x(2 * cfg.n);
  for (int i = 0; i < cfg.n; ++i) {
    x(2 * i) = s;
    x(2 * i + 1) = v_star;
  }
  return PlatoonState{std::move(x), v_star};
}

double headway_desired_velocity(double s, double headway, const OVMParams& p) {
  return std::clamp((s - p.s_min) / headway, 0.0, p.v_max);
}

double cav_policy_accel(CollectOptions::CavPolicy policy, double s, double v, double v_prev,
                        double headway, const OVMParams& p) {
  if (policy == CollectOptions::CavPolicy::ovm) return ovm_accel(s, v, v_prev, p);
  return p.k1 * (headway_desired_velocity(s, headway, p) - v) + p.k2 * (v_prev - v);
}

DataLog collect_data(const PlatoonConfig& cfg, int T, const CollectOptions& opts,
                     std::uint64_t master_seed) {
  if (T < 1) throw std::invalid_argument("collect_data: T must be >= 1");
  Rng rng_eps(master_seed, "collect/eps");
  Rng rng_theta(master_seed, "collect/theta");
  Rng rng_noise(master_seed, "collect/noise");
  Rng rng_dither(master_seed, "collect/dither");

  DataLog log;
  log.seed = master_seed;
  log.n = cfg.n;
  log.ts = cfg.ts;
  log.U.resize(T + 1);
  log.E.resize(T + 1);
  log.F.resize(T + 1);
  log.X.resize(2 * cfg.n, T + 1);

  PlatoonState state = opts.cav_policy == CollectOptions::CavPolicy::headway
                           ? PlatoonState{desired_state(opts.v_star, cfg), opts.v_star}
                           : ovm_equilibrium_state(opts.v_star, cfg);
  const int hold_steps = std::max(1, static_cast<int>(std::round(opts.hold_s / cfg.ts)));
  double level = opts.v_star;
  for (int k = 0; k <= T; ++k) {
    double eps;
    if (opts.profile == CollectOptions::Profile::uniform) {
      eps = rng_eps.uniform(opts.eps_low, opts.eps_high);
    } else {
      if (k % hold_steps == 0) level = rng_eps.uniform(opts.eps_low, opts.eps_high);
      eps = std::max(0.0, level + (opts.jitter > 0.0
                                       ? rng_eps.uniform(-opts.jitter, opts.jitter)
                                       : 0.0));
    }
    const double theta = rng_theta.uniform(-opts.theta_amp, opts.theta_amp);
    double u = cav_policy_accel(opts.cav_policy, state.x(0), state.x(1), eps, cfg.headway,
                                cfg.ovm);
    if (opts.u_dither > 0.0) u += rng_dither.uniform(-opts.u_dither, opts.u_dither);

    log.U(k) = u;
    log.E(k) = eps;
    log.F(k) = theta;
    log.X.col(k) = state.x;

    if (k < T) {
      Eigen::VectorXd noise(2 * cfg.n);
      for (Eigen::Index j = 0; j < noise.size(); ++j) {
        noise(j) = rng_noise.uniform(-opts.noise_amp, opts.noise_amp);
      }
      state = step_platoon(state, u, eps, theta, noise, cfg);
      if (!state.x.allFinite()) {
        throw std::runtime_error("collect_data: non-finite state at step " + std::to_string(k + 1));
      }
    }
  }
  return log;
}

Sequences build_sequences(const DataLog& log,
                          const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& lift_columns) {
  const Eigen::Index T = log.T();
  if (T < 1) throw std::invalid_argument("build_sequences: need T >= 1");
  Sequences s;
  s.U_ = log.U.head(T).transpose();
  s.E_ = log.E.head(T).transpose();
  s.F_ = log.F.head(T).transpose();
  s.X_ = log.X.leftCols(T);
  s.Xp = log.X.rightCols(T);
  Eigen::MatrixXd Z = lift_columns(log.X);
  s.Z_ = Z.leftCols(T);
  s.Zp = Z.rightCols(T);
  return s;
}

ScenarioProfile emergency_profile(const PlatoonConfig& cfg) {
  const double total = 30.0;
  const int steps = static_cast<int>(std::round(total / cfg.ts));
  ScenarioProfile prof;
  prof.ts = cfg.ts;
  prof.v0.resize(steps);
  for (int k = 0; k < steps; ++k) {
    const double t = k * cfg.ts;
    double v;
    if (t < 5.0) {
      v = 20.0;
    } else if (t < 8.0) {
      v = 20.0 - 5.0 * (t - 5.0);
    } else if (t < 13.0) {
      v = 5.0;
    } else if (t < 16.0) {
      v = 5.0 + 5.0 * (t - 13.0);
    } else {
      v = 20.0;
    }
    prof.v0(k) = v;
  }
  return prof;
}

ScenarioProfile load_cycle_csv(const std::string& path, const PlatoonConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_cycle_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_cycle_csv: empty file " + path);
  // tolerate whitespace and \r around the header fields
  std::string squashed;
  for (char c : line) {
    if (!std::isspace(static_cast<unsigned char>(c))) squashed += c;
  }
  if (squashed != "t,v") {
    throw std::runtime_error("load_cycle_csv: expected header 't,v', got '" + line + "'");
  }

  std::vector<double> ts, vs;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    std::istringstream ls(line);
    std::string a, b;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b)) {
      throw std::runtime_error("load_cycle_csv: malformed row " + std::to_string(row));
    }
    const double t = std::stod(a), v = std::stod(b);
    if (!ts.empty() && t <= ts.back()) {
      throw std::runtime_error("load_cycle_csv: non-monotone time at row " + std::to_string(row));
    }
    if (v < 0.0) {
      throw std::runtime_error("load_cycle_csv: negative velocity at row " + std::to_string(row));
    }
    ts.push_back(t);
    vs.push_back(v);
  }
  if (ts.size() < 2) throw std::runtime_error("load_cycle_csv: need at least two samples");

  const int steps = static_cast<int>(std::floor((ts.back() - ts.front()) / cfg.ts)) + 1;
  ScenarioProfile prof;
  prof.ts = cfg.ts;
  prof.v0.resize(steps);
  std::size_t seg = 0;
  for (int k = 0; k < steps; ++k) {
    const double t = ts.front() + k * cfg.ts;
    while (seg + 2 < ts.size() && ts[seg + 1] < t) ++seg;
    const double w = (t - ts[seg]) / (ts[seg + 1] - ts[seg]);
    prof.v0(k) = vs[seg] + std::clamp(w, 0.0, 1.0) * (vs[seg + 1] - vs[seg]);
  }
  return prof;
}

double attack_signal(AttackMode mode, int k, const std::vector<double>& u_history, int tau,
                     double amp, Rng& rng) {
  switch (mode) {
    case AttackMode::none:
      return 0.0;
    case AttackMode::random_bounded:
      return rng.uniform(-amp, amp);
    case AttackMode::time_delay: {
      if (static_cast<int>(u_history.size()) != k + 1) {
        throw std::invalid_argument("attack_signal: u_history must cover steps 0..k");
      }
      if (k < tau) return 0.0;  // warm-up: no delayed input available yet
      return u_history[static_cast<std::size_t>(k - tau)] - u_history[static_cast<std::size_t>(k)];
    }
  }
  return 0.0;
}

void save_datalog_csv(const DataLog& log, const std::string& csv_path) {
  std::ofstream out(csv_path);
  if (!out) throw std::runtime_error("cannot write " + csv_path);
  out.precision(17);
  out << "u,eps,theta";
  for (int i = 1; i <= log.n; ++i) out << ",s_" << i << ",v_" << i;
  out << "\n";
  for (Eigen::Index k = 0; k < log.U.size(); ++k) {
    out << log.U(k) << "," << log.E(k) << "," << log.F(k);
    for (Eigen::Index j = 0; j < log.X.rows(); ++j) out << "," << log.X(j, k);
    out << "\n";
  }

  serialize::json meta{{"kind", "datalog"},
                       {"n", log.n},
                       {"ts", log.ts},
                       {"T", log.T()},
                       {"seed", log.seed},
                       {"config_hash", log.config_hash}};
  serialize::save_json_file(csv_path + ".meta.json", meta);
}

DataLog load_datalog_csv(const std::string& csv_path) {
  auto meta = serialize::load_json_file(csv_path + ".meta.json");
  DataLog log;
  log.n = meta.at("n").get<int>();
  log.ts = meta.at("ts").get<double>();
  log.seed = meta.at("seed").get<std::uint64_t>();
  log.config_hash = meta.value("config_hash", "");

  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot open " + csv_path);
  std::string line;
  std::getline(in, line);  // header
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<double> row;
    std::string cell;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    if (static_cast<int>(row.size()) != 3 + 2 * log.n) {
      throw std::runtime_error("datalog csv: bad column count");
    }
    rows.push_back(std::move(row));
  }
  const Eigen::Index cols = static_cast<Eigen::Index>(rows.size());
  log.U.resize(cols);
  log.E.resize(cols);
  log.F.resize(cols);
  log.X.resize(2 * log.n, cols);
  for (Eigen::Index k = 0; k < cols; ++k) {
    log.U(k) = rows[static_cast<std::size_t>(k)][0];
    log.E(k) = rows[static_cast<std::size_t>(k)][1];
    log.F(k) = rows[static_cast<std::size_t>(k)][2];
    for (int j = 0; j < 2 * log.n; ++j) {
      log.X(j, k) = rows[static_cast<std::size_t>(k)][static_cast<std::size_t>(3 + j)];
    }
  }
  return log;
}

}  // namespace rnddpc::platoon
