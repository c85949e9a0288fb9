#include "rnddpc/control.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "rnddpc/serialize.hpp"

namespace rnddpc::control {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

Eigen::MatrixXd tracking_weight(int n, const ControllerConfig& cc) {
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  double w = 1.0;
  for (int i = 0; i < n; ++i) {
    Q(2 * i, 2 * i) = w * cc.rho_s;
    Q(2 * i + 1, 2 * i + 1) = w * cc.rho_v;
    w *= cc.xi;
  }
  return Q;
}

Eigen::VectorXd state_limits(int n, const ControllerConfig& cc) {
  Eigen::VectorXd lim(2 * n);
  for (int i = 0; i < n; ++i) {
    lim(2 * i) = cc.x_tilde_s;
    lim(2 * i + 1) = cc.x_tilde_v;
  }
  return lim;
}

QPBuild build_rnddpc_qp(const reach::LearnedSetModel& sm, const lifting::Encoder& enc,
                        const Eigen::VectorXd& x_k, double eps_k, const Eigen::VectorXd& r,
                        double eps_max, double theta_max, const ControllerConfig& cc) {
  const int N = cc.N;
  const Eigen::Index nx = sm.state_dim();
  const int n = static_cast<int>(nx) / 2;
  if (x_k.size() != nx || r.size() != nx) {
    throw std::invalid_argument("build_rnddpc_qp: state/reference dim mismatch");
  }

  Eigen::VectorXd z0 = enc.lift(x_k);
  auto tube = std::make_shared<reach::SymbolicTube>(
      reach::build_symbolic_tube(sm, z0, eps_k, eps_max, theta_max, N, cc.tube_gen_budget));
  const int nt = tube->num_t();

  const Eigen::Index nu = N;
  const Eigen::Index nxv = nx * N;
  const Eigen::Index nv = nu + nxv + nt;
  QPBuild build;
  build.N = N;
  build.u_offset = 0;
  build.x_offset = nu;
  build.tube = tube;

  qp::QPProblem& p = build.problem;
  p.P = Eigen::MatrixXd::Zero(nv, nv);
  p.q = Eigen::VectorXd::Zero(nv);
  Eigen::MatrixXd Q = tracking_weight(n, cc);
  for (int i = 0; i < N; ++i) {
    p.P.block(nu + i * nx, nu + i * nx, nx, nx) = 2.0 * Q;
    p.q.segment(nu + i * nx, nx) = -2.0 * Q * r;
    p.P(i, i) = 2.0 * cc.r_u;
  }
  for (int j = 0; j < nt; ++j) p.P(nu + nxv + j, nu + nxv + j) = 2.0 * cc.aux_reg;

  p.var_names.reserve(static_cast<std::size_t>(nv));
  for (int i = 0; i < N; ++i) p.var_names.push_back("u" + std::to_string(i));
  for (int i = 0; i < N; ++i) {
    for (Eigen::Index b = 0; b < nx; ++b) {
      p.var_names.push_back("x" + std::to_string(i + 1) + "_" + std::to_string(b));
    }
  }
  for (int j = 0; j < nt; ++j) p.var_names.push_back("t" + std::to_string(j));

  const Eigen::VectorXd lim = state_limits(n, cc);
  const Eigen::VectorXd Xu = r + lim;
  const Eigen::VectorXd Xl = r - lim;

  // rows: 2 per auxiliary, 2 per (step, axis) for the set bounds, 2 per
  // (step, axis) for the state-in-bounds coupling, 2 per input
  const Eigen::Index rows = 2 * nt + 4 * nx * N + 2 * N;
  p.A_in = Eigen::MatrixXd::Zero(rows, nv);
  p.b_in = Eigen::VectorXd::Zero(rows);
  p.A_eq.resize(0, nv);
  p.b_eq.resize(0);

  Eigen::Index row = 0;
  for (int j = 0; j < nt; ++j) {
    const auto& def = tube->tdefs[static_cast<std::size_t>(j)];
    // t_j >= +-(a'u + c0)
    p.A_in.row(row).head(nu) = def.u_coef.transpose();
    p.A_in(row, nu + nxv + j) = -1.0;
    p.b_in(row) = -def.c0;
    ++row;
    p.A_in.row(row).head(nu) = -def.u_coef.transpose();
    p.A_in(row, nu + nxv + j) = -1.0;
    p.b_in(row) = def.c0;
    ++row;
  }

  for (int i = 0; i < N; ++i) {
    const auto& st = tube->steps[static_cast<std::size_t>(i)];
    for (Eigen::Index b = 0; b < nx; ++b) {
      const auto& rad = st.x_radius[static_cast<std::size_t>(b)];
      // upper bound of the set inside the admissible box
      p.A_in.row(row).head(nu) = st.xcU.row(b);
      for (const auto& [tv, coef] : rad.terms) p.A_in(row, nu + nxv + tv) = coef;
      p.b_in(row) = Xu(b) - st.xc0(b) - rad.c0;
      ++row;
      // lower bound of the set above the floor
      p.A_in.row(row).head(nu) = -st.xcU.row(b);
      for (const auto& [tv, coef] : rad.terms) p.A_in(row, nu + nxv + tv) = coef;
      p.b_in(row) = st.xc0(b) - rad.c0 - Xl(b);
      ++row;
      // predicted state inside the set bounds
      const Eigen::Index xv = nu + i * nx + b;
      p.A_in(row, xv) = 1.0;
      p.A_in.row(row).head(nu) -= st.xcU.row(b);
      for (const auto& [tv, coef] : rad.terms) p.A_in(row, nu + nxv + tv) = -coef;
      p.b_in(row) = st.xc0(b) + rad.c0;
      ++row;
      p.A_in(row, xv) = -1.0;
      p.A_in.row(row).head(nu) += st.xcU.row(b);
      for (const auto& [tv, coef] : rad.terms) p.A_in(row, nu + nxv + tv) = -coef;
      p.b_in(row) = -st.xc0(b) + rad.c0;
      ++row;
    }
  }

  for (int i = 0; i < N; ++i) {
    p.A_in(row, i) = 1.0;
    p.b_in(row) = cc.u_max;
    ++row;
    p.A_in(row, i) = -1.0;
    p.b_in(row) = cc.u_max;
    ++row;
  }
  return build;
}

QPBuild build_kmpc_qp(const lifting::KoopmanModel& m, const Eigen::VectorXd& x_k, double eps_k,
                      const Eigen::VectorXd& r, const ControllerConfig& cc) {
  const int N = cc.N;
  const Eigen::Index nz = m.nz();
  const Eigen::Index nx = m.state_dim();
  const int n = static_cast<int>(nx) / 2;
  if (x_k.size() != nx || r.size() != nx) {
    throw std::invalid_argument("build_kmpc_qp: state/reference dim mismatch");
  }
  Eigen::VectorXd z0 = m.encoder.lift(x_k);

  const Eigen::Index nu = N;
  const Eigen::Index nzv = nz * N;
  const Eigen::Index nxv = nx * N;
  const Eigen::Index nv = nu + nzv + nxv;
  QPBuild build;
  build.N = N;
  build.u_offset = 0;
  build.x_offset = nu + nzv;

  qp::QPProblem& p = build.problem;
  p.P = Eigen::MatrixXd::Zero(nv, nv);
  p.q = Eigen::VectorXd::Zero(nv);
  Eigen::MatrixXd Q = tracking_weight(n, cc);
  for (int i = 0; i < N; ++i) {
    p.P(i, i) = 2.0 * cc.r_u;
    p.P.block(build.x_offset + i * nx, build.x_offset + i * nx, nx, nx) = 2.0 * Q;
    p.q.segment(build.x_offset + i * nx, nx) = -2.0 * Q * r;
  }
  for (Eigen::Index j = 0; j < nzv; ++j) p.P(nu + j, nu + j) = 2.0 * cc.aux_reg;

  // z(i+1) = A z(i) + B u(i) + H eps ; x(i+1) = C z(i+1); theta held at zero
  p.A_eq = Eigen::MatrixXd::Zero(nzv + nxv, nv);
  p.b_eq = Eigen::VectorXd::Zero(nzv + nxv);
  Eigen::Index row = 0;
  for (int i = 0; i < N; ++i) {
    p.A_eq.block(row, nu + i * nz, nz, nz) = Eigen::MatrixXd::Identity(nz, nz);
    p.A_eq.block(row, i, nz, 1) = -m.B;
    Eigen::VectorXd rhs = m.H * eps_k;
    if (i == 0) {
      rhs += m.A * z0;
    } else {
      p.A_eq.block(row, nu + (i - 1) * nz, nz, nz) = -m.A;
    }
    p.b_eq.segment(row, nz) = rhs;
    row += nz;
  }
  for (int i = 0; i < N; ++i) {
    p.A_eq.block(row, build.x_offset + i * nx, nx, nx) = Eigen::MatrixXd::Identity(nx, nx);
    p.A_eq.block(row, nu + i * nz, nx, nz) = -m.C;
    row += nx;
  }

  const Eigen::VectorXd lim = state_limits(n, cc);
  p.A_in = Eigen::MatrixXd::Zero(2 * nxv + 2 * N, nv);
  p.b_in = Eigen::VectorXd::Zero(2 * nxv + 2 * N);
  row = 0;
  for (int i = 0; i < N; ++i) {
    for (Eigen::Index b = 0; b < nx; ++b) {
      p.A_in(row, build.x_offset + i * nx + b) = 1.0;
      p.b_in(row) = r(b) + lim(b);
      ++row;
      p.A_in(row, build.x_offset + i * nx + b) = -1.0;
      p.b_in(row) = -(r(b) - lim(b));
      ++row;
    }
  }
  for (int i = 0; i < N; ++i) {
    p.A_in(row, i) = 1.0;
    p.b_in(row) = cc.u_max;
    ++row;
    p.A_in(row, i) = -1.0;
    p.b_in(row) = cc.u_max;
    ++row;
  }
  return build;
}

namespace {

class TubeController final : public Controller {
 public:
  TubeController(reach::LearnedSetModel sm, lifting::Encoder enc, platoon::PlatoonConfig pc,
                 ControllerConfig cc, std::string name)
      : sm_(std::move(sm)), enc_(std::move(enc)), pc_(pc), cc_(cc), name_(std::move(name)) {}

  std::string name() const override { return name_; }
  int horizon() const override { return cc_.N; }
  double input_limit() const override { return cc_.u_max; }
  void reset() override { have_warm_ = false; }

  ControlDecision decide(const Eigen::VectorXd& x_k, double eps_k,
                         const Eigen::VectorXd& r) override {
    const auto t0 = Clock::now();
    QPBuild b = build_rnddpc_qp(sm_, enc_, x_k, eps_k, r, pc_.eps_max, pc_.theta_max, cc_);
    const Eigen::Index nv = b.problem.num_vars();
    Eigen::VectorXd guess;
    qp::QPSettings st;
    st.tol_feas = cc_.qp_tol_feas;
    st.tol_opt = cc_.qp_tol_opt;
    st.max_iter = cc_.qp_max_iter;
    if (have_warm_) {
      // shifted previous input sequence; states and auxiliaries re-derived
      Eigen::VectorXd u_shift(cc_.N);
      u_shift.head(cc_.N - 1) = warm_u_.tail(cc_.N - 1);
      u_shift(cc_.N - 1) = warm_u_(cc_.N - 1);
      guess = Eigen::VectorXd::Zero(nv);
      guess.head(cc_.N) = u_shift;
      reach::TubeEval ev = b.tube->evaluate(u_shift);
      for (int i = 0; i < cc_.N; ++i) {
        guess.segment(b.x_offset + i * sm_.state_dim(), sm_.state_dim()) =
            ev.x_center[static_cast<std::size_t>(i)];
      }
      guess.tail(b.tube->num_t()) = b.tube->tight_t(u_shift);
      st.warm_start = &guess;
    }
    qp::QPSolution sol = qp::solve_qp(b.problem, st);

    ControlDecision d;
    d.status = sol.status;
    d.iterations = sol.iterations;
    const Eigen::Index nx = sm_.state_dim();
    d.u = Eigen::VectorXd::Zero(cc_.N);
    d.x_pred = Eigen::MatrixXd::Zero(nx, cc_.N);
    if (sol.status == qp::QPStatus::optimal) {
      d.u = sol.y.head(cc_.N);
      for (int i = 0; i < cc_.N; ++i) {
        d.x_pred.col(i) = sol.y.segment(b.x_offset + i * nx, nx);
      }
      reach::TubeEval ev = b.tube->evaluate(d.u);
      d.bound_lower.resize(nx, cc_.N);
      d.bound_upper.resize(nx, cc_.N);
      for (int i = 0; i < cc_.N; ++i) {
        d.bound_lower.col(i) = ev.x_center[static_cast<std::size_t>(i)] -
                               ev.x_radius[static_cast<std::size_t>(i)];
        d.bound_upper.col(i) = ev.x_center[static_cast<std::size_t>(i)] +
                               ev.x_radius[static_cast<std::size_t>(i)];
      }
      warm_u_ = d.u;
      have_warm_ = true;
    } else {
      have_warm_ = false;
    }
    d.solve_ms = ms_since(t0);
    return d;
  }

 private:
  reach::LearnedSetModel sm_;
  lifting::Encoder enc_;
  platoon::PlatoonConfig pc_;
  ControllerConfig cc_;
  std::string name_;
  Eigen::VectorXd warm_u_;
  bool have_warm_ = false;
};

class NominalController final : public Controller {
 public:
  NominalController(lifting::KoopmanModel m, ControllerConfig cc, std::string name)
      : m_(std::move(m)), cc_(cc), name_(std::move(name)) {}

  std::string name() const override { return name_; }
  int horizon() const override { return cc_.N; }
  double input_limit() const override { return cc_.u_max; }
  void reset() override { have_warm_ = false; }

  ControlDecision decide(const Eigen::VectorXd& x_k, double eps_k,
                         const Eigen::VectorXd& r) override {
    const auto t0 = Clock::now();
    QPBuild b = build_kmpc_qp(m_, x_k, eps_k, r, cc_);
    qp::QPSettings st;
    st.tol_feas = cc_.qp_tol_feas;
    st.tol_opt = cc_.qp_tol_opt;
    st.max_iter = cc_.qp_max_iter;
    Eigen::VectorXd guess;
    if (have_warm_) {
      guess = Eigen::VectorXd::Zero(b.problem.num_vars());
      guess.head(cc_.N - 1) = warm_u_.tail(cc_.N - 1);
      guess(cc_.N - 1) = warm_u_(cc_.N - 1);
      st.warm_start = &guess;
    }
    qp::QPSolution sol = qp::solve_qp(b.problem, st);

    ControlDecision d;
    d.status = sol.status;
    d.iterations = sol.iterations;
    const Eigen::Index nx = m_.state_dim();
    d.u = Eigen::VectorXd::Zero(cc_.N);
    d.x_pred = Eigen::MatrixXd::Zero(nx, cc_.N);
    if (sol.status == qp::QPStatus::optimal) {
      d.u = sol.y.head(cc_.N);
      for (int i = 0; i < cc_.N; ++i) d.x_pred.col(i) = sol.y.segment(b.x_offset + i * nx, nx);
      warm_u_ = d.u;
      have_warm_ = true;
    } else {
      have_warm_ = false;
    }
    d.solve_ms = ms_since(t0);
    return d;
  }

 private:
  lifting::KoopmanModel m_;
  ControllerConfig cc_;
  std::string name_;
  Eigen::VectorXd warm_u_;
  bool have_warm_ = false;
};

class CarFollowingController final : public Controller {
 public:
  CarFollowingController(platoon::PlatoonConfig pc, ControllerConfig cc) : pc_(pc), cc_(cc) {}

  std::string name() const override { return "allhdv"; }
  int horizon() const override { return 1; }
  double input_limit() const override { return cc_.u_max; }
  platoon::PlatoonState initial_state(double eps0,
                                      const platoon::PlatoonConfig& pc) const override {
    return platoon::ovm_equilibrium_state(std::clamp(eps0, 0.05, pc.ovm.v_max - 0.05), pc);
  }

  ControlDecision decide(const Eigen::VectorXd& x_k, double eps_k,
                         const Eigen::VectorXd& r) override {
    (void)r;
    const auto t0 = Clock::now();
    ControlDecision d;
    d.u = Eigen::VectorXd::Constant(1, platoon::ovm_accel(x_k(0), x_k(1), eps_k, pc_.ovm));
    d.x_pred = Eigen::MatrixXd::Zero(x_k.size(), 1);
    d.status = qp::QPStatus::optimal;
    d.solve_ms = ms_since(t0);
    return d;
  }

 private:
  platoon::PlatoonConfig pc_;
  ControllerConfig cc_;
};

}  // namespace

std::unique_ptr<Controller> make_rnddpc(reach::LearnedSetModel sm, lifting::Encoder enc,
                                        const platoon::PlatoonConfig& pc, ControllerConfig cc,
                                        std::string name) {
  return std::make_unique<TubeController>(std::move(sm), std::move(enc), pc, cc, std::move(name));
}

std::unique_ptr<Controller> make_kmpc(lifting::KoopmanModel m, ControllerConfig cc,
                                      std::string name) {
  return std::make_unique<NominalController>(std::move(m), cc, std::move(name));
}

std::unique_ptr<Controller> make_allhdv(const platoon::PlatoonConfig& pc,
                                        ControllerConfig cc) {
  return std::make_unique<CarFollowingController>(pc, cc);
}

platoon::PlatoonState Controller::initial_state(double eps0,
                                                const platoon::PlatoonConfig& pc) const {
  return platoon::PlatoonState{reference_for(eps0, pc), eps0};
}

double TrajectoryLog::feasible_fraction() const {
  if (rows.empty()) return 1.0;
  int ok = 0;
  for (const auto& r : rows) ok += r.feasible ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(rows.size());
}

Eigen::VectorXd reference_for(double eps, const platoon::PlatoonConfig& pc) {
  const double v = std::clamp(eps, 0.05, pc.ovm.v_max - 0.05);
  return platoon::desired_state(v, pc);
}

TrajectoryLog receding_horizon_run(Controller& ctrl, const platoon::ScenarioProfile& scenario,
                                   const platoon::PlatoonConfig& pc, std::uint64_t master_seed) {
  const int Ns = scenario.steps();
  if (Ns < 1) throw std::invalid_argument("receding_horizon_run: empty scenario");
  Rng rng_noise(master_seed, "run/noise");
  Rng rng_attack(master_seed, "run/attack");
  const int tau = rng_attack.uniform_int(1, 6);  // delay draw, fixed per episode

  TrajectoryLog log;
  log.controller = ctrl.name();
  log.seed = master_seed;
  log.n = pc.n;
  log.ts = pc.ts;
  log.X.resize(2 * pc.n, Ns);
  log.R.resize(2 * pc.n, Ns);
  log.rows.reserve(static_cast<std::size_t>(Ns));

  ctrl.reset();
  platoon::PlatoonState state = ctrl.initial_state(scenario.v0(0), pc);
  std::vector<double> u_hist;
  u_hist.reserve(static_cast<std::size_t>(Ns));

  for (int k = 0; k < Ns; ++k) {
    const double eps = scenario.v0(k);
    Eigen::VectorXd r = reference_for(eps, pc);
    ControlDecision d = ctrl.decide(state.x, eps, r);
    const bool feasible = d.status == qp::QPStatus::optimal;
    double u;
    if (feasible) {
      u = d.u(0);
    } else {
      // car-following backup, clamped to the admissible input range
      u = std::clamp(platoon::ovm_accel(state.x(0), state.x(1), eps, pc.ovm),
                     -ctrl.input_limit(), ctrl.input_limit());
    }
    u_hist.push_back(u);
    const double theta =
        platoon::attack_signal(scenario.attack, k, u_hist, tau, pc.theta_max, rng_attack);

    log.rows.push_back(TrajectoryLog::Row{k, k * pc.ts, u, eps, theta, feasible, d.solve_ms});
    log.X.col(k) = state.x;
    log.R.col(k) = r;

    Eigen::VectorXd noise(2 * pc.n);
    for (Eigen::Index j = 0; j < noise.size(); ++j) {
      noise(j) = rng_noise.uniform(-pc.omega_max, pc.omega_max);
    }
    state = platoon::step_platoon(state, u, eps, theta, noise, pc);
    if (!state.x.allFinite()) {
      throw std::runtime_error("receding_horizon_run: simulator diverged at step " +
                               std::to_string(k) + " under controller " + ctrl.name());
    }
  }
  return log;
}

void save_trajectory_csv(const TrajectoryLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  out << "k,t,u,eps,theta,feasible,solve_ms";
  for (int i = 1; i <= log.n; ++i) out << ",s_" << i << ",v_" << i;
  for (int i = 1; i <= log.n; ++i) out << ",rs_" << i << ",rv_" << i;
  out << "\n";
  for (int k = 0; k < log.steps(); ++k) {
    const auto& row = log.rows[static_cast<std::size_t>(k)];
    out << row.k << "," << row.t << "," << row.u << "," << row.eps << "," << row.theta << ","
        << (row.feasible ? 1 : 0) << "," << row.solve_ms;
    for (Eigen::Index j = 0; j < log.X.rows(); ++j) out << "," << log.X(j, k);
    for (Eigen::Index j = 0; j < log.R.rows(); ++j) out << "," << log.R(j, k);
    out << "\n";
  }
  serialize::json meta{{"kind", "trajectory"}, {"controller", log.controller},
                       {"seed", log.seed},    {"config_hash", log.config_hash},
                       {"model_hash", log.model_hash},
                       {"n", log.n},          {"ts", log.ts}};
  serialize::save_json_file(path + ".meta.json", meta);
}

TrajectoryLog load_trajectory_csv(const std::string& path) {
  auto meta = serialize::load_json_file(path + ".meta.json");
  TrajectoryLog log;
  log.controller = meta.at("controller").get<std::string>();
  log.seed = meta.at("seed").get<std::uint64_t>();
  log.config_hash = meta.value("config_hash", "");
  log.model_hash = meta.value("model_hash", "");
  log.n = meta.at("n").get<int>();
  log.ts = meta.at("ts").get<double>();

  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<double> row;
    std::string cell;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  const int Ns = static_cast<int>(rows.size());
  log.X.resize(2 * log.n, Ns);
  log.R.resize(2 * log.n, Ns);
  for (int k = 0; k < Ns; ++k) {
    const auto& r = rows[static_cast<std::size_t>(k)];
    TrajectoryLog::Row row;
    row.k = static_cast<int>(r[0]);
    row.t = r[1];
    row.u = r[2];
    row.eps = r[3];
    row.theta = r[4];
    row.feasible = r[5] != 0.0;
    row.solve_ms = r[6];
    log.rows.push_back(row);
    for (int j = 0; j < 2 * log.n; ++j) {
      log.X(j, k) = r[static_cast<std::size_t>(7 + j)];
      log.R(j, k) = r[static_cast<std::size_t>(7 + 2 * log.n + j)];
    }
  }
  return log;
}

}  // namespace rnddpc::control
