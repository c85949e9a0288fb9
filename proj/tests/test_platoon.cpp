#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "rnddpc/platoon.hpp"

using namespace rnddpc::platoon;

namespace {
PlatoonConfig paper_config() { return PlatoonConfig{}; }
}  // namespace

TEST_CASE("desired velocity branches") {
  OVMParams p;
  CHECK(ovm_desired_velocity(5, p) == doctest::Approx(0));
  CHECK(ovm_desired_velocity(3, p) == doctest::Approx(0));
  CHECK(ovm_desired_velocity(35, p) == doctest::Approx(38));
  CHECK(ovm_desired_velocity(50, p) == doctest::Approx(38));
  CHECK(ovm_desired_velocity(20, p) == doctest::Approx(19));  // midpoint
}

TEST_CASE("ovm accel") {
  OVMParams p;
  CHECK(ovm_accel(20, 19, 19, p) == doctest::Approx(0));
  CHECK(ovm_accel(20, 18, 19, p) == doctest::Approx(1.5));
  CHECK(ovm_accel(5, 0, 0, p) == doctest::Approx(0));
}

TEST_CASE("inverse desired velocity round-trips") {
  OVMParams p;
  CHECK(ovm_inverse_velocity(19, p) == doctest::Approx(20));
  for (double v = 0.01; v < p.v_max; v += 1.37) {
    CHECK(ovm_desired_velocity(ovm_inverse_velocity(v, p), p) == doctest::Approx(v).epsilon(1e-9));
  }
  CHECK_THROWS(ovm_inverse_velocity(-1, p));
  CHECK_THROWS(ovm_inverse_velocity(38, p));
}

TEST_CASE("desired state") {
  PlatoonConfig cfg = paper_config();
  Eigen::VectorXd r = desired_state(19, cfg);
  CHECK(r(0) == doctest::Approx(27.8));  // 1.2*19 + 5
  CHECK(r(1) == doctest::Approx(19));
  CHECK(r(2) == doctest::Approx(20));
  CHECK(r(4) == doctest::Approx(20));
  CHECK_THROWS(desired_state(0, cfg));
  CHECK_THROWS(desired_state(40, cfg));
}

TEST_CASE("step: uniform velocities keep spacings") {
  PlatoonConfig cfg = paper_config();
  PlatoonState st = ovm_equilibrium_state(19, cfg);
  PlatoonState next =
      step_platoon(st, 0, 19, 0, Eigen::VectorXd::Zero(cfg.state_dim()), cfg);
  CHECK((next.x - st.x).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("step: CAV velocity update and spacing kinematics") {
  PlatoonConfig cfg = paper_config();
  PlatoonState st = ovm_equilibrium_state(19, cfg);
  PlatoonState next =
      step_platoon(st, 1.0, 19, 0.5, Eigen::VectorXd::Zero(cfg.state_dim()), cfg);
  CHECK(next.x(1) == doctest::Approx(19.075));  // v + ts (u + attack)

  // spacing gains ts * (v_prev - v)
  PlatoonState st2 = st;
  st2.x(1) = 19;   // CAV
  st2.x(3) = 19;   // HDV 2 velocity
  st2.x(2) = 20;   // HDV 2 spacing
  PlatoonState nx = step_platoon(st2, 0, 20, 0, Eigen::VectorXd::Zero(cfg.state_dim()), cfg);
  CHECK(nx.x(0) == doctest::Approx(st2.x(0) + 0.05 * (20 - 19)));  // head at 20
  CHECK(nx.x(2) == doctest::Approx(st2.x(2) + 0.05 * (19 - 19)));

  // pre-noise kinematics hold exactly for arbitrary states
  PlatoonState rough = st;
  rough.x << 12, 7, 25, 16, 18, 3;
  PlatoonState out = step_platoon(rough, 2.0, 9.0, -1.0, Eigen::VectorXd::Zero(6), cfg);
  CHECK(out.x(0) == doctest::Approx(12 + 0.05 * (9.0 - 7)));
  CHECK(out.x(2) == doctest::Approx(25 + 0.05 * (7 - 16)));
  CHECK(out.x(4) == doctest::Approx(18 + 0.05 * (16 - 3)));
}

TEST_CASE("step clamps velocities at zero") {
  PlatoonConfig cfg = paper_config();
  PlatoonState st = ovm_equilibrium_state(2, cfg);
  st.x(1) = 0.1;
  PlatoonState next = step_platoon(st, -50, 2, 0, Eigen::VectorXd::Zero(cfg.state_dim()), cfg);
  CHECK(next.x(1) == 0.0);
}

TEST_CASE("collect_data basics and determinism") {
  PlatoonConfig cfg = paper_config();
  CollectOptions opts;
  DataLog one = collect_data(cfg, 1, opts, 7);
  CHECK(one.U.size() == 2);
  CHECK(one.X.cols() == 2);
  // the headway pre-controller starts from the state it regulates to
  CHECK((one.X.col(0) - desired_state(opts.v_star, cfg)).cwiseAbs().maxCoeff() == 0.0);

  CollectOptions ovm_opts;
  ovm_opts.cav_policy = CollectOptions::CavPolicy::ovm;
  DataLog ovm_log = collect_data(cfg, 1, ovm_opts, 7);
  CHECK((ovm_log.X.col(0) - ovm_equilibrium_state(opts.v_star, cfg).x).cwiseAbs().maxCoeff() ==
        0.0);

  DataLog a = collect_data(cfg, 100, opts, 7);
  DataLog b = collect_data(cfg, 100, opts, 7);
  CHECK(a.U == b.U);
  CHECK(a.X == b.X);
  DataLog c = collect_data(cfg, 100, opts, 8);
  CHECK(a.U != c.U);
}

TEST_CASE("collect_data with zero amplitudes stays at equilibrium") {
  PlatoonConfig cfg = paper_config();
  CollectOptions opts;
  opts.eps_low = opts.eps_high = opts.v_star;
  opts.jitter = 0;
  opts.theta_amp = 0;
  opts.noise_amp = 0;
  opts.u_dither = 0;
  DataLog log = collect_data(cfg, 50, opts, 3);
  for (Eigen::Index k = 0; k < log.X.cols(); ++k) {
    CHECK((log.X.col(k) - log.X.col(0)).cwiseAbs().maxCoeff() < 1e-10);
  }
  CHECK(log.U.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("collect_data signals respect their bounds") {
  PlatoonConfig cfg = paper_config();
  CollectOptions opts;
  DataLog log = collect_data(cfg, 500, opts, 11);
  CHECK((log.E.array() >= std::max(0.0, opts.eps_low - opts.jitter)).all());
  CHECK((log.E.array() <= opts.eps_high + opts.jitter).all());
  CHECK(log.F.cwiseAbs().maxCoeff() <= opts.theta_amp);

  CollectOptions uni;
  uni.profile = CollectOptions::Profile::uniform;
  uni.eps_low = 17;
  uni.eps_high = 21;
  DataLog ulog = collect_data(cfg, 500, uni, 11);
  CHECK((ulog.E.array() >= 17.0).all());
  CHECK((ulog.E.array() <= 21.0).all());
}

TEST_CASE("headway desired velocity and policy") {
  PlatoonConfig cfg = paper_config();
  CHECK(headway_desired_velocity(27.8, 1.2, cfg.ovm) == doctest::Approx(19.0));
  CHECK(headway_desired_velocity(4.0, 1.2, cfg.ovm) == 0.0);
  CHECK(headway_desired_velocity(1000.0, 1.2, cfg.ovm) == cfg.ovm.v_max);
  // equilibrium of the headway policy
  CHECK(cav_policy_accel(CollectOptions::CavPolicy::headway, 27.8, 19, 19, 1.2, cfg.ovm) ==
        doctest::Approx(0.0));
  CHECK(cav_policy_accel(CollectOptions::CavPolicy::ovm, 20, 19, 19, 1.2, cfg.ovm) ==
        doctest::Approx(0.0));
}

TEST_CASE("build_sequences indexing") {
  PlatoonConfig cfg = paper_config();
  DataLog log = collect_data(cfg, 2, CollectOptions{}, 5);
  auto identity = [](const Eigen::MatrixXd& x) { return x; };
  Sequences s = build_sequences(log, identity);
  CHECK(s.U_.cols() == 2);
  CHECK(s.X_.col(0) == log.X.col(0));
  CHECK(s.X_.col(1) == log.X.col(1));
  CHECK(s.Xp.col(0) == log.X.col(1));
  CHECK(s.Xp.col(1) == log.X.col(2));
  CHECK(s.Z_ == s.X_);  // identity lift passes the state block through
}

TEST_CASE("emergency profile") {
  PlatoonConfig cfg = paper_config();
  ScenarioProfile prof = emergency_profile(cfg);
  CHECK(prof.steps() == 600);
  CHECK(prof.v0(0) == doctest::Approx(20));
  CHECK(prof.v0.minCoeff() == doctest::Approx(5));
  CHECK(prof.v0(prof.steps() - 1) == doctest::Approx(20));
  CHECK(prof.v0.maxCoeff() == doctest::Approx(20));
}

TEST_CASE("cycle csv loading") {
  PlatoonConfig cfg = paper_config();
  const char* path = "cycle_test.csv";
  {
    std::ofstream out(path);
    out << "t,v\n0,10\n1,10\n";
  }
  ScenarioProfile p = load_cycle_csv(path, cfg);
  CHECK(p.steps() == 21);
  CHECK((p.v0.array() == 10).all());

  {
    std::ofstream out(path);
    out << "t,v\n0,0\n1,1\n";
  }
  ScenarioProfile q = load_cycle_csv(path, cfg);
  CHECK(q.v0(10) == doctest::Approx(0.5));

  {
    std::ofstream out(path);
    out << "time,speed\n0,1\n";
  }
  CHECK_THROWS_WITH_AS(load_cycle_csv(path, cfg),
                       doctest::Contains("expected header 't,v'"), std::runtime_error);

  {
    std::ofstream out(path);
    out << "t,v\n0,1\n0,2\n";
  }
  CHECK_THROWS_WITH_AS(load_cycle_csv(path, cfg), doctest::Contains("row 3"), std::runtime_error);

  {
    std::ofstream out(path);
    out << "t,v\n0,1\n1,-2\n";
  }
  CHECK_THROWS_AS(load_cycle_csv(path, cfg), std::runtime_error);
  std::remove(path);
}

TEST_CASE("attack signal modes") {
  rnddpc::Rng rng(1);
  std::vector<double> hist{1.0};
  CHECK(attack_signal(AttackMode::none, 0, hist, 3, 3.0, rng) == 0.0);

  for (int i = 0; i < 100; ++i) {
    const double a = attack_signal(AttackMode::random_bounded, 0, hist, 0, 3.0, rng);
    CHECK(std::abs(a) <= 3.0);
  }

  // constant history cancels
  std::vector<double> constant(10, 2.5);
  CHECK(attack_signal(AttackMode::time_delay, 9, constant, 4, 0, rng) == doctest::Approx(0));

  // u(k)=1, u(k-tau)=3 -> 2
  std::vector<double> hist2{3, 0, 0, 1};
  CHECK(attack_signal(AttackMode::time_delay, 3, hist2, 3, 0, rng) == doctest::Approx(2));

  // warm-up returns zero
  std::vector<double> shorth{1.0};
  CHECK(attack_signal(AttackMode::time_delay, 0, shorth, 3, 0, rng) == 0.0);
}

TEST_CASE("datalog csv round trip") {
  PlatoonConfig cfg = paper_config();
  DataLog log = collect_data(cfg, 20, CollectOptions{}, 9);
  log.config_hash = "deadbeef";
  save_datalog_csv(log, "datalog_test.csv");
  DataLog back = load_datalog_csv("datalog_test.csv");
  CHECK(back.n == log.n);
  CHECK(back.seed == log.seed);
  CHECK((back.X - log.X).cwiseAbs().maxCoeff() == 0.0);  // %.17g survives the round trip
  CHECK((back.U - log.U).cwiseAbs().maxCoeff() == 0.0);
  std::remove("datalog_test.csv");
  std::remove("datalog_test.csv.meta.json");
}
