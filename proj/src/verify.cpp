#include <iostream>
#include <random>

#include "rnddpc/harness.hpp"
#include "rnddpc/qp.hpp"
#include "rnddpc/rng.hpp"
#include "rnddpc/setcalc.hpp"

namespace rnddpc::harness {

namespace {

using setcalc::IntervalBox;
using setcalc::MatrixZonotope;
using setcalc::Zonotope;

Eigen::VectorXd rand_vec(std::mt19937_64& eng, Eigen::Index d, double s) {
  std::uniform_real_distribution<double> u(-s, s);
  Eigen::VectorXd v(d);
  for (Eigen::Index i = 0; i < d; ++i) v(i) = u(eng);
  return v;
}

Eigen::MatrixXd rand_mat(std::mt19937_64& eng, Eigen::Index r, Eigen::Index c, double s) {
  std::uniform_real_distribution<double> u(-s, s);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = u(eng);
  return m;
}

Eigen::VectorXd rand_beta(std::mt19937_64& eng, Eigen::Index n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) b(i) = u(eng);
  return b;
}

bool report(const char* name, bool ok, bool verbose) {
  if (verbose || !ok) {
    std::cout << (ok ? "[ ok ] " : "[FAIL] ") << name << "\n";
  }
  return ok;
}

}  // namespace

bool run_verification(std::uint64_t seed, bool verbose) {
  std::mt19937_64 eng(seed);
  bool all = true;

  {  // membership is preserved through composed set operations
    bool ok = true;
    for (int trial = 0; trial < 25 && ok; ++trial) {
      const Eigen::Index d = 2 + trial % 3;
      Zonotope z1(rand_vec(eng, d, 2), rand_mat(eng, d, 3, 2));
      Zonotope z2(rand_vec(eng, 2, 2), rand_mat(eng, 2, 2, 2));
      MatrixZonotope mz(rand_mat(eng, 3, d + 2, 1), {rand_mat(eng, 3, d + 2, 1)});
      Zonotope out = setcalc::reduce(setcalc::matzono_map(mz, setcalc::cartesian_product(z1, z2)), 2);
      IntervalBox hull = setcalc::interval_hull(out);
      for (int k = 0; k < 40 && ok; ++k) {
        Eigen::VectorXd x(d + 2);
        x << setcalc::sample(z1, rand_beta(eng, 3)), setcalc::sample(z2, rand_beta(eng, 2));
        Eigen::VectorXd y = setcalc::sample(mz, rand_beta(eng, 1)) * x;
        ok = hull.contains(y, 1e-9);
      }
    }
    all &= report("set ops preserve sampled membership", ok, verbose);
  }

  {  // interval hull soundness and vertex agreement in low dimension
    bool ok = true;
    for (int trial = 0; trial < 25 && ok; ++trial) {
      Zonotope z(rand_vec(eng, 2, 3), rand_mat(eng, 2, 3, 3));
      IntervalBox h = setcalc::interval_hull(z);
      Eigen::VectorXd lo = z.center, hi = z.center;
      for (int mask = 0; mask < 8; ++mask) {
        Eigen::VectorXd beta(3);
        for (int i = 0; i < 3; ++i) beta(i) = (mask >> i) & 1 ? 1.0 : -1.0;
        Eigen::VectorXd v = setcalc::sample(z, beta);
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
      }
      ok = (lo - h.lower).cwiseAbs().maxCoeff() < 1e-12 &&
           (hi - h.upper).cwiseAbs().maxCoeff() < 1e-12;
    }
    all &= report("interval hull matches vertex enumeration", ok, verbose);
  }

  {  // reduction soundness
    bool ok = true;
    for (int trial = 0; trial < 20 && ok; ++trial) {
      Zonotope z(rand_vec(eng, 3, 2), rand_mat(eng, 3, 10, 2));
      Zonotope red = setcalc::reduce(z, 1 + trial % 3);
      IntervalBox hull = setcalc::interval_hull(red);
      for (int k = 0; k < 50 && ok; ++k) {
        ok = hull.contains(setcalc::sample(z, rand_beta(eng, 10)), 1e-9);
      }
    }
    all &= report("order reduction only enlarges", ok, verbose);
  }

  {  // reachable-set recursion containment on a synthetic model set
    bool ok = true;
    Eigen::MatrixXd A = rand_mat(eng, 3, 3, 0.5);
    Eigen::MatrixXd abhj(3, 6);
    abhj << A, rand_vec(eng, 3, 0.5), rand_vec(eng, 3, 0.5), rand_vec(eng, 3, 0.5);
    reach::LearnedSetModel sm;
    sm.M_abhj = MatrixZonotope(abhj, {0.05 * rand_mat(eng, 3, 6, 1)});
    sm.M_c = MatrixZonotope::point(Eigen::MatrixXd::Identity(3, 3));
    sm.Z_sigma = Zonotope::box(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Constant(3, 0.1));
    sm.Z_rho = Zonotope::box(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Constant(3, 0.1));
    for (int trial = 0; trial < 5 && ok; ++trial) {
      Eigen::VectorXd z0 = rand_vec(eng, 3, 1);
      Zonotope rz = Zonotope::point(z0);
      const double u = rand_vec(eng, 1, 1)(0);
      reach::ReachStep step = reach_step(
          sm, rz, Zonotope::point(Eigen::VectorXd::Constant(1, u)),
          Zonotope(Eigen::VectorXd::Zero(1), (Eigen::MatrixXd(1, 1) << 0.3).finished()),
          Zonotope(Eigen::VectorXd::Zero(1), (Eigen::MatrixXd(1, 1) << 0.2).finished()), 10);
      IntervalBox hull = setcalc::interval_hull(step.Rx_next);
      for (int k = 0; k < 200 && ok; ++k) {
        Eigen::MatrixXd M = setcalc::sample(sm.M_abhj, rand_beta(eng, 1));
        Eigen::VectorXd in(6);
        in << z0, u, 0.3 * rand_beta(eng, 1)(0), 0.2 * rand_beta(eng, 1)(0);
        Eigen::VectorXd z1 = M * in + setcalc::sample(sm.Z_sigma, rand_beta(eng, 3));
        Eigen::VectorXd x1 = z1 + setcalc::sample(sm.Z_rho, rand_beta(eng, 3));
        ok = hull.contains(x1, 1e-9);
      }
    }
    all &= report("reachable-set step contains sampled rollouts", ok, verbose);
  }

  {  // solver KKT sanity on random box QPs
    bool ok = true;
    for (int trial = 0; trial < 10 && ok; ++trial) {
      const Eigen::Index n = 3 + trial % 3;
      Eigen::MatrixXd B = rand_mat(eng, n, n, 1);
      qp::QPProblem p;
      p.P = B * B.transpose() + Eigen::MatrixXd::Identity(n, n);
      p.q = rand_vec(eng, n, 2);
      p.A_eq.resize(0, n);
      p.b_eq.resize(0);
      p.A_in.resize(2 * n, n);
      p.A_in << Eigen::MatrixXd::Identity(n, n), -Eigen::MatrixXd::Identity(n, n);
      p.b_in = Eigen::VectorXd::Ones(2 * n);
      qp::QPSolution s = qp::solve_qp(p);
      ok = s.status == qp::QPStatus::optimal &&
           ((p.A_in * s.y - p.b_in).array() <= 1e-6).all();
      if (ok) {
        Eigen::VectorXd g = p.P * s.y + p.q;
        for (Eigen::Index i = 0; i < n && ok; ++i) {
          if (std::abs(s.y(i)) < 1.0 - 1e-6) ok = std::abs(g(i)) < 1e-4;
        }
      }
    }
    all &= report("qp solutions satisfy recomputed KKT conditions", ok, verbose);
  }

  {  // simulator kinematics
    platoon::PlatoonConfig pc;
    platoon::PlatoonState st = platoon::ovm_equilibrium_state(19, pc);
    bool ok = true;
    for (int k = 0; k < 50 && ok; ++k) {
      const double u = rand_vec(eng, 1, 2)(0);
      const double eps = 19 + rand_vec(eng, 1, 2)(0);
      platoon::PlatoonState next =
          platoon::step_platoon(st, u, eps, 0, Eigen::VectorXd::Zero(6), pc);
      ok = std::abs(next.x(0) - (st.x(0) + pc.ts * (eps - st.x(1)))) < 1e-12 &&
           std::abs(next.x(2) - (st.x(2) + pc.ts * (st.x(1) - st.x(3)))) < 1e-12;
      st = next;
    }
    all &= report("platoon spacing kinematics are exact", ok, verbose);
  }

  return all;
}

}  // namespace rnddpc::harness
