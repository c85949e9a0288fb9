#include "rnddpc/qp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace rnddpc::qp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kSigma = 1e-6;
constexpr double kAlpha = 1.6;
constexpr double kRhoEqScale = 1e3;
constexpr int kCheckEvery = 25;
constexpr int kRhoAdaptEvery = 100;

struct Stacked {
  Eigen::MatrixXd A;  // m x n
  Eigen::VectorXd l;
  Eigen::VectorXd u;
  Eigen::Index m_eq = 0;
};

Stacked stack_constraints(const QPProblem& p) {
  const Eigen::Index n = p.num_vars();
  const Eigen::Index me = p.A_eq.rows(), mi = p.A_in.rows();
  Stacked s;
  s.m_eq = me;
  s.A.resize(me + mi, n);
  if (me > 0) s.A.topRows(me) = p.A_eq;
  if (mi > 0) s.A.bottomRows(mi) = p.A_in;
  s.l.resize(me + mi);
  s.u.resize(me + mi);
  s.l.head(me) = p.b_eq;
  s.u.head(me) = p.b_eq;
  s.l.tail(mi).setConstant(-kInf);
  s.u.tail(mi) = p.b_in;
  return s;
}

void validate(const QPProblem& p, Eigen::MatrixXd& P) {
  const Eigen::Index n = p.num_vars();
  if (p.P.rows() != n || p.P.cols() != n) throw std::invalid_argument("qp: P shape mismatch");
  if (p.A_eq.rows() != p.b_eq.size() || (p.A_eq.rows() > 0 && p.A_eq.cols() != n)) {
    throw std::invalid_argument("qp: equality block shape mismatch");
  }
  if (p.A_in.rows() != p.b_in.size() || (p.A_in.rows() > 0 && p.A_in.cols() != n)) {
    throw std::invalid_argument("qp: inequality block shape mismatch");
  }
  if (!p.P.allFinite() || !p.q.allFinite() || !p.A_eq.allFinite() || !p.b_eq.allFinite() ||
      !p.A_in.allFinite() || !p.b_in.allFinite()) {
    throw std::invalid_argument("qp: non-finite problem data");
  }
  P = 0.5 * (p.P + p.P.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(P);
  const double lmin = es.eigenvalues().minCoeff();
  const double lmax = std::max(1.0, es.eigenvalues().maxCoeff());
  if (lmin < -1e-9 * lmax) throw std::invalid_argument("qp: cost matrix is not PSD");
  if (lmin < 0.0) {
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
    P = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  }
}

}  // namespace

QPSolution solve_qp(const QPProblem& p, const QPSettings& st) {
  const Eigen::Index n = p.num_vars();
  Eigen::MatrixXd P;
  validate(p, P);
  Eigen::VectorXd q = p.q;
  Stacked sc = stack_constraints(p);
  const Eigen::Index m = sc.A.rows();

  // Ruiz equilibration on [P A'; A 0] plus cost scaling.
  Eigen::VectorXd D = Eigen::VectorXd::Ones(n);
  Eigen::VectorXd E = Eigen::VectorXd::Ones(m);
  double cost_scale = 1.0;
  Eigen::MatrixXd A = sc.A;
  for (int it = 0; it < 10; ++it) {
    Eigen::VectorXd dx(n), de(m);
    for (Eigen::Index j = 0; j < n; ++j) {
      double nrm = P.col(j).cwiseAbs().maxCoeff();
      if (m > 0) nrm = std::max(nrm, A.col(j).cwiseAbs().maxCoeff());
      dx(j) = nrm > 1e-12 ? 1.0 / std::sqrt(nrm) : 1.0;
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      const double nrm = A.row(i).cwiseAbs().maxCoeff();
      de(i) = nrm > 1e-12 ? 1.0 / std::sqrt(nrm) : 1.0;
    }
    P = dx.asDiagonal() * P * dx.asDiagonal();
    q = dx.asDiagonal() * q;
    if (m > 0) A = de.asDiagonal() * A * dx.asDiagonal();
    D = D.cwiseProduct(dx);
    E = E.cwiseProduct(de);

    double mean_col = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) mean_col += P.col(j).cwiseAbs().maxCoeff();
    mean_col /= static_cast<double>(n);
    const double g =
        std::clamp(1.0 / std::max({mean_col, q.cwiseAbs().maxCoeff(), 1e-12}), 1e-4, 1e4);
    P *= g;
    q *= g;
    cost_scale *= g;
  }
  Eigen::VectorXd l = sc.l, u = sc.u;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (std::isfinite(l(i))) l(i) *= E(i);
    u(i) *= E(i);
  }

  double rho = 0.1;
  auto rho_vec = [&](double r) {
    Eigen::VectorXd rv = Eigen::VectorXd::Constant(m, r);
    rv.head(sc.m_eq).setConstant(r * kRhoEqScale);
    return rv;
  };
  Eigen::VectorXd rhov = rho_vec(rho);

  Eigen::LLT<Eigen::MatrixXd> llt;
  auto factor = [&]() {
    Eigen::MatrixXd M = P;
    M.diagonal().array() += kSigma;
    if (m > 0) M.noalias() += A.transpose() * rhov.asDiagonal() * A;
    llt.compute(M);
    if (llt.info() != Eigen::Success) throw std::runtime_error("qp: KKT factorization failed");
  };
  factor();

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  if (st.warm_start != nullptr && st.warm_start->size() == n && st.warm_start->allFinite()) {
    x = D.cwiseInverse().asDiagonal() * (*st.warm_start);
  }
  Eigen::VectorXd z = m > 0 ? (A * x).cwiseMax(l).cwiseMin(u) : Eigen::VectorXd(0);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);

  QPSolution sol;
  sol.y = Eigen::VectorXd::Zero(n);

  auto unscaled_residuals = [&](double& rp, double& rd, double& rp_rel, double& rd_rel) {
    Eigen::VectorXd Ax = m > 0 ? (A * x).eval() : Eigen::VectorXd(0);
    Eigen::VectorXd Px = P * x;
    Eigen::VectorXd Aty = m > 0 ? (A.transpose() * y).eval() : Eigen::VectorXd::Zero(n);
    double prim = 0.0, prim_scale = 1e-12;
    for (Eigen::Index i = 0; i < m; ++i) {
      prim = std::max(prim, std::abs(Ax(i) - z(i)) / E(i));
      prim_scale = std::max({prim_scale, std::abs(Ax(i)) / E(i), std::abs(z(i)) / E(i)});
    }
    double dual = 0.0, dual_scale = 1e-12;
    for (Eigen::Index j = 0; j < n; ++j) {
      dual = std::max(dual, std::abs(Px(j) + q(j) + Aty(j)) / (D(j) * cost_scale));
      dual_scale = std::max({dual_scale, std::abs(Px(j)) / (D(j) * cost_scale),
                             std::abs(Aty(j)) / (D(j) * cost_scale),
                             std::abs(q(j)) / (D(j) * cost_scale)});
    }
    rp = prim;
    rd = dual;
    rp_rel = prim / prim_scale;
    rd_rel = dual / dual_scale;
  };

  Eigen::VectorXd y_prev = y;
  Eigen::VectorXd x_prev = x;
  int it = 0;
  for (it = 1; it <= st.max_iter; ++it) {
    y_prev = y;
    x_prev = x;

    Eigen::VectorXd rhs = kSigma * x - q;
    if (m > 0) rhs.noalias() += A.transpose() * (rhov.cwiseProduct(z) - y);
    Eigen::VectorXd xt = llt.solve(rhs);
    Eigen::VectorXd zt;
    if (m > 0) zt = A * xt;

    x = kAlpha * xt + (1.0 - kAlpha) * x;
    if (m > 0) {
      Eigen::VectorXd zh = kAlpha * zt + (1.0 - kAlpha) * z;
      Eigen::VectorXd z_new = (zh + y.cwiseQuotient(rhov)).cwiseMax(l).cwiseMin(u);
      y += rhov.cwiseProduct(zh - z_new);
      z = z_new;
    }

    if (it % kCheckEvery == 0 || it == st.max_iter) {
      double rp, rd, rp_rel, rd_rel;
      unscaled_residuals(rp, rd, rp_rel, rd_rel);
      if (rp <= st.tol_feas && rd <= st.tol_opt) {
        sol.status = QPStatus::optimal;
        sol.primal_residual = rp;
        sol.dual_residual = rd;
        break;
      }

      // primal infeasibility certificate from the dual update direction
      if (m > 0) {
        Eigen::VectorXd dy = y - y_prev;
        const double dy_norm = dy.cwiseQuotient(E).cwiseAbs().maxCoeff();
        if (dy_norm > 1e-12) {
          Eigen::VectorXd Atdy = A.transpose() * dy;
          const double lhs = Atdy.cwiseQuotient(D).cwiseAbs().maxCoeff();
          double support = 0.0;
          bool bounded = true;
          for (Eigen::Index i = 0; i < m; ++i) {
            const double d = dy(i);
            if (d > 0) {
              support += u(i) / E(i) * d;
            } else if (d < 0) {
              if (!std::isfinite(l(i))) {
                if (d < -1e-10 * dy_norm) bounded = false;
              } else {
                support += l(i) / E(i) * d;
              }
            }
          }
          if (bounded && lhs <= 1e-8 * dy_norm && support < -1e-8 * dy_norm) {
            sol.status = QPStatus::infeasible;
            sol.primal_residual = rp;
            sol.dual_residual = rd;
            break;
          }
        }
      }

      if (it % kRhoAdaptEvery == 0 && rd_rel > 1e-16) {
        const double ratio = std::sqrt(rp_rel / rd_rel);
        const double rho_new = std::clamp(rho * ratio, 1e-6, 1e6);
        if (rho_new > 5.0 * rho || rho_new < rho / 5.0) {
          rho = rho_new;
          rhov = rho_vec(rho);
          factor();
        }
      }
    }
  }

  if (sol.status == QPStatus::max_iter) {
    double rp, rd, rp_rel, rd_rel;
    unscaled_residuals(rp, rd, rp_rel, rd_rel);
    sol.primal_residual = rp;
    sol.dual_residual = rd;
  }
  sol.iterations = std::min(it, st.max_iter);
  sol.y = D.asDiagonal() * x;
  sol.objective = 0.5 * sol.y.dot(p.P * sol.y) + p.q.dot(sol.y);
  return sol;
}

QPSolution solve_qp(const QPProblem& p, double tol_feas, double tol_opt, int max_iter) {
  QPSettings s;
  s.tol_feas = tol_feas;
  s.tol_opt = tol_opt;
  s.max_iter = max_iter;
  return solve_qp(p, s);
}

void dump_problem(const QPProblem& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  out << "n " << p.num_vars() << " m_eq " << p.A_eq.rows() << " m_in " << p.A_in.rows() << "\n";
  auto put = [&out](const char* tag, const Eigen::MatrixXd& m) {
    out << tag << "\n";
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) out << m(r, c) << (c + 1 < m.cols() ? " " : "");
      out << "\n";
    }
  };
  put("P", p.P);
  put("q", p.q.transpose());
  put("A_eq", p.A_eq);
  put("b_eq", p.b_eq.transpose());
  put("A_in", p.A_in);
  put("b_in", p.b_in.transpose());
}

}  // namespace rnddpc::qp
