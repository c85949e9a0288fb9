#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace rnddpc::qp {

/// Dense convex QP:
///   min 0.5 y' P y + q' y
///   s.t. A_eq y = b_eq,  A_in y <= b_in.
/// P must be symmetric positive semidefinite.
struct QPProblem {
  Eigen::MatrixXd P;
  Eigen::VectorXd q;
  Eigen::MatrixXd A_eq;  // may have 0 rows
  Eigen::VectorXd b_eq;
  Eigen::MatrixXd A_in;  // may have 0 rows
  Eigen::VectorXd b_in;
  std::vector<std::string> var_names;  // optional, for diagnostics

  Eigen::Index num_vars() const { return q.size(); }
};

enum class QPStatus { optimal, infeasible, max_iter };

struct QPSolution {
  Eigen::VectorXd y;
  QPStatus status = QPStatus::max_iter;
  double objective = 0.0;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
};

struct QPSettings {
  double tol_feas = 1e-6;
  double tol_opt = 1e-6;
  int max_iter = 20000;
  const Eigen::VectorXd* warm_start = nullptr;  // primal initial guess
};

/// Operator-splitting (ADMM) solve with over-relaxation, Ruiz equilibration
/// and residual-balancing step-size adaptation. Declares optimal once the
/// recomputed primal and dual residuals fall below the tolerances; declares
/// infeasible through a divergence certificate of the dual iterates.
QPSolution solve_qp(const QPProblem& p, const QPSettings& s = {});

QPSolution solve_qp(const QPProblem& p, double tol_feas, double tol_opt, int max_iter);

/// Plain-text dump (sizes, then P, q, A_eq, b_eq, A_in, b_in row by row) for
/// cross-checks against external solvers.
void dump_problem(const QPProblem& p, const std::string& path);

}  // namespace rnddpc::qp
