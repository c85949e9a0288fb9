#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "rnddpc/lifting.hpp"
#include "rnddpc/platoon.hpp"
#include "rnddpc/qp.hpp"
#include "rnddpc/reach.hpp"

namespace rnddpc::control {

struct ControllerConfig {
  int N = 5;
  double rho_s = 1.0;
  double rho_v = 1.0;
  double xi = 0.6;        // per-vehicle decay of the tracking weight
  double r_u = 0.1;       // input weight
  double x_tilde_s = 7.0; // allowed spacing deviation (m)
  double x_tilde_v = 7.0; // allowed velocity deviation (m/s)
  double u_max = 5.0;     // input bound (m/s^2)
  double qp_tol_feas = 1e-6;
  double qp_tol_opt = 1e-6;
  int qp_max_iter = 20000;
  int tube_gen_budget = 0;  // constant-generator merge threshold, 0 = off
  double aux_reg = 1e-10;   // quadratic weight on slack-only variables
};

/// Q = diag(Q_x, xi Q_x, ..., xi^(n-1) Q_x) with Q_x = diag(rho_s, rho_v).
Eigen::MatrixXd tracking_weight(int n, const ControllerConfig& cc);

/// Per-axis deviation limits, stacked over vehicles.
Eigen::VectorXd state_limits(int n, const ControllerConfig& cc);

struct QPBuild {
  qp::QPProblem problem;
  int N = 0;
  Eigen::Index u_offset = 0;
  Eigen::Index x_offset = 0;  // start of x(1|k)
  std::shared_ptr<reach::SymbolicTube> tube;  // set for the tube-based builders
};

/// Robust tube QP: decision variables are the inputs, the predicted states
/// and the epigraph auxiliaries of the tube; the reachable-set interval
/// bounds are constrained inside the admissible set and the states inside
/// the bounds.
QPBuild build_rnddpc_qp(const reach::LearnedSetModel& sm, const lifting::Encoder& enc,
                        const Eigen::VectorXd& x_k, double eps_k, const Eigen::VectorXd& r,
                        double eps_max, double theta_max, const ControllerConfig& cc);

/// Nominal lifted-model QP with the attack channel at zero and the head
/// velocity held constant over the horizon.
QPBuild build_kmpc_qp(const lifting::KoopmanModel& m, const Eigen::VectorXd& x_k, double eps_k,
                      const Eigen::VectorXd& r, const ControllerConfig& cc);

struct ControlDecision {
  Eigen::VectorXd u;           // N inputs, first one gets applied
  Eigen::MatrixXd x_pred;      // 2n x N
  Eigen::MatrixXd bound_lower; // 2n x N reachable-set bounds (tube controllers)
  Eigen::MatrixXd bound_upper;
  qp::QPStatus status = qp::QPStatus::max_iter;
  int iterations = 0;
  double solve_ms = 0.0;       // build + solve wall time
};

class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  virtual int horizon() const = 0;
  virtual double input_limit() const = 0;
  virtual ControlDecision decide(const Eigen::VectorXd& x_k, double eps_k,
                                 const Eigen::VectorXd& r) = 0;
  /// Closed-loop start state; the car-following policy rests at its own
  /// equilibrium spacing instead of the headway reference.
  virtual platoon::PlatoonState initial_state(double eps0,
                                              const platoon::PlatoonConfig& pc) const;
  virtual void reset() {}
};

std::unique_ptr<Controller> make_rnddpc(reach::LearnedSetModel sm, lifting::Encoder enc,
                                        const platoon::PlatoonConfig& pc, ControllerConfig cc,
                                        std::string name = "rnddpc");
std::unique_ptr<Controller> make_kmpc(lifting::KoopmanModel m, ControllerConfig cc,
                                      std::string name = "kmpc");
/// The pre-designed car-following policy on the CAV; no optimization.
std::unique_ptr<Controller> make_allhdv(const platoon::PlatoonConfig& pc,
                                        ControllerConfig cc);

struct TrajectoryLog {
  struct Row {
    int k = 0;
    double t = 0, u = 0, eps = 0, theta = 0;
    bool feasible = true;
    double solve_ms = 0;
  };
  std::vector<Row> rows;
  Eigen::MatrixXd X;  // 2n x Ns states (after measurement)
  Eigen::MatrixXd R;  // 2n x Ns references
  std::string controller;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string model_hash;
  int n = 0;
  double ts = 0.0;

  int steps() const { return static_cast<int>(rows.size()); }
  double feasible_fraction() const;
};

/// Closed loop of Algorithm-style receding horizon control over a head
/// vehicle profile: measure, solve, apply the first input (or the clamped
/// car-following backup when infeasible), advance the simulator under live
/// attack and noise signals.
TrajectoryLog receding_horizon_run(Controller& ctrl, const platoon::ScenarioProfile& scenario,
                                   const platoon::PlatoonConfig& pc, std::uint64_t master_seed);

void save_trajectory_csv(const TrajectoryLog& log, const std::string& path);
TrajectoryLog load_trajectory_csv(const std::string& path);

/// Reference for tracking a head velocity; clamps the velocity into the
/// invertible range of the car-following map.
Eigen::VectorXd reference_for(double eps, const platoon::PlatoonConfig& pc);

}  // namespace rnddpc::control
