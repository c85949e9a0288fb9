#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "rnddpc/platoon.hpp"
#include "rnddpc/serialize.hpp"
#include "rnddpc/setcalc.hpp"

namespace rnddpc::reach {

/// Rank-one uncertainty family sharing one row factor: the generators are
/// row_scale(i) * e_i * P.row(k) over every row i and every k. This is the
/// exact structure produced by pushing axis-aligned error zonotopes through
/// the data pseudoinverse, kept factored so the recursion can evaluate
/// sum_k |p_k . x| without materializing row*T generator matrices.
struct FactoredUncertainty {
  Eigen::MatrixXd P;           // K x cols, shared row factors
  Eigen::VectorXd row_scale;   // per output row

  bool empty() const { return P.size() == 0; }
};

/// Matrix-zonotope model sets learned from data, plus the error zonotopes they
/// were built from. Z_sigma and Z_rho are zero-centered. When the factored
/// blocks are present they describe the full generator families; the explicit
/// generator lists of M_abhj/M_c may then be left empty to save memory.
struct LearnedSetModel {
  setcalc::MatrixZonotope M_abhj;  // nz x (nz+3)
  setcalc::MatrixZonotope M_c;     // 2n x nz
  setcalc::Zonotope Z_sigma;       // nz
  setcalc::Zonotope Z_rho;         // 2n
  FactoredUncertainty abhj_factored;
  FactoredUncertainty c_factored;
  std::string data_hash;
  int reduction_budget = 0;

  Eigen::Index nz() const { return M_abhj.rows(); }
  Eigen::Index state_dim() const { return M_c.rows(); }
  bool materialized() const {
    return (abhj_factored.empty() || M_abhj.num_generators() > 0) &&
           (c_factored.empty() || M_c.num_generators() > 0);
  }
};

/// Element-wise interval hulls of the model sets, including the factored
/// generator families.
setcalc::MatrixInterval hull_abhj(const LearnedSetModel& sm);
setcalc::MatrixInterval hull_c(const LearnedSetModel& sm);

/// Matrix zonotope of all error sequences over T columns: the center tiles the
/// error center, and every (generator, column) pair yields one generator with
/// that column set and all others zero.
setcalc::MatrixZonotope build_error_matzono(const setcalc::Zonotope& err, Eigen::Index T);

/// Set-valued regression: centers are the least-squares solutions, generators
/// come from pushing the error matrix zonotopes through the pseudoinverse.
/// Both model sets are reduced to `matzono_budget` generators afterwards
/// (0 keeps everything). With axis-aligned error zonotopes the generator
/// families are also returned in factored form; `materialize` additionally
/// fills the explicit generator lists (memory grows with rows * T).
LearnedSetModel learn_model_sets(const platoon::Sequences& s, const setcalc::Zonotope& Z_sigma,
                                 const setcalc::Zonotope& Z_rho, int matzono_budget,
                                 bool materialize = true);

struct ReachStep {
  setcalc::Zonotope Rz_next;
  setcalc::Zonotope Rx_next;
};

/// One recursion step of the over-approximated reachable set. `Zu` must be a
/// point, `Zeps`/`Ztheta` are scalar zonotopes. The lifted set is reduced to
/// `zono_order` (0 keeps everything) before projection.
ReachStep reach_step(const LearnedSetModel& sm, const setcalc::Zonotope& Rz,
                     const setcalc::Zonotope& Zu, const setcalc::Zonotope& Zeps,
                     const setcalc::Zonotope& Ztheta, int zono_order);

/// Element-wise deviations of the model-set interval hulls from nominal
/// matrices. A valid over-approximation has sup >= 0 and inf <= 0 everywhere.
struct TightnessReport {
  Eigen::MatrixXd e_abhj_sup, e_abhj_inf;
  Eigen::MatrixXd e_c_sup, e_c_inf;
};

TightnessReport quantify_tightness(const LearnedSetModel& sm, const Eigen::MatrixXd& nominal_abhj,
                                   const Eigen::MatrixXd& nominal_c);
void save_tightness_csv(const TightnessReport& rep, const std::string& path);

serialize::json to_json(const LearnedSetModel& sm);
LearnedSetModel set_model_from_json(const serialize::json& j);

// ---------------------------------------------------------------------------
// Symbolic tube: the reachable-set recursion with every center affine in the
// input sequence and every generator carried as a fixed direction times a
// nonnegative scale that is affine in epigraph auxiliaries. Each auxiliary t_j
// is defined by t_j >= |a_j' u + b_j|, which the controller encodes as two
// linear rows, making the interval bounds of every step linear in (u, t).
// ---------------------------------------------------------------------------

/// Affine expression over the epigraph auxiliaries: c0 + sum coef_i * t_i.
struct AffExpr {
  double c0 = 0.0;
  std::vector<std::pair<int, double>> terms;  // sorted by variable id

  void add(int var, double coef);
  AffExpr& operator+=(const AffExpr& other);
  AffExpr scaled(double s) const;
  double eval(const Eigen::VectorXd& t) const;
};

/// Defining expression of one auxiliary: t >= |u_coef' u + c0|.
struct TDef {
  Eigen::VectorXd u_coef;
  double c0 = 0.0;
  double eval(const Eigen::VectorXd& u) const { return std::abs(u_coef.dot(u) + c0); }
};

struct TubeGen {
  Eigen::VectorXd dir;
  AffExpr scale;  // nonnegative for every feasible t
};

struct TubeStep {
  Eigen::VectorXd zc0;
  Eigen::MatrixXd zcU;  // lifted center = zc0 + zcU u
  std::vector<TubeGen> zgens;
  Eigen::VectorXd xc0;
  Eigen::MatrixXd xcU;             // state center = xc0 + xcU u
  std::vector<AffExpr> x_radius;   // per state axis, over t
};

struct TubeEval {
  std::vector<setcalc::Zonotope> Rz;       // lifted sets, steps 1..N
  std::vector<Eigen::VectorXd> x_center;   // state centers
  std::vector<Eigen::VectorXd> x_radius;   // state interval radii
};

struct SymbolicTube {
  int N = 0;
  int n_inputs = 0;
  std::vector<TDef> tdefs;
  std::vector<TubeStep> steps;  // index i holds step i+1

  int num_t() const { return static_cast<int>(tdefs.size()); }
  /// Tight auxiliary values t_j = |a_j' u + b_j| for a concrete input sequence.
  Eigen::VectorXd tight_t(const Eigen::VectorXd& u) const;
  /// Numeric recursion reproduced from the symbolic data at a concrete input
  /// sequence; mirrors the schedule used during construction.
  TubeEval evaluate(const Eigen::VectorXd& u) const;
};

/// Builds the tube for horizon N from the lifted initial point z0 with the
/// head velocity held at eps_center and radius eps_max. Model-set generators
/// must be row-supported (single nonzero row); generators whose direction is
/// constant are merged per axis once a step holds more than
/// gen_budget * nz of them (0 disables merging).
SymbolicTube build_symbolic_tube(const LearnedSetModel& sm, const Eigen::VectorXd& z0,
                                 double eps_center, double eps_max, double theta_max, int N,
                                 int gen_budget = 0);

}  // namespace rnddpc::reach
