#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "rnddpc/rng.hpp"

namespace rnddpc::platoon {

/// Optimal velocity model gains and spacing thresholds.
struct OVMParams {
  double k1 = 0.6;    // 1/s
  double k2 = 0.9;    // 1/s
  double v_max = 38;  // m/s
  double s_max = 35;  // m
  double s_min = 5;   // m
};

/// Mixed platoon: vehicle 1 is the CAV, vehicles 2..n are HDVs, all behind a
/// head vehicle whose velocity acts as the disturbance input.
struct PlatoonConfig {
  int n = 3;
  double ts = 0.05;     // s
  OVMParams ovm;        // shared by all HDVs and by the pre-designed controller
  double eps_max = 2;   // bound on head-velocity deviation (m/s)
  double theta_max = 3; // bound on attack acceleration (m/s^2)
  double omega_max = 0.03;  // per-component noise bound
  double headway = 1.2; // time headway of the CAV reference (s)

  Eigen::Index state_dim() const { return 2 * n; }
};

/// Stacked state [s_1, v_1, ..., s_n, v_n] plus the current head velocity.
struct PlatoonState {
  Eigen::VectorXd x;  // 2n
  double v0 = 0.0;    // m/s
};

enum class AttackMode { none, random_bounded, time_delay };

/// Head-vehicle velocity profile plus the adverse-signal configuration of a
/// closed-loop scenario.
struct ScenarioProfile {
  Eigen::VectorXd v0;  // one sample per control period, all >= 0
  double ts = 0.05;
  AttackMode attack = AttackMode::none;
  int steps() const { return static_cast<int>(v0.size()); }
};

/// Recorded excitation rollout: inputs, disturbances, attacks and states, all
/// of length T+1 columns.
struct DataLog {
  Eigen::VectorXd U;  // applied CAV accelerations
  Eigen::VectorXd E;  // head velocities
  Eigen::VectorXd F;  // attack signals
  Eigen::MatrixXd X;  // 2n x (T+1)
  std::uint64_t seed = 0;
  std::string config_hash;
  int n = 0;
  double ts = 0.0;

  Eigen::Index T() const { return U.size() - 1; }
};

/// Sequence partitioning of a data log, plus the lifted rows.
struct Sequences {
  Eigen::MatrixXd U_;   // 1 x T
  Eigen::MatrixXd E_;   // 1 x T
  Eigen::MatrixXd F_;   // 1 x T
  Eigen::MatrixXd X_;   // 2n x T
  Eigen::MatrixXd Xp;   // 2n x T
  Eigen::MatrixXd Z_;   // nz x T
  Eigen::MatrixXd Zp;   // nz x T
};

/// Spacing-dependent desired velocity, clamped to [0, v_max] outside
/// (s_min, s_max) and following the raised-cosine profile inside.
double ovm_desired_velocity(double s, const OVMParams& p);

/// Inverse of the desired-velocity profile on (0, v_max).
double ovm_inverse_velocity(double v, const OVMParams& p);

/// k1 (V(s) - v) + k2 (v_prev - v).
double ovm_accel(double s, double v, double v_prev, const OVMParams& p);

/// One simulation step. `eps` is the head velocity during this transition,
/// `attack` adds to the CAV acceleration, `noise` is added to the full state
/// afterwards. Velocities are clamped at zero from below.
PlatoonState step_platoon(const PlatoonState& state, double u_cav, double eps, double attack,
                          const Eigen::VectorXd& noise, const PlatoonConfig& cfg);

/// Reference state for cruising at v_star: the CAV tracks the constant
/// time-headway spacing, HDVs track the inverse OVM spacing.
Eigen::VectorXd desired_state(double v_star, const PlatoonConfig& cfg);

/// State with every spacing at the OVM equilibrium for v_star; the fixed point
/// of the pre-designed controller used during data collection.
PlatoonState ovm_equilibrium_state(double v_star, const PlatoonConfig& cfg);

struct CollectOptions {
  /// Head-velocity excitation: `uniform` redraws inside [eps_low, eps_high]
  /// every step; `levels` holds random levels from that range for hold_s
  /// seconds with per-step jitter, sweeping the whole operating envelope.
  enum class Profile { uniform, levels };
  Profile profile = Profile::levels;
  double v_star = 19.0;
  double eps_low = 6.0;
  double eps_high = 21.0;
  double hold_s = 2.0;
  double jitter = 1.0;
  double theta_amp = 2.0;
  double noise_amp = 0.03;
  /// Extra uniform excitation added to the pre-designed controller so the
  /// input row is persistently exciting rather than a pure state feedback.
  double u_dither = 0.5;
  /// Pre-designed CAV controller: the constant-time-headway law keeps the
  /// CAV exploring around the spacing it must track online; `ovm` uses the
  /// same car-following law as the HDVs.
  enum class CavPolicy { headway, ovm };
  CavPolicy cav_policy = CavPolicy::headway;
};

/// Desired velocity of the constant-time-headway policy: (s - s_min)/t_h,
/// clamped to [0, v_max].
double headway_desired_velocity(double s, double headway, const OVMParams& p);

/// Car-following acceleration of the pre-designed CAV policy.
double cav_policy_accel(CollectOptions::CavPolicy policy, double s, double v, double v_prev,
                        double headway, const OVMParams& p);

/// Closed-loop excitation rollout of length T under the OVM pre-controller
/// with seeded random disturbance, attack and noise streams.
DataLog collect_data(const PlatoonConfig& cfg, int T, const CollectOptions& opts,
                     std::uint64_t master_seed);

/// Minus/plus sequence split; lift_columns maps a 2n x T state block to its
/// nz x T lifted block.
Sequences build_sequences(const DataLog& log,
                          const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& lift_columns);

/// 30 s braking scenario: cruise at 20 m/s, brake at 5 m/s^2 down to 5 m/s,
/// hold 5 s, accelerate back to 20 m/s.
ScenarioProfile emergency_profile(const PlatoonConfig& cfg);

/// Driving-cycle ingestion from a `t,v` CSV, resampled to the ts grid.
ScenarioProfile load_cycle_csv(const std::string& path, const PlatoonConfig& cfg);

/// Attack value at step k. `u_history` must contain the applied inputs up to
/// and including u(k) for the time-delay mode; delayed steps before the
/// history fills return 0.
double attack_signal(AttackMode mode, int k, const std::vector<double>& u_history, int tau,
                     double amp, Rng& rng);

void save_datalog_csv(const DataLog& log, const std::string& csv_path);
DataLog load_datalog_csv(const std::string& csv_path);

}  // namespace rnddpc::platoon
