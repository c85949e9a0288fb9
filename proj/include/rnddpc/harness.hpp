#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rnddpc/control.hpp"
#include "rnddpc/lifting.hpp"
#include "rnddpc/platoon.hpp"
#include "rnddpc/reach.hpp"

namespace rnddpc::harness {

/// Flat declarative configuration: one `dotted.key = value` per line, `#`
/// comments. Unknown keys are rejected so typos surface immediately.
class Config {
 public:
  static Config defaults();
  /// Defaults overlaid with the key/value pairs of a config file.
  static Config from_file(const std::string& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  std::string get_str(const std::string& key) const;
  double get_num(const std::string& key) const;
  int get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  /// Canonical sorted key=value text.
  std::string dump() const;
  /// Stable fingerprint of the effective configuration.
  std::string hash() const;

 private:
  std::map<std::string, std::string> kv_;
};

platoon::PlatoonConfig platoon_config(const Config& cfg);
platoon::CollectOptions collect_options(const Config& cfg);
lifting::TrainConfig train_config(const Config& cfg, std::uint64_t seed);
/// Controller settings; kmpc and lmpc run the longer baseline horizon.
control::ControllerConfig controller_config(const Config& cfg, const std::string& controller);

struct MetricsReport {
  std::string controller;
  double R_v = 0, R_s = 0, R_c = 0, R_t = 0;
  Eigen::VectorXd per_vehicle_v, per_vehicle_s;
  double feasible_fraction = 1.0;
  int runs = 1;
};

/// Tracking, cost and timing indices of one closed-loop log.
MetricsReport compute_metrics(const control::TrajectoryLog& log,
                              const control::ControllerConfig& cc);

/// Mean of per-run metrics; all logs must share the controller name.
MetricsReport aggregate(const std::vector<MetricsReport>& reports);

void write_metrics_csv(const std::vector<MetricsReport>& rows, const std::string& path);
void write_metrics_markdown(const std::vector<MetricsReport>& rows, const std::string& path);

// ---------------------------------------------------------------------------
// Pipeline stages. Each stage is deterministic in (config, seed) and the
// orchestration caches artifacts on disk keyed by the config hash.
// ---------------------------------------------------------------------------

struct Suite {
  platoon::PlatoonConfig pc;
  platoon::DataLog log;
  lifting::KoopmanModel koopman;
  reach::LearnedSetModel koopman_sets;
  lifting::KoopmanModel linear;        // identity-lift least-squares model
  reach::LearnedSetModel linear_sets;  // identity-lift model sets
};

platoon::DataLog stage_collect(const Config& cfg, std::uint64_t seed);
lifting::KoopmanModel stage_train(const Config& cfg, const platoon::DataLog& log,
                                  std::uint64_t seed, lifting::TrainReport* report = nullptr);

struct SetLearnResult {
  reach::LearnedSetModel sets;
  lifting::ResidualStats residuals;
  reach::TightnessReport tightness;
};

/// Residual bounds plus matrix-zonotope regression on a column-subsampled
/// window of the log, against the given lifting.
SetLearnResult stage_learn_sets(const Config& cfg, const platoon::DataLog& log,
                                const lifting::KoopmanModel& model);

/// Identity-lift least-squares model for the linear baselines.
lifting::KoopmanModel stage_linear_model(const Config& cfg, const platoon::DataLog& log);

/// Full artifact build: collect, train, learn sets for both liftings.
Suite build_suite(const Config& cfg, std::uint64_t seed,
                  lifting::TrainReport* train_report = nullptr);

std::unique_ptr<control::Controller> make_controller(const std::string& name, const Suite& suite,
                                                     const Config& cfg);

platoon::ScenarioProfile make_scenario(const Config& cfg, const std::string& name);

control::TrajectoryLog stage_run(const Config& cfg, const Suite& suite,
                                 const std::string& scenario, const std::string& controller,
                                 std::uint64_t seed);

/// Quick property battery over the set calculus, the reachability recursion
/// and the solver; prints one line per check. Returns false on any failure.
bool run_verification(std::uint64_t seed, bool verbose);

}  // namespace rnddpc::harness
