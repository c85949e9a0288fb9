#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>

#include "rnddpc/harness.hpp"
#include "rnddpc/rng.hpp"
#include "rnddpc/serialize.hpp"

namespace fs = std::filesystem;
using namespace rnddpc;

namespace {

struct GlobalOpts {
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;
};

harness::Config load_config(const GlobalOpts& g) {
  harness::Config cfg = g.config_path.empty() ? harness::Config::defaults()
                                              : harness::Config::from_file(g.config_path);
  if (g.seed_set) cfg.set("seed", std::to_string(g.seed));
  return cfg;
}

std::string out_root(const GlobalOpts& g) {
  if (const char* env = std::getenv("RNDDPC_OUT"); env != nullptr && *env != '\0') return env;
  return g.out_dir;
}

void write_sidecar(const std::string& path, const harness::Config& cfg, std::uint64_t seed) {
  serialize::save_json_file(path + ".meta.json",
                            serialize::json{{"config_hash", cfg.hash()}, {"seed", seed}});
}

bool sidecar_matches(const std::string& path, const harness::Config& cfg, std::uint64_t seed) {
  if (!fs::exists(path) || !fs::exists(path + ".meta.json")) return false;
  try {
    auto meta = serialize::load_json_file(path + ".meta.json");
    return meta.value("config_hash", "") == cfg.hash() &&
           meta.value("seed", std::uint64_t(0)) == seed;
  } catch (...) {
    return false;
  }
}

platoon::DataLog ensure_datalog(const harness::Config& cfg, const std::string& dir,
                                std::uint64_t seed, bool force = false) {
  const std::string path = dir + "/datalog.csv";
  if (!force && fs::exists(path) && fs::exists(path + ".meta.json")) {
    platoon::DataLog cached = platoon::load_datalog_csv(path);
    if (cached.config_hash == cfg.hash() && cached.seed == substream_seed(seed, "stage/collect")) {
      return cached;
    }
  }
  platoon::DataLog log = harness::stage_collect(cfg, seed);
  platoon::save_datalog_csv(log, path);
  std::cout << "collect: wrote " << path << " (T = " << log.T() << ")\n";
  return log;
}

lifting::KoopmanModel ensure_model(const harness::Config& cfg, const std::string& dir,
                                   const platoon::DataLog& log, std::uint64_t seed,
                                   bool force = false) {
  const std::string path = dir + "/model.json";
  if (!force && sidecar_matches(path, cfg, seed)) {
    return lifting::model_from_json(serialize::load_json_file(path));
  }
  lifting::TrainReport rep;
  lifting::KoopmanModel m = harness::stage_train(cfg, log, seed, &rep);
  serialize::save_json_file(path, lifting::to_json(m));
  write_sidecar(path, cfg, seed);
  std::cout << "train: wrote " << path << " (best epoch " << rep.best_epoch
            << ", held-out state rmse " << rep.test_state_rmse << ")\n";
  return m;
}

harness::Suite ensure_suite(const harness::Config& cfg, const std::string& dir,
                            std::uint64_t seed) {
  harness::Suite s;
  s.pc = harness::platoon_config(cfg);
  s.log = ensure_datalog(cfg, dir, seed);
  s.koopman = ensure_model(cfg, dir, s.log, seed);

  const std::string sets_path = dir + "/sets.json";
  if (sidecar_matches(sets_path, cfg, seed)) {
    s.koopman_sets = reach::set_model_from_json(serialize::load_json_file(sets_path));
  } else {
    harness::SetLearnResult r = harness::stage_learn_sets(cfg, s.log, s.koopman);
    s.koopman_sets = r.sets;
    s.koopman_sets.data_hash = serialize::file_hash(dir + "/datalog.csv");
    serialize::save_json_file(sets_path, reach::to_json(s.koopman_sets));
    write_sidecar(sets_path, cfg, seed);
    reach::save_tightness_csv(r.tightness, dir + "/tightness.csv");
    std::cout << "learn-sets: wrote " << sets_path << " (" << s.koopman_sets.M_abhj.num_generators()
              << " generators, sigma coverage " << r.residuals.sigma_coverage << ")\n";
  }

  const std::string lin_model_path = dir + "/model_linear.json";
  if (sidecar_matches(lin_model_path, cfg, seed)) {
    s.linear = lifting::model_from_json(serialize::load_json_file(lin_model_path));
  } else {
    s.linear = harness::stage_linear_model(cfg, s.log);
    serialize::save_json_file(lin_model_path, lifting::to_json(s.linear));
    write_sidecar(lin_model_path, cfg, seed);
  }

  const std::string lin_sets_path = dir + "/sets_linear.json";
  if (sidecar_matches(lin_sets_path, cfg, seed)) {
    s.linear_sets = reach::set_model_from_json(serialize::load_json_file(lin_sets_path));
  } else {
    harness::SetLearnResult r = harness::stage_learn_sets(cfg, s.log, s.linear);
    s.linear_sets = r.sets;
    s.linear_sets.data_hash = serialize::file_hash(dir + "/datalog.csv");
    serialize::save_json_file(lin_sets_path, reach::to_json(s.linear_sets));
    write_sidecar(lin_sets_path, cfg, seed);
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust nonlinear data-driven predictive control for mixed vehicle platoons"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  GlobalOpts g;
  app.add_option("--config", g.config_path, "declarative config file (key = value lines)");
  app.add_option("--out", g.out_dir, "output directory (env RNDDPC_OUT overrides)");
  auto* seed_opt = app.add_option("--seed", g.seed, "master seed");

  auto* cmd_collect = app.add_subcommand("collect", "record an excitation rollout");
  cmd_collect->fallthrough();
  auto* cmd_train = app.add_subcommand("train", "train the lifted model on a recorded rollout");
  cmd_train->fallthrough();
  auto* cmd_sets = app.add_subcommand("learn-sets", "learn the model sets and tightness report");
  cmd_sets->fallthrough();
  auto* cmd_run = app.add_subcommand("run", "closed-loop scenario run");
  cmd_run->fallthrough();
  auto* cmd_report = app.add_subcommand("report", "aggregate run logs into a metrics table");
  cmd_report->fallthrough();
  auto* cmd_verify = app.add_subcommand("verify", "run the property suites");
  cmd_verify->fallthrough();

  std::string scenario = "emergency";
  std::string controller = "rnddpc";
  int run_seeds = 1;
  cmd_run->add_option("--scenario", scenario, "emergency | constant | cycle:<csv>");
  cmd_run->add_option("--controller", controller, "rnddpc | zpc | kmpc | lmpc | allhdv");
  cmd_run->add_option("--seeds", run_seeds, "number of consecutive run seeds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 2;
  }

  try {
    g.seed_set = seed_opt->count() > 0;
    harness::Config cfg = load_config(g);
    const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_num("seed"));
    const std::string dir = out_root(g);
    fs::create_directories(dir);

    if (cmd_collect->parsed()) {
      ensure_datalog(cfg, dir, seed, true);
      return 0;
    }
    if (cmd_train->parsed()) {
      platoon::DataLog log = ensure_datalog(cfg, dir, seed);
      ensure_model(cfg, dir, log, seed, true);
      return 0;
    }
    if (cmd_sets->parsed()) {
      harness::Suite s = ensure_suite(cfg, dir, seed);
      std::cout << "learn-sets: artifacts in " << dir << "\n";
      return 0;
    }
    if (cmd_run->parsed()) {
      harness::Suite suite = ensure_suite(cfg, dir, seed);
      const std::string model_hash = fs::exists(dir + "/model.json")
                                         ? serialize::file_hash(dir + "/model.json")
                                         : std::string();
      control::ControllerConfig cc = harness::controller_config(cfg, controller);
      std::vector<harness::MetricsReport> reports;
      double worst_feasible = 1.0;
      for (int i = 0; i < run_seeds; ++i) {
        const std::uint64_t run_seed = seed + static_cast<std::uint64_t>(i);
        control::TrajectoryLog log =
            harness::stage_run(cfg, suite, scenario, controller, run_seed);
        log.model_hash = model_hash;
        const std::string path = dir + "/run_" + controller + "_" + scenario + "_seed" +
                                 std::to_string(run_seed) + ".csv";
        control::save_trajectory_csv(log, path);
        harness::MetricsReport rep = harness::compute_metrics(log, cc);
        reports.push_back(rep);
        worst_feasible = std::min(worst_feasible, rep.feasible_fraction);
        std::cout << "run: " << path << "  R_v " << rep.R_v << "  R_s " << rep.R_s << "  R_c "
                  << rep.R_c << "  R_t " << rep.R_t << " ms  feasible "
                  << rep.feasible_fraction << "\n";
      }
      harness::MetricsReport mean = harness::aggregate(reports);
      std::cout << "mean over " << mean.runs << " run(s): R_v " << mean.R_v << "  R_s " << mean.R_s
                << "  R_c " << mean.R_c << "  R_t " << mean.R_t << " ms\n";
      return worst_feasible < 0.5 ? 3 : 0;
    }
    if (cmd_report->parsed()) {
      std::map<std::string, std::vector<harness::MetricsReport>> grouped;
      std::string expect_hash;
      for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("run_", 0) != 0 || entry.path().extension() != ".csv") continue;
        control::TrajectoryLog log = control::load_trajectory_csv(entry.path().string());
        if (expect_hash.empty()) expect_hash = log.config_hash;
        if (log.config_hash != expect_hash) {
          std::cerr << "report: refusing to aggregate " << name
                    << ": config hash mismatch with earlier logs\n";
          return 2;
        }
        grouped[log.controller].push_back(
            harness::compute_metrics(log, harness::controller_config(cfg, log.controller)));
      }
      if (grouped.empty()) {
        std::cerr << "report: no run_*.csv logs in " << dir << "\n";
        return 2;
      }
      std::vector<harness::MetricsReport> rows;
      for (auto& [name, reports] : grouped) rows.push_back(harness::aggregate(reports));
      harness::write_metrics_csv(rows, dir + "/metrics.csv");
      harness::write_metrics_markdown(rows, dir + "/metrics.md");
      std::cout << "| controller | runs | R_v | R_s | R_c | R_t (ms) | feasible |\n";
      for (const auto& r : rows) {
        std::cout << "| " << r.controller << " | " << r.runs << " | " << r.R_v << " | " << r.R_s
                  << " | " << r.R_c << " | " << r.R_t << " | " << r.feasible_fraction << " |\n";
      }
      std::cout << "report: wrote " << dir << "/metrics.csv and metrics.md\n";
      return 0;
    }
    if (cmd_verify->parsed()) {
      const bool ok = harness::run_verification(seed, true);
      std::cout << (ok ? "verify: all property suites passed\n"
                       : "verify: property suite FAILURES\n");
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
