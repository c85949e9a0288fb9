#include <cmath>
#include <stdexcept>

#include "rnddpc/harness.hpp"
#include "rnddpc/rng.hpp"

namespace rnddpc::harness {

platoon::DataLog stage_collect(const Config& cfg, std::uint64_t seed) {
  platoon::PlatoonConfig pc = platoon_config(cfg);
  platoon::DataLog log = platoon::collect_data(pc, cfg.get_int("collect.T"),
                                               collect_options(cfg),
                                               substream_seed(seed, "stage/collect"));
  log.config_hash = cfg.hash();
  return log;
}

lifting::KoopmanModel stage_train(const Config& cfg, const platoon::DataLog& log,
                                  std::uint64_t seed, lifting::TrainReport* report) {
  return lifting::train_deep_edmd(log, train_config(cfg, substream_seed(seed, "stage/train")),
                                  report);
}

namespace {

// Strided transition subsample for set learning: keeps t_set (k, k+1) pairs
// spread over the whole record. The regression only needs valid transition
// pairs, so non-consecutive pairs are fine.
platoon::Sequences subsample_sequences(const platoon::DataLog& log,
                                       const lifting::KoopmanModel& model, int t_set) {
  const Eigen::Index total = log.T();
  const Eigen::Index count = (t_set <= 0 || t_set >= total) ? total : t_set;
  platoon::Sequences s;
  s.U_.resize(1, count);
  s.E_.resize(1, count);
  s.F_.resize(1, count);
  s.X_.resize(log.X.rows(), count);
  s.Xp.resize(log.X.rows(), count);
  Eigen::MatrixXd X0(log.X.rows(), count), X1(log.X.rows(), count);
  for (Eigen::Index i = 0; i < count; ++i) {
    const Eigen::Index k = (i * total) / count;
    s.U_(0, i) = log.U(k);
    s.E_(0, i) = log.E(k);
    s.F_(0, i) = log.F(k);
    X0.col(i) = log.X.col(k);
    X1.col(i) = log.X.col(k + 1);
  }
  s.X_ = X0;
  s.Xp = X1;
  s.Z_ = model.encoder.lift(X0);
  s.Zp = model.encoder.lift(X1);
  return s;
}

SetLearnResult learn_sets_for(const Config& cfg, const platoon::DataLog& log,
                              const lifting::KoopmanModel& model) {
  SetLearnResult res;
  res.residuals = lifting::extract_residuals(model, log);
  const double sigma_cov = cfg.get_num("sets.sigma_coverage");
  const double rho_cov = cfg.get_num("sets.rho_coverage");
  if (sigma_cov > 0.0 && rho_cov > 0.0) {
    lifting::choose_bounds(res.residuals, sigma_cov, rho_cov);
  } else {
    lifting::override_bounds_uniform(res.residuals, cfg.get_num("sets.sigma_bound"),
                                     cfg.get_num("sets.rho_bound"));
  }

  platoon::Sequences seqs = subsample_sequences(log, model, cfg.get_int("sets.T_set"));

  const Eigen::Index nz = model.nz();
  setcalc::Zonotope z_sigma = setcalc::Zonotope::box(Eigen::VectorXd::Zero(nz),
                                                     res.residuals.sigma_max);
  setcalc::Zonotope z_rho = setcalc::Zonotope::box(Eigen::VectorXd::Zero(model.state_dim()),
                                                   res.residuals.rho_max);
  const int budget = cfg.get_int("sets.matzono_order") * static_cast<int>(nz);
  res.sets = reach::learn_model_sets(seqs, z_sigma, z_rho, budget, /*materialize=*/budget > 0);

  Eigen::MatrixXd nominal_abhj(nz, nz + 3);
  nominal_abhj << model.A, model.B, model.H, model.J;
  res.tightness = reach::quantify_tightness(res.sets, nominal_abhj, model.C);
  return res;
}

}  // namespace

SetLearnResult stage_learn_sets(const Config& cfg, const platoon::DataLog& log,
                                const lifting::KoopmanModel& model) {
  return learn_sets_for(cfg, log, model);
}

lifting::KoopmanModel stage_linear_model(const Config& cfg, const platoon::DataLog& log) {
  lifting::KoopmanModel id;
  id.encoder = lifting::identity_encoder(log.X.rows());
  lifting::EdmdMatrices ls = lifting::edmd_least_squares(
      subsample_sequences(log, id, cfg.get_int("sets.T_set")));
  lifting::KoopmanModel m;
  m.encoder = lifting::identity_encoder(log.X.rows());
  m.A = ls.A;
  m.B = ls.B;
  m.H = ls.H;
  m.J = ls.J;
  m.C = ls.C;
  return m;
}

Suite build_suite(const Config& cfg, std::uint64_t seed, lifting::TrainReport* train_report) {
  Suite s;
  s.pc = platoon_config(cfg);
  s.log = stage_collect(cfg, seed);
  s.koopman = stage_train(cfg, s.log, seed, train_report);
  s.koopman_sets = stage_learn_sets(cfg, s.log, s.koopman).sets;
  s.linear = stage_linear_model(cfg, s.log);
  s.linear_sets = stage_learn_sets(cfg, s.log, s.linear).sets;
  return s;
}

std::unique_ptr<control::Controller> make_controller(const std::string& name, const Suite& suite,
                                                     const Config& cfg) {
  control::ControllerConfig cc = controller_config(cfg, name);
  if (name == "rnddpc") {
    return control::make_rnddpc(suite.koopman_sets, suite.koopman.encoder, suite.pc, cc, "rnddpc");
  }
  if (name == "zpc") {
    return control::make_rnddpc(suite.linear_sets, suite.linear.encoder, suite.pc, cc, "zpc");
  }
  if (name == "kmpc") return control::make_kmpc(suite.koopman, cc, "kmpc");
  if (name == "lmpc") return control::make_kmpc(suite.linear, cc, "lmpc");
  if (name == "allhdv") return control::make_allhdv(suite.pc, cc);
  throw std::runtime_error("unknown controller '" + name +
                           "' (expected rnddpc|zpc|kmpc|lmpc|allhdv)");
}

platoon::ScenarioProfile make_scenario(const Config& cfg, const std::string& name) {
  platoon::PlatoonConfig pc = platoon_config(cfg);
  platoon::ScenarioProfile prof;
  if (name == "emergency") {
    prof = platoon::emergency_profile(pc);
  } else if (name == "constant") {
    const int steps = static_cast<int>(std::round(cfg.get_num("scenario.duration") / pc.ts));
    prof.ts = pc.ts;
    prof.v0 = Eigen::VectorXd::Constant(steps, cfg.get_num("scenario.constant_v"));
  } else if (name.rfind("cycle:", 0) == 0) {
    prof = platoon::load_cycle_csv(name.substr(6), pc);
  } else if (name == "cycle") {
    prof = platoon::load_cycle_csv(cfg.get_str("scenario.cycle"), pc);
  } else {
    throw std::runtime_error("unknown scenario '" + name +
                             "' (expected emergency|constant|cycle:<path>)");
  }
  const std::string attack = cfg.get_str("scenario.attack");
  if (attack == "none") {
    prof.attack = platoon::AttackMode::none;
  } else if (attack == "random") {
    prof.attack = platoon::AttackMode::random_bounded;
  } else if (attack == "delay") {
    prof.attack = platoon::AttackMode::time_delay;
  } else {
    throw std::runtime_error("unknown scenario.attack '" + attack + "'");
  }
  return prof;
}

control::TrajectoryLog stage_run(const Config& cfg, const Suite& suite,
                                 const std::string& scenario, const std::string& controller,
                                 std::uint64_t seed) {
  auto ctrl = make_controller(controller, suite, cfg);
  platoon::ScenarioProfile prof = make_scenario(cfg, scenario);
  control::TrajectoryLog log =
      control::receding_horizon_run(*ctrl, prof, suite.pc, substream_seed(seed, "stage/run"));
  log.config_hash = cfg.hash();
  return log;
}

}  // namespace rnddpc::harness
