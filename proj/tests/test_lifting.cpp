#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <random>

#include "rnddpc/lifting.hpp"
#include "rnddpc/platoon.hpp"
#include "rnddpc/serialize.hpp"
#include "test_util.hpp"

using namespace rnddpc;
using namespace rnddpc::lifting;

namespace {

// Sequences generated by a known lifted-linear system, optionally with
// per-step process noise on the lifted recursion.
struct Synthetic {
  EdmdMatrices truth;
  platoon::Sequences seqs;
};

Synthetic make_synthetic(std::mt19937_64& eng, Eigen::Index nz, Eigen::Index nx, int T,
                         double noise) {
  Synthetic s;
  Eigen::MatrixXd A = testutil::random_matrix(eng, nz, nz, 1.0);
  A *= 0.9 / A.eigenvalues().cwiseAbs().maxCoeff();
  s.truth.A = A;
  s.truth.B = testutil::random_vector(eng, nz, 1.0);
  s.truth.H = testutil::random_vector(eng, nz, 1.0);
  s.truth.J = testutil::random_vector(eng, nz, 1.0);
  s.truth.C = testutil::random_matrix(eng, nx, nz, 1.0);

  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd Z(nz, T + 1), X(nx, T + 1);
  Eigen::RowVectorXd U(T), E(T), F(T);
  Z.col(0) = testutil::random_vector(eng, nz, 1.0);
  X.col(0) = s.truth.C * Z.col(0);
  for (int k = 0; k < T; ++k) {
    U(k) = u(eng);
    E(k) = u(eng);
    F(k) = u(eng);
    Eigen::VectorXd w = noise * testutil::random_beta(eng, nz);
    Z.col(k + 1) =
        s.truth.A * Z.col(k) + s.truth.B * U(k) + s.truth.H * E(k) + s.truth.J * F(k) + w;
    X.col(k + 1) = s.truth.C * Z.col(k + 1) + noise * testutil::random_beta(eng, nx);
  }
  s.seqs.U_ = U;
  s.seqs.E_ = E;
  s.seqs.F_ = F;
  s.seqs.Z_ = Z.leftCols(T);
  s.seqs.Zp = Z.rightCols(T);
  s.seqs.X_ = X.leftCols(T);
  s.seqs.Xp = X.rightCols(T);
  return s;
}

platoon::DataLog small_log(int T = 800, std::uint64_t seed = 21) {
  platoon::PlatoonConfig cfg;
  return platoon::collect_data(cfg, T, platoon::CollectOptions{}, seed);
}

}  // namespace

TEST_CASE("lift passes the state block through") {
  std::mt19937_64 eng(1);
  DeepEdmdNet net = DeepEdmdNet::init(6, {8, 8}, 12, 3);
  Encoder enc = net.to_encoder();
  for (int i = 0; i < 20; ++i) {
    Eigen::VectorXd x = testutil::random_vector(eng, 6, 20.0);
    Eigen::VectorXd z = enc.lift(x);
    CHECK(z.size() == 12);
    CHECK((z.head(6) - x).cwiseAbs().maxCoeff() == 0.0);
    CHECK(enc.lift(x) == z);  // deterministic
  }
}

TEST_CASE("zero-weight encoder produces the bias") {
  DeepEdmdNet net = DeepEdmdNet::init(4, {5}, 7, 3);
  for (auto& l : net.enc) l.W.setZero();
  net.enc.back().b = Eigen::VectorXd::Constant(3, 1.25);
  Encoder enc = net.to_encoder();
  std::mt19937_64 eng(2);
  Eigen::MatrixXd g = enc.features(testutil::random_matrix(eng, 4, 5, 10.0));
  CHECK((g.array() == 1.25).all());
}

TEST_CASE("forward_predict identity and linearity") {
  KoopmanModel m;
  m.encoder = identity_encoder(3);
  m.A = Eigen::MatrixXd::Identity(3, 3);
  m.B = Eigen::VectorXd::Zero(3);
  m.H = Eigen::VectorXd::Zero(3);
  m.J = Eigen::VectorXd::Zero(3);
  m.C = Eigen::MatrixXd::Identity(3, 3);
  Eigen::VectorXd z(3);
  z << 1, 2, 3;
  CHECK((forward_predict(m, z, 5, 7, 9).z_next - z).norm() == 0.0);

  std::mt19937_64 eng(3);
  m.B = testutil::random_vector(eng, 3, 1.0);
  Eigen::VectorXd d0 = forward_predict(m, z, 0, 0, 0).z_next;
  Eigen::VectorXd d1 = forward_predict(m, z, 1, 0, 0).z_next;
  Eigen::VectorXd d2 = forward_predict(m, z, 2, 0, 0).z_next;
  CHECK(((d2 - d0) - 2.0 * (d1 - d0)).norm() < 1e-12);
}

TEST_CASE("edmd recovers a noise-free lifted-linear system") {
  std::mt19937_64 eng(4);
  Synthetic s = make_synthetic(eng, 5, 3, 200, 0.0);
  EdmdMatrices fit = edmd_least_squares(s.seqs);
  CHECK((fit.A - s.truth.A).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((fit.B - s.truth.B).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((fit.H - s.truth.H).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((fit.J - s.truth.J).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((fit.C - s.truth.C).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("edmd optimality: residual orthogonal to the regressor rows") {
  std::mt19937_64 eng(5);
  Synthetic s = make_synthetic(eng, 4, 2, 300, 0.05);
  EdmdMatrices fit = edmd_least_squares(s.seqs);
  Eigen::MatrixXd W(4 + 3, 300);
  W << s.seqs.Z_, s.seqs.U_, s.seqs.E_, s.seqs.F_;
  Eigen::MatrixXd ABHJ(4, 7);
  ABHJ << fit.A, fit.B, fit.H, fit.J;
  Eigen::MatrixXd R = s.seqs.Zp - ABHJ * W;
  CHECK((R * W.transpose()).cwiseAbs().maxCoeff() < 1e-7 * W.cwiseAbs().maxCoeff());
}

TEST_CASE("identity lift reduces to ordinary linear system id") {
  std::mt19937_64 eng(6);
  Synthetic s = make_synthetic(eng, 4, 4, 250, 0.0);
  s.seqs.X_ = s.seqs.Z_;  // treat the lifted state as the physical state
  s.seqs.Xp = s.seqs.Zp;
  EdmdMatrices fit = edmd_least_squares(s.seqs);
  CHECK((fit.C - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((fit.A - s.truth.A).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("rank errors name the deficient block") {
  std::mt19937_64 eng(7);
  Synthetic s = make_synthetic(eng, 5, 3, 6, 0.0);  // T < nz + 3
  CHECK_THROWS_WITH_AS(edmd_least_squares(s.seqs), doctest::Contains("regressor"),
                       std::invalid_argument);

  Synthetic s2 = make_synthetic(eng, 4, 2, 100, 0.0);
  s2.seqs.Zp.row(2).setZero();
  s2.seqs.Zp.row(3).setZero();
  CHECK_THROWS_WITH_AS(edmd_least_squares(s2.seqs), doctest::Contains("Z+"),
                       std::invalid_argument);
}

TEST_CASE("identity-lift recovery error shrinks with the noise level") {
  std::mt19937_64 eng(8);
  double prev = -1.0;
  for (double noise : {1e-1, 1e-2, 1e-3}) {
    Synthetic s = make_synthetic(eng, 4, 4, 2000, noise);
    EdmdMatrices fit = edmd_least_squares(s.seqs);
    const double err = (fit.A - s.truth.A).cwiseAbs().maxCoeff();
    if (prev >= 0.0) CHECK(err < prev);
    prev = err;
  }
  CHECK(prev < 1e-3);
}

TEST_CASE("loss gradients match central finite differences") {
  std::mt19937_64 eng(9);
  DeepEdmdNet net = DeepEdmdNet::init(6, {8, 6}, 12, 17);
  TrainConfig cfg;

  Batch b;
  const int B = 8;
  b.X0 = testutil::random_matrix(eng, 6, B, 15.0).cwiseAbs();
  b.X1 = b.X0 + testutil::random_matrix(eng, 6, B, 0.5);
  b.u = testutil::random_matrix(eng, 1, B, 2.0);
  b.e = testutil::random_matrix(eng, 1, B, 2.0).array() + 19.0;
  b.f = testutil::random_matrix(eng, 1, B, 2.0);

  DeepEdmdNet grad = DeepEdmdNet::zeros_like(net);
  net.loss_and_grad(b, cfg, grad);

  auto params = net.param_blocks();
  auto grads = grad.param_blocks();
  std::uniform_int_distribution<int> pick_block(0, static_cast<int>(params.size()) - 1);
  const double h = 1e-4;
  int checked = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const int blk = pick_block(eng);
    std::uniform_int_distribution<Eigen::Index> pick(0, params[static_cast<std::size_t>(blk)].second - 1);
    const Eigen::Index i = pick(eng);
    double* w = params[static_cast<std::size_t>(blk)].first + i;
    const double g = grads[static_cast<std::size_t>(blk)].first[i];

    const double w0 = *w;
    *w = w0 + h;
    const double lp = net.loss(b, cfg).total;
    *w = w0 - h;
    const double lm = net.loss(b, cfg).total;
    *w = w0;
    const double fd = (lp - lm) / (2.0 * h);
    // the difference quotient itself carries cancellation noise of order
    // eps * L / h, which dominates for near-zero gradients
    const double fd_noise =
        200.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(lp), std::abs(lm)) / h;
    CHECK(std::abs(fd - g) <= 1e-4 * std::max(std::abs(g), std::abs(fd)) + fd_noise);
    ++checked;
  }
  CHECK(checked == 400);
}

TEST_CASE("short training run descends and is reproducible") {
  platoon::DataLog log = small_log(700, 33);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.patience = 10;
  cfg.hidden = {16, 16};
  cfg.seed = 5;
  TrainReport rep;
  KoopmanModel m = train_deep_edmd(log, cfg, &rep);
  REQUIRE(rep.train_loss.size() >= 2);
  CHECK(rep.train_loss.back() < rep.train_loss.front());
  CHECK(m.nz() == 12);
  CHECK(m.encoder.feature_dim() == 6);

  KoopmanModel m2 = train_deep_edmd(log, cfg, nullptr);
  CHECK(m.A == m2.A);
  CHECK(m.C == m2.C);
}

TEST_CASE("training rejects empty splits") {
  platoon::DataLog log = small_log(200, 34);
  TrainConfig cfg;
  cfg.batch = 64;
  cfg.split_train = 1.0;
  cfg.split_test = 0.0;
  cfg.split_valid = 0.0;
  CHECK_THROWS_AS(train_deep_edmd(log, cfg, nullptr), std::invalid_argument);
}

TEST_CASE("residuals vanish on exact lifted-linear data") {
  std::mt19937_64 eng(10);
  const int n2 = 4, T = 60;
  KoopmanModel m;
  m.encoder = identity_encoder(n2);
  Eigen::MatrixXd A = testutil::random_matrix(eng, n2, n2, 0.4);
  m.A = A;
  m.B = testutil::random_vector(eng, n2, 1.0);
  m.H = testutil::random_vector(eng, n2, 1.0);
  m.J = testutil::random_vector(eng, n2, 1.0);
  m.C = Eigen::MatrixXd::Identity(n2, n2);

  platoon::DataLog log;
  log.n = n2 / 2;
  log.ts = 0.05;
  log.U = testutil::random_vector(eng, T + 1, 1.0);
  log.E = testutil::random_vector(eng, T + 1, 1.0);
  log.F = testutil::random_vector(eng, T + 1, 1.0);
  log.X.resize(n2, T + 1);
  log.X.col(0) = testutil::random_vector(eng, n2, 1.0);
  for (int k = 0; k < T; ++k) {
    log.X.col(k + 1) = m.A * log.X.col(k) + m.B * log.U(k) + m.H * log.E(k) + m.J * log.F(k);
  }

  ResidualStats st = extract_residuals(m, log);
  CHECK(st.sigma.cols() == T);
  CHECK(st.rho.cols() == T);
  CHECK(st.sigma.cwiseAbs().maxCoeff() < 1e-10);
  CHECK(st.rho.cwiseAbs().maxCoeff() < 1e-10);

  // all-zero residuals fall back to the floor
  choose_bounds(st, 1.0, 1.0);
  CHECK((st.sigma_max.array() == 1e-6).all());
  CHECK(st.sigma_coverage == 1.0);

  override_bounds_uniform(st, 0.3, 0.3);
  CHECK((st.sigma_max.array() == 0.3).all());
  CHECK((st.rho_max.array() == 0.3).all());
}

TEST_CASE("choose_bounds with full coverage returns the max residual") {
  ResidualStats st;
  st.sigma.resize(2, 5);
  st.sigma << 1, -2, 0.5, 0, 1.5, 0.1, 0.2, -0.4, 0.3, 0;
  st.rho = st.sigma;
  choose_bounds(st, 1.0, 1.0);
  CHECK(st.sigma_max(0) == doctest::Approx(2.0));
  CHECK(st.sigma_max(1) == doctest::Approx(0.4));
  choose_bounds(st, 0.8, 0.8);
  CHECK(st.sigma_max(0) == doctest::Approx(1.5));
  CHECK_THROWS_AS(choose_bounds(st, 0.0, 0.5), std::invalid_argument);
}

TEST_CASE("model json round trip and stable hash") {
  platoon::DataLog log = small_log(700, 35);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.hidden = {8};
  KoopmanModel m = train_deep_edmd(log, cfg, nullptr);
  auto j = to_json(m);
  KoopmanModel back = model_from_json(j);
  CHECK(back.A == m.A);
  CHECK(back.C == m.C);
  CHECK(back.encoder.layers.size() == m.encoder.layers.size());
  CHECK(back.encoder.layers[0].W == m.encoder.layers[0].W);

  serialize::save_json_file("model_a.json", j);
  serialize::save_json_file("model_b.json", to_json(back));
  CHECK(serialize::file_hash("model_a.json") == serialize::file_hash("model_b.json"));
  std::remove("model_a.json");
  std::remove("model_b.json");
}
