#include "rnddpc/lifting.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "rnddpc/rng.hpp"

namespace rnddpc::lifting {

namespace {

Eigen::MatrixXd relu(const Eigen::MatrixXd& a) { return a.cwiseMax(0.0); }

struct EncoderTrace {
  std::vector<Eigen::MatrixXd> pre;   // preactivation per layer
  std::vector<Eigen::MatrixXd> post;  // activation per layer (post[0] is the input)
};

Eigen::MatrixXd encoder_forward(const std::vector<DenseLayer>& enc, const Eigen::MatrixXd& X,
                                EncoderTrace* trace) {
  Eigen::MatrixXd h = X;
  if (trace != nullptr) trace->post.push_back(h);
  for (const auto& layer : enc) {
    Eigen::MatrixXd a = (layer.W * h).colwise() + layer.b;
    if (trace != nullptr) trace->pre.push_back(a);
    h = layer.relu ? relu(a) : a;
    if (trace != nullptr) trace->post.push_back(h);
  }
  return h;
}

// Accumulates layer gradients for one encoder pass; returns nothing upstream
// since the encoder input is data.
void encoder_backward(const std::vector<DenseLayer>& enc, const EncoderTrace& trace,
                      const Eigen::MatrixXd& dout, std::vector<DenseLayer>& grad) {
  Eigen::MatrixXd d = dout;
  for (int p = static_cast<int>(enc.size()) - 1; p >= 0; --p) {
    const auto& layer = enc[static_cast<std::size_t>(p)];
    Eigen::MatrixXd da = d;
    if (layer.relu) {
      da = d.cwiseProduct((trace.pre[static_cast<std::size_t>(p)].array() > 0.0).cast<double>().matrix());
    }
    grad[static_cast<std::size_t>(p)].W.noalias() += da * trace.post[static_cast<std::size_t>(p)].transpose();
    grad[static_cast<std::size_t>(p)].b.noalias() += da.rowwise().sum();
    if (p > 0) d = layer.W.transpose() * da;
  }
}

}  // namespace

Eigen::MatrixXd Encoder::features(const Eigen::MatrixXd& X) const {
  if (X.rows() != state_dim) throw std::invalid_argument("encoder: state dim mismatch");
  if (kind == Kind::identity) return Eigen::MatrixXd(0, X.cols());
  Eigen::MatrixXd Xs = in_scale.asDiagonal() * (X.colwise() - in_center);
  return encoder_forward(layers, Xs, nullptr);
}

Eigen::MatrixXd Encoder::lift(const Eigen::MatrixXd& X) const {
  if (kind == Kind::identity) return X;
  Eigen::MatrixXd Z(lifted_dim(), X.cols());
  Z.topRows(state_dim) = X;
  Z.bottomRows(feature_dim()) = features(X);
  return Z;
}

Eigen::VectorXd Encoder::lift(const Eigen::VectorXd& x) const {
  return Eigen::VectorXd(lift(Eigen::MatrixXd(x)));
}

Encoder identity_encoder(Eigen::Index state_dim) {
  Encoder e;
  e.kind = Encoder::Kind::identity;
  e.state_dim = state_dim;
  return e;
}

Prediction forward_predict(const KoopmanModel& m, const Eigen::VectorXd& z, double u, double eps,
                           double theta) {
  if (z.size() != m.nz()) throw std::invalid_argument("forward_predict: lifted dim mismatch");
  Prediction p;
  p.z_next = m.A * z + m.B * u + m.H * eps + m.J * theta;
  p.x_next = m.C * p.z_next;
  return p;
}

Eigen::MatrixXd pinv(const Eigen::MatrixXd& M, double rel_cutoff) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double cutoff = rel_cutoff * (sv.size() > 0 ? sv(0) : 0.0);
  Eigen::VectorXd inv = sv;
  for (Eigen::Index i = 0; i < sv.size(); ++i) inv(i) = sv(i) > cutoff ? 1.0 / sv(i) : 0.0;
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

void require_full_row_rank(const Eigen::MatrixXd& M, const std::string& name, double rel_cutoff) {
  if (M.cols() < M.rows()) {
    throw std::invalid_argument(name + " is rank deficient: only " + std::to_string(M.cols()) +
                                " columns for " + std::to_string(M.rows()) + " rows");
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(M);
  const auto& sv = svd.singularValues();
  const double smin = sv(sv.size() - 1), smax = sv(0);
  if (!(smin > rel_cutoff * smax)) {
    throw std::invalid_argument(name + " is rank deficient: sigma_min/sigma_max = " +
                                std::to_string(smax > 0 ? smin / smax : 0.0));
  }
}

EdmdMatrices edmd_least_squares(const platoon::Sequences& s) {
  const Eigen::Index nz = s.Z_.rows();
  const Eigen::Index T = s.Z_.cols();
  Eigen::MatrixXd W(nz + 3, T);
  W << s.Z_, s.U_, s.E_, s.F_;
  require_full_row_rank(W, "regressor [Z-;U-;E-;F-]");
  require_full_row_rank(s.Zp, "lifted sequence Z+");

  Eigen::MatrixXd ABHJ = s.Zp * pinv(W);
  EdmdMatrices out;
  out.A = ABHJ.leftCols(nz);
  out.B = ABHJ.col(nz);
  out.H = ABHJ.col(nz + 1);
  out.J = ABHJ.col(nz + 2);
  out.C = s.Xp * pinv(s.Zp);
  return out;
}

DeepEdmdNet DeepEdmdNet::init(Eigen::Index state_dim, const std::vector<int>& hidden,
                              Eigen::Index nz, std::uint64_t seed) {
  if (nz <= state_dim) throw std::invalid_argument("deep edmd: nz must exceed the state dim");
  DeepEdmdNet net;
  net.state_dim = state_dim;
  net.in_center = Eigen::VectorXd::Zero(state_dim);
  net.in_scale = Eigen::VectorXd::Ones(state_dim);
  Rng rng(seed, "train/init");
  auto he_uniform = [&rng](Eigen::Index rows, Eigen::Index cols) {
    const double limit = std::sqrt(6.0 / static_cast<double>(cols));
    Eigen::MatrixXd W(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) W(i, j) = rng.uniform(-limit, limit);
    return W;
  };

  Eigen::Index in = state_dim;
  for (int width : hidden) {
    net.enc.push_back(DenseLayer{he_uniform(width, in), Eigen::VectorXd::Zero(width), true});
    in = width;
  }
  net.enc.push_back(
      DenseLayer{he_uniform(nz - state_dim, in), Eigen::VectorXd::Zero(nz - state_dim), false});

  net.WA = he_uniform(nz, nz);
  net.WB = he_uniform(nz, 1);
  net.WH = he_uniform(nz, 1);
  net.WJ = he_uniform(nz, 1);
  net.WC = he_uniform(state_dim, nz);
  return net;
}

DeepEdmdNet DeepEdmdNet::zeros_like(const DeepEdmdNet& o) {
  DeepEdmdNet g = o;
  for (auto& l : g.enc) {
    l.W.setZero();
    l.b.setZero();
  }
  g.WA.setZero();
  g.WB.setZero();
  g.WH.setZero();
  g.WJ.setZero();
  g.WC.setZero();
  return g;
}

Eigen::MatrixXd DeepEdmdNet::encode(const Eigen::MatrixXd& X) const {
  Eigen::MatrixXd Xs = in_scale.asDiagonal() * (X.colwise() - in_center);
  return encoder_forward(enc, Xs, nullptr);
}

Eigen::MatrixXd DeepEdmdNet::lift(const Eigen::MatrixXd& X) const {
  Eigen::MatrixXd Z(nz(), X.cols());
  Z.topRows(state_dim) = X;
  Z.bottomRows(nz() - state_dim) = encode(X);
  return Z;
}

LossTerms DeepEdmdNet::loss(const Batch& b, const TrainConfig& cfg) const {
  DeepEdmdNet scratch = zeros_like(*this);
  return loss_and_grad(b, cfg, scratch);
}

LossTerms DeepEdmdNet::loss_and_grad(const Batch& b, const TrainConfig& cfg,
                                     DeepEdmdNet& grad) const {
  const double B = static_cast<double>(b.X0.cols());
  EncoderTrace t0, t1;
  Eigen::MatrixXd X0s = in_scale.asDiagonal() * (b.X0.colwise() - in_center);
  Eigen::MatrixXd X1s = in_scale.asDiagonal() * (b.X1.colwise() - in_center);
  Eigen::MatrixXd g0 = encoder_forward(enc, X0s, &t0);
  Eigen::MatrixXd g1 = encoder_forward(enc, X1s, &t1);

  Eigen::MatrixXd z0(nz(), b.X0.cols());
  z0.topRows(state_dim) = b.X0;
  z0.bottomRows(nz() - state_dim) = g0;
  Eigen::MatrixXd z1t(nz(), b.X1.cols());
  z1t.topRows(state_dim) = b.X1;
  z1t.bottomRows(nz() - state_dim) = g1;

  Eigen::MatrixXd zp = WA * z0 + WB * b.u + WH * b.e + WJ * b.f;
  Eigen::MatrixXd xp = WC * zp;
  Eigen::MatrixXd xr = WC * z1t;

  Eigen::MatrixXd Rp = xp - b.X1;
  Eigen::MatrixXd Rl = zp - z1t;
  Eigen::MatrixXd Rr = xr - b.X1;

  LossTerms L;
  L.pred = Rp.squaredNorm() / B;
  L.lin = Rl.squaredNorm() / B;
  L.recon = Rr.squaredNorm() / B;
  for (const auto& l : enc) L.reg += l.W.squaredNorm();
  L.total = cfg.alpha1 * L.pred + cfg.alpha2 * L.lin + cfg.alpha3 * L.recon + cfg.alpha4 * L.reg;

  Eigen::MatrixXd dxp = (2.0 * cfg.alpha1 / B) * Rp;
  Eigen::MatrixXd dzp = WC.transpose() * dxp + (2.0 * cfg.alpha2 / B) * Rl;
  Eigen::MatrixXd dxr = (2.0 * cfg.alpha3 / B) * Rr;
  Eigen::MatrixXd dz1t = -(2.0 * cfg.alpha2 / B) * Rl + WC.transpose() * dxr;

  grad.WC.noalias() += dxp * zp.transpose() + dxr * z1t.transpose();
  grad.WA.noalias() += dzp * z0.transpose();
  grad.WB.noalias() += dzp * b.u.transpose();
  grad.WH.noalias() += dzp * b.e.transpose();
  grad.WJ.noalias() += dzp * b.f.transpose();

  Eigen::MatrixXd dz0 = WA.transpose() * dzp;
  encoder_backward(enc, t0, dz0.bottomRows(nz() - state_dim), grad.enc);
  encoder_backward(enc, t1, dz1t.bottomRows(nz() - state_dim), grad.enc);
  for (std::size_t p = 0; p < enc.size(); ++p) {
    grad.enc[p].W.noalias() += (2.0 * cfg.alpha4) * enc[p].W;
  }
  return L;
}

std::vector<std::pair<double*, Eigen::Index>> DeepEdmdNet::param_blocks() {
  std::vector<std::pair<double*, Eigen::Index>> out;
  for (auto& l : enc) {
    out.emplace_back(l.W.data(), l.W.size());
    out.emplace_back(l.b.data(), l.b.size());
  }
  out.emplace_back(WA.data(), WA.size());
  out.emplace_back(WB.data(), WB.size());
  out.emplace_back(WH.data(), WH.size());
  out.emplace_back(WJ.data(), WJ.size());
  out.emplace_back(WC.data(), WC.size());
  return out;
}

std::vector<std::pair<const double*, Eigen::Index>> DeepEdmdNet::param_blocks() const {
  std::vector<std::pair<const double*, Eigen::Index>> out;
  for (const auto& l : enc) {
    out.emplace_back(l.W.data(), l.W.size());
    out.emplace_back(l.b.data(), l.b.size());
  }
  out.emplace_back(WA.data(), WA.size());
  out.emplace_back(WB.data(), WB.size());
  out.emplace_back(WH.data(), WH.size());
  out.emplace_back(WJ.data(), WJ.size());
  out.emplace_back(WC.data(), WC.size());
  return out;
}

Encoder DeepEdmdNet::to_encoder() const {
  Encoder e;
  e.kind = Encoder::Kind::mlp;
  e.state_dim = state_dim;
  e.layers = enc;
  e.in_center = in_center;
  e.in_scale = in_scale;
  return e;
}

KoopmanModel DeepEdmdNet::to_model() const {
  KoopmanModel m;
  m.encoder = to_encoder();
  m.A = WA;
  m.B = WB;
  m.H = WH;
  m.J = WJ;
  m.C = WC;
  return m;
}

namespace {

struct SampleSplit {
  std::vector<int> train, test, valid;
};

SampleSplit split_samples(int total, const TrainConfig& cfg) {
  const int n_train = static_cast<int>(std::floor(cfg.split_train * total));
  const int n_test = static_cast<int>(std::floor(cfg.split_test * total));
  const int n_valid = total - n_train - n_test;
  if (n_train < 1 || n_test < 1 || n_valid < 1) {
    throw std::invalid_argument("train_deep_edmd: a data split is empty");
  }
  SampleSplit s;
  for (int i = 0; i < n_train; ++i) s.train.push_back(i);
  for (int i = n_train; i < n_train + n_test; ++i) s.test.push_back(i);
  for (int i = n_train + n_test; i < total; ++i) s.valid.push_back(i);
  return s;
}

Batch gather(const platoon::DataLog& log, const std::vector<int>& idx, int lo, int hi) {
  Batch b;
  const int count = hi - lo;
  b.X0.resize(log.X.rows(), count);
  b.X1.resize(log.X.rows(), count);
  b.u.resize(count);
  b.e.resize(count);
  b.f.resize(count);
  for (int i = 0; i < count; ++i) {
    const int k = idx[static_cast<std::size_t>(lo + i)];
    b.X0.col(i) = log.X.col(k);
    b.X1.col(i) = log.X.col(k + 1);
    b.u(i) = log.U(k);
    b.e(i) = log.E(k);
    b.f(i) = log.F(k);
  }
  return b;
}

}  // namespace

KoopmanModel train_deep_edmd(const platoon::DataLog& log, const TrainConfig& cfg,
                             TrainReport* report) {
  const int total = static_cast<int>(log.T());
  if (total < cfg.batch) throw std::invalid_argument("train_deep_edmd: not enough data for one batch");
  const Eigen::Index state_dim = log.X.rows();
  const Eigen::Index nz = cfg.nz > 0 ? cfg.nz : 2 * state_dim;

  SampleSplit split = split_samples(total, cfg);
  DeepEdmdNet net = DeepEdmdNet::init(state_dim, cfg.hidden, nz, cfg.seed);
  // fixed input conditioning: hidden units must switch across the narrow
  // operating region or the features degenerate to an affine map
  net.in_center = log.X.rowwise().mean();
  Eigen::VectorXd sd(state_dim);
  for (Eigen::Index r = 0; r < state_dim; ++r) {
    const double mu = net.in_center(r);
    sd(r) = std::sqrt((log.X.row(r).array() - mu).square().mean());
  }
  net.in_scale = (sd.array().max(1e-6)).inverse();

  // Adam state
  DeepEdmdNet grad = DeepEdmdNet::zeros_like(net);
  auto params = net.param_blocks();
  auto grads = grad.param_blocks();
  Eigen::Index n_params = 0;
  for (auto& [ptr, sz] : params) n_params += sz;
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(n_params);
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(n_params);
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  Rng shuffle_rng(cfg.seed, "train/shuffle");
  std::vector<int> order = split.train;

  Batch valid_batch = gather(log, split.valid, 0, static_cast<int>(split.valid.size()));

  DeepEdmdNet best = net;
  double best_valid = std::numeric_limits<double>::infinity();
  int best_epoch = -1, since_best = 0;
  long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    double epoch_loss = 0.0;
    int batches = 0;
    for (int lo = 0; lo < static_cast<int>(order.size()); lo += cfg.batch) {
      const int hi = std::min<int>(lo + cfg.batch, static_cast<int>(order.size()));
      Batch b = gather(log, order, lo, hi);

      for (auto& [ptr, sz] : grads) std::fill(ptr, ptr + sz, 0.0);
      LossTerms L = net.loss_and_grad(b, cfg, grad);
      if (!std::isfinite(L.total)) {
        throw std::runtime_error("train_deep_edmd: loss diverged at epoch " +
                                 std::to_string(epoch));
      }
      epoch_loss += L.total;
      ++batches;

      ++step;
      const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      Eigen::Index off = 0;
      for (std::size_t blk = 0; blk < params.size(); ++blk) {
        double* w = params[blk].first;
        const double* g = grads[blk].first;
        const Eigen::Index sz = params[blk].second;
        for (Eigen::Index i = 0; i < sz; ++i) {
          const double gi = g[i];
          m1(off + i) = beta1 * m1(off + i) + (1.0 - beta1) * gi;
          m2(off + i) = beta2 * m2(off + i) + (1.0 - beta2) * gi * gi;
          w[i] -= cfg.lr * (m1(off + i) / bc1) / (std::sqrt(m2(off + i) / bc2) + adam_eps);
        }
        off += sz;
      }
    }

    const double valid_loss = net.loss(valid_batch, cfg).total;
    if (report != nullptr) {
      report->train_loss.push_back(epoch_loss / std::max(1, batches));
      report->valid_loss.push_back(valid_loss);
    }
    if (valid_loss < best_valid) {
      best_valid = valid_loss;
      best = net;
      best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }

  KoopmanModel model = best.to_model();
  if (cfg.refit_ls) {
    // Refit the linear maps on the train split through the trained lifting.
    // The feature coefficients are ridge-shrunk with the level selected on
    // the validation split; the fully shrunk candidate reproduces the
    // identity-lift linear predictor exactly, so the refit never loses to it.
    Encoder enc = best.to_encoder();
    platoon::DataLog train_log = log;
    const int keep = static_cast<int>(split.train.size()) + 1;
    train_log.U = log.U.head(keep);
    train_log.E = log.E.head(keep);
    train_log.F = log.F.head(keep);
    train_log.X = log.X.leftCols(keep);
    auto lifted = platoon::build_sequences(
        train_log, [&enc](const Eigen::MatrixXd& X) { return enc.lift(X); });

    const Eigen::Index T = lifted.Z_.cols();
    Eigen::MatrixXd W(nz + 3, T);
    W << lifted.Z_, lifted.U_, lifted.E_, lifted.F_;
    require_full_row_rank(W, "regressor [Z-;U-;E-;F-]");
    require_full_row_rank(lifted.Zp, "lifted sequence Z+");
    const Eigen::MatrixXd G = W * W.transpose();
    const Eigen::MatrixXd ZW = lifted.Zp * W.transpose();
    const Eigen::MatrixXd C_fit = lifted.Xp * pinv(lifted.Zp);

    Batch vb = gather(log, split.valid, 0, static_cast<int>(split.valid.size()));
    Eigen::MatrixXd Z0v = best.lift(vb.X0);
    auto val_rmse = [&](const Eigen::MatrixXd& theta, const Eigen::MatrixXd& C) {
      Eigen::MatrixXd zp = theta.leftCols(nz) * Z0v + theta.col(nz) * vb.u +
                           theta.col(nz + 1) * vb.e + theta.col(nz + 2) * vb.f;
      return std::sqrt((C * zp - vb.X1).squaredNorm() / static_cast<double>(vb.X1.cols()));
    };

    Eigen::MatrixXd best_theta;
    Eigen::MatrixXd best_C;
    double best_rmse = std::numeric_limits<double>::infinity();
    for (double lam : {0.0, 1.0, 10.0, 100.0, 1e3, 1e4, 1e5}) {
      Eigen::MatrixXd Greg = G;
      for (Eigen::Index f = state_dim; f < nz; ++f) Greg(f, f) += lam;
      Eigen::MatrixXd theta = Greg.ldlt().solve(ZW.transpose()).transpose();
      const double rmse = val_rmse(theta, C_fit);
      if (rmse < best_rmse) {
        best_rmse = rmse;
        best_theta = theta;
        best_C = C_fit;
      }
    }
    {
      // all-shrunk candidate: the state rows fall back to the plain linear
      // least squares and the decoder to the exact passthrough
      Eigen::MatrixXd Wlin(state_dim + 3, T);
      Wlin << lifted.X_, lifted.U_, lifted.E_, lifted.F_;
      Eigen::MatrixXd theta_x = lifted.Xp * pinv(Wlin);
      Eigen::MatrixXd Greg = G;
      for (Eigen::Index f = state_dim; f < nz; ++f) Greg(f, f) += 1e5;
      Eigen::MatrixXd theta = Greg.ldlt().solve(ZW.transpose()).transpose();
      theta.topRows(state_dim).setZero();
      theta.topLeftCorner(state_dim, state_dim) = theta_x.leftCols(state_dim);
      theta.block(0, nz, state_dim, 3) = theta_x.rightCols(3);
      Eigen::MatrixXd C_pass = Eigen::MatrixXd::Zero(state_dim, nz);
      C_pass.leftCols(state_dim).setIdentity();
      const double rmse = val_rmse(theta, C_pass);
      if (rmse <= best_rmse) {
        best_rmse = rmse;
        best_theta = theta;
        best_C = C_pass;
      }
    }
    model.A = best_theta.leftCols(nz);
    model.B = best_theta.col(nz);
    model.H = best_theta.col(nz + 1);
    model.J = best_theta.col(nz + 2);
    model.C = best_C;
  }

  if (report != nullptr) {
    report->best_epoch = best_epoch;
    report->test_state_rmse = heldout_state_rmse(model, log, cfg);
  }
  return model;
}

double heldout_state_rmse(const KoopmanModel& m, const platoon::DataLog& log,
                          const TrainConfig& cfg) {
  SampleSplit split = split_samples(static_cast<int>(log.T()), cfg);
  Batch b = gather(log, split.test, 0, static_cast<int>(split.test.size()));
  Eigen::MatrixXd Z0 = m.encoder.lift(b.X0);
  Eigen::MatrixXd Zp = m.A * Z0 + m.B * b.u + m.H * b.e + m.J * b.f;
  Eigen::MatrixXd Xp = m.C * Zp;
  return std::sqrt((Xp - b.X1).squaredNorm() / static_cast<double>(b.X1.cols()));
}

ResidualStats extract_residuals(const KoopmanModel& m, const platoon::DataLog& log) {
  const Eigen::Index T = log.T();
  Eigen::MatrixXd Z = m.encoder.lift(log.X);
  ResidualStats st;
  st.sigma = Z.rightCols(T) -
             (m.A * Z.leftCols(T) + m.B * log.U.head(T).transpose() +
              m.H * log.E.head(T).transpose() + m.J * log.F.head(T).transpose());
  st.rho = log.X.rightCols(T) - m.C * Z.rightCols(T);
  return st;
}

namespace {

Eigen::VectorXd per_component_bound(const Eigen::MatrixXd& res, double target, double floor) {
  const Eigen::Index T = res.cols();
  Eigen::VectorXd bound(res.rows());
  std::vector<double> v(static_cast<std::size_t>(T));
  for (Eigen::Index r = 0; r < res.rows(); ++r) {
    for (Eigen::Index c = 0; c < T; ++c) v[static_cast<std::size_t>(c)] = std::abs(res(r, c));
    std::sort(v.begin(), v.end());
    const auto idx = static_cast<std::size_t>(
        std::min<std::ptrdiff_t>(T - 1, static_cast<std::ptrdiff_t>(std::ceil(target * T)) - 1));
    bound(r) = std::max(v[std::max<std::size_t>(idx, 0)], floor);
  }
  return bound;
}

double coverage(const Eigen::MatrixXd& res, const Eigen::VectorXd& bound) {
  Eigen::Index inside = 0;
  for (Eigen::Index c = 0; c < res.cols(); ++c) {
    for (Eigen::Index r = 0; r < res.rows(); ++r) {
      if (std::abs(res(r, c)) <= bound(r)) ++inside;
    }
  }
  return static_cast<double>(inside) / static_cast<double>(res.size());
}

}  // namespace

void choose_bounds(ResidualStats& stats, double sigma_target, double rho_target, double floor) {
  if (stats.sigma.size() == 0 || stats.rho.size() == 0) {
    throw std::invalid_argument("choose_bounds: empty residual stats");
  }
  if (sigma_target <= 0.0 || sigma_target > 1.0 || rho_target <= 0.0 || rho_target > 1.0) {
    throw std::invalid_argument("choose_bounds: target coverage must lie in (0, 1]");
  }
  stats.sigma_max = per_component_bound(stats.sigma, sigma_target, floor);
  stats.rho_max = per_component_bound(stats.rho, rho_target, floor);
  stats.sigma_coverage = coverage(stats.sigma, stats.sigma_max);
  stats.rho_coverage = coverage(stats.rho, stats.rho_max);
}


void override_bounds_uniform(ResidualStats& stats, double sigma_bound, double rho_bound) {
  if (stats.sigma.size() == 0 || stats.rho.size() == 0) {
    throw std::invalid_argument("override_bounds_uniform: empty residual stats");
  }
  stats.sigma_max = Eigen::VectorXd::Constant(stats.sigma.rows(), sigma_bound);
  stats.rho_max = Eigen::VectorXd::Constant(stats.rho.rows(), rho_bound);
  stats.sigma_coverage = coverage(stats.sigma, stats.sigma_max);
  stats.rho_coverage = coverage(stats.rho, stats.rho_max);
}

serialize::json to_json(const KoopmanModel& m) {
  serialize::json layers = serialize::json::array();
  for (const auto& l : m.encoder.layers) {
    layers.push_back({{"W", serialize::matrix_to_json(l.W)},
                      {"b", serialize::vector_to_json(l.b)},
                      {"relu", l.relu}});
  }
  return serialize::json{
      {"kind", "koopman_model"},
      {"state_dim", m.state_dim()},
      {"nz", m.nz()},
      {"encoder",
       {{"type", m.encoder.kind == Encoder::Kind::identity ? "identity" : "mlp"},
        {"in_center", serialize::vector_to_json(m.encoder.in_center)},
        {"in_scale", serialize::vector_to_json(m.encoder.in_scale)},
        {"layers", layers}}},
      {"A", serialize::matrix_to_json(m.A)},
      {"B", serialize::vector_to_json(m.B)},
      {"H", serialize::vector_to_json(m.H)},
      {"J", serialize::vector_to_json(m.J)},
      {"C", serialize::matrix_to_json(m.C)}};
}

KoopmanModel model_from_json(const serialize::json& j) {
  KoopmanModel m;
  m.A = serialize::matrix_from_json(j.at("A"));
  m.B = serialize::vector_from_json(j.at("B"));
  m.H = serialize::vector_from_json(j.at("H"));
  m.J = serialize::vector_from_json(j.at("J"));
  m.C = serialize::matrix_from_json(j.at("C"));
  m.encoder.state_dim = j.at("state_dim").get<Eigen::Index>();
  const std::string type = j.at("encoder").at("type").get<std::string>();
  m.encoder.kind = type == "identity" ? Encoder::Kind::identity : Encoder::Kind::mlp;
  if (j.at("encoder").contains("in_center")) {
    m.encoder.in_center = serialize::vector_from_json(j.at("encoder").at("in_center"));
    m.encoder.in_scale = serialize::vector_from_json(j.at("encoder").at("in_scale"));
  }
  for (const auto& l : j.at("encoder").at("layers")) {
    m.encoder.layers.push_back(DenseLayer{serialize::matrix_from_json(l.at("W")),
                                          serialize::vector_from_json(l.at("b")),
                                          l.at("relu").get<bool>()});
  }
  return m;
}

}  // namespace rnddpc::lifting
