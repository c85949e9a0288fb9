#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "rnddpc/platoon.hpp"
#include "rnddpc/serialize.hpp"

namespace rnddpc::lifting {

struct DenseLayer {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
  bool relu = true;
};

/// State lifting. The lifted vector always starts with the raw state; the mlp
/// kind appends learned features, the identity kind appends nothing. The mlp
/// input is shifted and scaled by fixed constants recorded at training time
/// so that the hidden units switch across the data region; the state block of
/// the lifted vector stays raw.
struct Encoder {
  enum class Kind { identity, mlp };
  Kind kind = Kind::identity;
  Eigen::Index state_dim = 0;
  std::vector<DenseLayer> layers;  // empty for identity
  Eigen::VectorXd in_center;       // input shift (mlp)
  Eigen::VectorXd in_scale;        // input scale (mlp)

  Eigen::Index feature_dim() const {
    return layers.empty() ? 0 : layers.back().W.rows();
  }
  Eigen::Index lifted_dim() const { return state_dim + feature_dim(); }

  /// Learned feature block g(x) for a column batch (zero rows for identity).
  Eigen::MatrixXd features(const Eigen::MatrixXd& X) const;
  /// z = [x; g(x)] for a column batch.
  Eigen::MatrixXd lift(const Eigen::MatrixXd& X) const;
  Eigen::VectorXd lift(const Eigen::VectorXd& x) const;
};

Encoder identity_encoder(Eigen::Index state_dim);

/// Lifted linear model z(k+1) = A z + B u + H eps + J theta, x = C z.
struct KoopmanModel {
  Encoder encoder;
  Eigen::MatrixXd A;
  Eigen::VectorXd B;
  Eigen::VectorXd H;
  Eigen::VectorXd J;
  Eigen::MatrixXd C;

  Eigen::Index nz() const { return A.rows(); }
  Eigen::Index state_dim() const { return C.rows(); }
};

struct Prediction {
  Eigen::VectorXd z_next;
  Eigen::VectorXd x_next;
};

Prediction forward_predict(const KoopmanModel& m, const Eigen::VectorXd& z, double u, double eps,
                           double theta);

/// Moore-Penrose pseudoinverse through SVD with a relative singular-value
/// cutoff.
Eigen::MatrixXd pinv(const Eigen::MatrixXd& M, double rel_cutoff = 1e-10);

/// Throws when sigma_min/sigma_max of M falls below the cutoff; `name` labels
/// the offending block in the message.
void require_full_row_rank(const Eigen::MatrixXd& M, const std::string& name,
                           double rel_cutoff = 1e-10);

struct EdmdMatrices {
  Eigen::MatrixXd A;
  Eigen::VectorXd B;
  Eigen::VectorXd H;
  Eigen::VectorXd J;
  Eigen::MatrixXd C;
};

/// [A B H J] = Z+ pinv([Z-;U-;E-;F-]),  C = X+ pinv(Z+).
EdmdMatrices edmd_least_squares(const platoon::Sequences& s);

struct TrainConfig {
  int batch = 128;
  double lr = 1e-3;
  double alpha1 = 1.0;    // one-step state prediction
  double alpha2 = 10.0;   // lifted-state prediction
  double alpha3 = 3.0;    // decoder reconstruction
  double alpha4 = 1e-4;   // encoder weight decay
  int epochs = 200;
  int patience = 20;
  double split_train = 0.7;
  double split_test = 0.2;
  double split_valid = 0.1;
  std::vector<int> hidden = {32, 32, 64, 32};
  int nz = 0;  // 0 selects 4n
  bool refit_ls = true;
  std::uint64_t seed = 1;
};

struct Batch {
  Eigen::MatrixXd X0;  // 2n x B
  Eigen::MatrixXd X1;  // 2n x B
  Eigen::RowVectorXd u, e, f;
};

struct LossTerms {
  double total = 0, pred = 0, lin = 0, recon = 0, reg = 0;
};

/// Trainable network: encoder plus the four linear sub-networks and the
/// decoder. Linear sub-networks and the decoder carry no biases.
struct DeepEdmdNet {
  std::vector<DenseLayer> enc;
  Eigen::MatrixXd WA;
  Eigen::VectorXd WB, WH, WJ;
  Eigen::MatrixXd WC;
  Eigen::Index state_dim = 0;
  Eigen::VectorXd in_center;  // fixed input shift, not trained
  Eigen::VectorXd in_scale;   // fixed input scale, not trained

  static DeepEdmdNet init(Eigen::Index state_dim, const std::vector<int>& hidden,
                          Eigen::Index nz, std::uint64_t seed);
  static DeepEdmdNet zeros_like(const DeepEdmdNet& other);

  Eigen::Index nz() const { return WA.rows(); }
  Eigen::MatrixXd encode(const Eigen::MatrixXd& X) const;
  Eigen::MatrixXd lift(const Eigen::MatrixXd& X) const;

  LossTerms loss(const Batch& b, const TrainConfig& cfg) const;
  LossTerms loss_and_grad(const Batch& b, const TrainConfig& cfg, DeepEdmdNet& grad) const;

  /// Flat views over every trainable array, in a fixed order shared with the
  /// gradient object.
  std::vector<std::pair<double*, Eigen::Index>> param_blocks();
  std::vector<std::pair<const double*, Eigen::Index>> param_blocks() const;

  Encoder to_encoder() const;
  KoopmanModel to_model() const;
};

struct TrainReport {
  std::vector<double> train_loss;
  std::vector<double> valid_loss;
  int best_epoch = -1;
  double test_state_rmse = 0.0;
};

/// Adam training of the deep-EDMD network on a recorded rollout, single
/// threaded and bit-reproducible for a fixed seed. Returns the model with the
/// best validation loss.
KoopmanModel train_deep_edmd(const platoon::DataLog& log, const TrainConfig& cfg,
                             TrainReport* report = nullptr);

/// Held-out one-step RMSE of the full state prediction over the test split.
double heldout_state_rmse(const KoopmanModel& m, const platoon::DataLog& log,
                          const TrainConfig& cfg);

struct ResidualStats {
  Eigen::MatrixXd sigma;  // nz x T lifted-model errors
  Eigen::MatrixXd rho;    // 2n x T projection errors
  Eigen::VectorXd sigma_max;
  Eigen::VectorXd rho_max;
  double sigma_coverage = 0.0;
  double rho_coverage = 0.0;
};

/// Model-error time series of the lifted recursion and the state projection
/// over a recorded rollout.
ResidualStats extract_residuals(const KoopmanModel& m, const platoon::DataLog& log);

/// Smallest per-component symmetric bounds reaching the target coverages;
/// all-zero components fall back to `floor`.
void choose_bounds(ResidualStats& stats, double sigma_target, double rho_target,
                   double floor = 1e-6);

/// Constant bounds across components, as in a fixed hand-tuned setting.
void override_bounds_uniform(ResidualStats& stats, double sigma_bound, double rho_bound);

serialize::json to_json(const KoopmanModel& m);
KoopmanModel model_from_json(const serialize::json& j);

}  // namespace rnddpc::lifting
