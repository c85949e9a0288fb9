#pragma once

#include <Eigen/Dense>
#include <vector>

namespace rnddpc::setcalc {

/// Zonotope { c + G*beta : beta in [-1,1]^gamma }. Generators are the columns
/// of G; gamma may be zero, in which case the set is a single point. All set
/// values are immutable by convention: operations return new sets and never
/// mutate their inputs, so sharing across threads is safe.
struct Zonotope {
  Eigen::VectorXd center;
  Eigen::MatrixXd generators;  // d x gamma

  Zonotope() = default;
  Zonotope(Eigen::VectorXd c, Eigen::MatrixXd G);

  /// Point zonotope (no generators).
  static Zonotope point(const Eigen::VectorXd& c);
  /// Axis-aligned box: one generator per axis, diag(radii). radii >= 0.
  static Zonotope box(const Eigen::VectorXd& c, const Eigen::VectorXd& radii);

  Eigen::Index dim() const { return center.size(); }
  Eigen::Index num_generators() const { return generators.cols(); }
};

/// Axis-aligned box [lower, upper], lower <= upper element-wise.
struct IntervalBox {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  IntervalBox() = default;
  IntervalBox(Eigen::VectorXd lo, Eigen::VectorXd up);

  Eigen::Index dim() const { return lower.size(); }
  bool contains(const Eigen::VectorXd& x, double tol = 0.0) const;
  /// Re-express the box as a zonotope with axis-aligned generators.
  Zonotope to_zonotope() const;
};

/// Matrix zonotope { C + sum beta_i G_i : beta in [-1,1]^gamma } of n x m
/// matrices. Generators all share the center's shape.
struct MatrixZonotope {
  Eigen::MatrixXd center;
  std::vector<Eigen::MatrixXd> generators;

  MatrixZonotope() = default;
  MatrixZonotope(Eigen::MatrixXd c, std::vector<Eigen::MatrixXd> gens);

  static MatrixZonotope point(const Eigen::MatrixXd& c);

  Eigen::Index rows() const { return center.rows(); }
  Eigen::Index cols() const { return center.cols(); }
  Eigen::Index num_generators() const {
    return static_cast<Eigen::Index>(generators.size());
  }
};

/// Element-wise bounds of a matrix zonotope.
struct MatrixInterval {
  Eigen::MatrixXd lower;
  Eigen::MatrixXd upper;
};

/// L * Z = <L c, L G>.
Zonotope linear_map(const Eigen::MatrixXd& L, const Zonotope& z);

/// Z1 + Z2 = <c1 + c2, [G1 G2]>.
Zonotope minkowski_sum(const Zonotope& a, const Zonotope& b);

/// Z1 x Z2 with stacked centers and block-diagonal generators.
Zonotope cartesian_product(const Zonotope& a, const Zonotope& b);

/// Tightest axis-aligned box containing Z: center -/+ sum_i |g_i|.
IntervalBox interval_hull(const Zonotope& z);

/// Element-wise interval hull of a matrix zonotope.
MatrixInterval interval_hull(const MatrixZonotope& m);

/// Over-approximation of { M x : M in M, x in Z }. Generator order is fixed:
/// first {C_M g_i} in generator order of Z, then {G_M^(j) c_Z} in generator
/// order of M, then the cross terms {G_M^(j) g_i} with j outer and i inner.
Zonotope matzono_map(const MatrixZonotope& m, const Zonotope& z);

/// Member c + G*beta for |beta_i| <= 1; rejects beta outside the unit box.
Eigen::VectorXd sample(const Zonotope& z, const Eigen::VectorXd& beta);

/// Member C + sum beta_i G_i for |beta_i| <= 1.
Eigen::MatrixXd sample(const MatrixZonotope& m, const Eigen::VectorXd& beta);

/// Sound order reduction: the result contains z and has at most max_order*d
/// generators. The largest-norm generators are kept verbatim and the rest are
/// boxed into at most d axis-aligned generators (zero axes pruned).
Zonotope reduce(const Zonotope& z, int max_order);

/// Sound reduction of a matrix zonotope in the vectorized sense. Keeps the
/// largest Frobenius-norm generators verbatim and boxes the rest into one
/// generator per nonzero entry of the boxed absolute sum. The budget is met
/// whenever max_gens can accommodate the box; a smaller request degrades to
/// the minimal sound per-entry box, which may exceed max_gens.
MatrixZonotope reduce(const MatrixZonotope& m, int max_gens);

}  // namespace rnddpc::setcalc
