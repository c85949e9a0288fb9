#include "rnddpc/setcalc.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace rnddpc::setcalc {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

std::string shape_str(Eigen::Index r, Eigen::Index c) {
  std::ostringstream os;
  os << r << "x" << c;
  return os.str();
}

}  // namespace

Zonotope::Zonotope(Eigen::VectorXd c, Eigen::MatrixXd G)
    : center(std::move(c)), generators(std::move(G)) {
  if (generators.size() == 0 && generators.rows() != center.size()) {
    generators.resize(center.size(), 0);
  }
  if (generators.rows() != center.size()) {
    fail("zonotope: generator rows " + shape_str(generators.rows(), generators.cols()) +
         " do not match center dim " + std::to_string(center.size()));
  }
}

Zonotope Zonotope::point(const Eigen::VectorXd& c) {
  return Zonotope(c, Eigen::MatrixXd(c.size(), 0));
}

Zonotope Zonotope::box(const Eigen::VectorXd& c, const Eigen::VectorXd& radii) {
  if (radii.size() != c.size()) fail("zonotope box: radii dim mismatch");
  Eigen::MatrixXd G = radii.asDiagonal();
  return Zonotope(c, G);
}

IntervalBox::IntervalBox(Eigen::VectorXd lo, Eigen::VectorXd up)
    : lower(std::move(lo)), upper(std::move(up)) {
  if (lower.size() != upper.size()) fail("interval box: bound dim mismatch");
  if ((lower.array() > upper.array()).any()) fail("interval box: lower > upper");
}

bool IntervalBox::contains(const Eigen::VectorXd& x, double tol) const {
  return (x.array() >= lower.array() - tol).all() &&
         (x.array() <= upper.array() + tol).all();
}

Zonotope IntervalBox::to_zonotope() const {
  return Zonotope::box(0.5 * (lower + upper), 0.5 * (upper - lower));
}

MatrixZonotope::MatrixZonotope(Eigen::MatrixXd c, std::vector<Eigen::MatrixXd> gens)
    : center(std::move(c)), generators(std::move(gens)) {
  for (const auto& g : generators) {
    if (g.rows() != center.rows() || g.cols() != center.cols()) {
      fail("matrix zonotope: generator " + shape_str(g.rows(), g.cols()) +
           " does not match center " + shape_str(center.rows(), center.cols()));
    }
  }
}

MatrixZonotope MatrixZonotope::point(const Eigen::MatrixXd& c) {
  return MatrixZonotope(c, {});
}

Zonotope linear_map(const Eigen::MatrixXd& L, const Zonotope& z) {
  if (L.cols() != z.dim()) {
    fail("linear_map: L is " + shape_str(L.rows(), L.cols()) + " but zonotope dim is " +
         std::to_string(z.dim()));
  }
  return Zonotope(L * z.center, L * z.generators);
}

Zonotope minkowski_sum(const Zonotope& a, const Zonotope& b) {
  if (a.dim() != b.dim()) {
    fail("minkowski_sum: dims " + std::to_string(a.dim()) + " vs " +
         std::to_string(b.dim()));
  }
  Eigen::MatrixXd G(a.dim(), a.num_generators() + b.num_generators());
  G << a.generators, b.generators;
  return Zonotope(a.center + b.center, std::move(G));
}

Zonotope cartesian_product(const Zonotope& a, const Zonotope& b) {
  const Eigen::Index d = a.dim() + b.dim();
  Eigen::VectorXd c(d);
  c << a.center, b.center;
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(d, a.num_generators() + b.num_generators());
  G.topLeftCorner(a.dim(), a.num_generators()) = a.generators;
  G.bottomRightCorner(b.dim(), b.num_generators()) = b.generators;
  return Zonotope(std::move(c), std::move(G));
}

IntervalBox interval_hull(const Zonotope& z) {
  Eigen::VectorXd radius = z.generators.cwiseAbs().rowwise().sum();
  return IntervalBox(z.center - radius, z.center + radius);
}

MatrixInterval interval_hull(const MatrixZonotope& m) {
  Eigen::MatrixXd radius = Eigen::MatrixXd::Zero(m.rows(), m.cols());
  for (const auto& g : m.generators) radius += g.cwiseAbs();
  return MatrixInterval{m.center - radius, m.center + radius};
}

Zonotope matzono_map(const MatrixZonotope& m, const Zonotope& z) {
  if (m.cols() != z.dim()) {
    fail("matzono_map: matrix zonotope is " + shape_str(m.rows(), m.cols()) +
         " but zonotope dim is " + std::to_string(z.dim()));
  }
  const Eigen::Index gz = z.num_generators();
  const Eigen::Index gm = m.num_generators();
  Eigen::MatrixXd G(m.rows(), gz + gm + gm * gz);
  G.leftCols(gz) = m.center * z.generators;
  for (Eigen::Index j = 0; j < gm; ++j) {
    G.col(gz + j) = m.generators[static_cast<std::size_t>(j)] * z.center;
  }
  for (Eigen::Index j = 0; j < gm; ++j) {
    G.middleCols(gz + gm + j * gz, gz) = m.generators[static_cast<std::size_t>(j)] * z.generators;
  }
  return Zonotope(m.center * z.center, std::move(G));
}

Eigen::VectorXd sample(const Zonotope& z, const Eigen::VectorXd& beta) {
  if (beta.size() != z.num_generators()) {
    fail("sample: beta has " + std::to_string(beta.size()) + " entries, zonotope has " +
         std::to_string(z.num_generators()) + " generators");
  }
  if ((beta.array().abs() > 1.0 + 1e-15).any()) fail("sample: beta outside the unit box");
  return z.center + z.generators * beta;
}

Eigen::MatrixXd sample(const MatrixZonotope& m, const Eigen::VectorXd& beta) {
  if (beta.size() != m.num_generators()) {
    fail("sample: beta size does not match matrix zonotope generator count");
  }
  if ((beta.array().abs() > 1.0 + 1e-15).any()) fail("sample: beta outside the unit box");
  Eigen::MatrixXd out = m.center;
  for (Eigen::Index i = 0; i < m.num_generators(); ++i) {
    out += beta(i) * m.generators[static_cast<std::size_t>(i)];
  }
  return out;
}

Zonotope reduce(const Zonotope& z, int max_order) {
  if (max_order < 1) fail("reduce: max_order must be >= 1");
  const Eigen::Index d = z.dim();
  const Eigen::Index budget = static_cast<Eigen::Index>(max_order) * d;
  const Eigen::Index gz = z.num_generators();
  if (gz <= budget) return z;

  const Eigen::Index kept = budget - d;
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(gz));
  std::iota(idx.begin(), idx.end(), 0);
  Eigen::VectorXd norms(gz);
  for (Eigen::Index i = 0; i < gz; ++i) norms(i) = z.generators.col(i).norm();
  std::stable_sort(idx.begin(), idx.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return norms(a) > norms(b); });

  Eigen::MatrixXd kept_gens(d, kept);
  for (Eigen::Index i = 0; i < kept; ++i) kept_gens.col(i) = z.generators.col(idx[static_cast<std::size_t>(i)]);
  Eigen::VectorXd box_radius = Eigen::VectorXd::Zero(d);
  for (Eigen::Index i = kept; i < gz; ++i) {
    box_radius += z.generators.col(idx[static_cast<std::size_t>(i)]).cwiseAbs();
  }

  Eigen::Index nz = (box_radius.array() > 0.0).count();
  Eigen::MatrixXd G(d, kept + nz);
  G.leftCols(kept) = kept_gens;
  Eigen::Index col = kept;
  for (Eigen::Index a = 0; a < d; ++a) {
    if (box_radius(a) > 0.0) {
      G.col(col).setZero();
      G(a, col) = box_radius(a);
      ++col;
    }
  }
  return Zonotope(z.center, std::move(G));
}

MatrixZonotope reduce(const MatrixZonotope& m, int max_gens) {
  if (max_gens < 1) fail("reduce: max_gens must be >= 1");
  const Eigen::Index gm = m.num_generators();
  if (gm <= max_gens) return m;

  // Entries touched by any generator; the boxed remainder can never need more.
  Eigen::MatrixXd abs_all = Eigen::MatrixXd::Zero(m.rows(), m.cols());
  for (const auto& g : m.generators) abs_all += g.cwiseAbs();
  const Eigen::Index nz_all = (abs_all.array() > 0.0).count();

  const Eigen::Index kept = std::max<Eigen::Index>(0, max_gens - nz_all);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(gm));
  std::iota(idx.begin(), idx.end(), 0);
  Eigen::VectorXd norms(gm);
  for (Eigen::Index i = 0; i < gm; ++i) norms(i) = m.generators[static_cast<std::size_t>(i)].norm();
  std::stable_sort(idx.begin(), idx.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return norms(a) > norms(b); });

  std::vector<Eigen::MatrixXd> gens;
  gens.reserve(static_cast<std::size_t>(max_gens));
  for (Eigen::Index i = 0; i < kept; ++i) {
    gens.push_back(m.generators[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
  }
  Eigen::MatrixXd box = Eigen::MatrixXd::Zero(m.rows(), m.cols());
  for (Eigen::Index i = kept; i < gm; ++i) {
    box += m.generators[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])].cwiseAbs();
  }
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (box(r, c) > 0.0) {
        Eigen::MatrixXd g = Eigen::MatrixXd::Zero(m.rows(), m.cols());
        g(r, c) = box(r, c);
        gens.push_back(std::move(g));
      }
    }
  }
  return MatrixZonotope(m.center, std::move(gens));
}

}  // namespace rnddpc::setcalc
