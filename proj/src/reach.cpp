#include "rnddpc/reach.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <stdexcept>

#include "rnddpc/lifting.hpp"

namespace rnddpc::reach {

using setcalc::MatrixZonotope;
using setcalc::Zonotope;

setcalc::MatrixZonotope build_error_matzono(const Zonotope& err, Eigen::Index T) {
  if (T < 1) throw std::invalid_argument("build_error_matzono: T must be >= 1");
  const Eigen::Index d = err.dim();
  Eigen::MatrixXd center = err.center.replicate(1, T);
  std::vector<Eigen::MatrixXd> gens;
  gens.reserve(static_cast<std::size_t>(err.num_generators() * T));
  for (Eigen::Index i = 0; i < err.num_generators(); ++i) {
    if (err.generators.col(i).isZero(0.0)) continue;
    for (Eigen::Index k = 0; k < T; ++k) {
      Eigen::MatrixXd g = Eigen::MatrixXd::Zero(d, T);
      g.col(k) = err.generators.col(i);
      gens.push_back(std::move(g));
    }
  }
  return MatrixZonotope(std::move(center), std::move(gens));
}

namespace {

// (Data - M_err) * pinv(W) without materializing the error matrix zonotope:
// each (generator i, column k) term reduces to the outer product of the error
// generator with row k of the pseudoinverse.
MatrixZonotope set_regression(const Eigen::MatrixXd& data, const Zonotope& err,
                              const Eigen::MatrixXd& w_pinv, bool materialize) {
  const Eigen::Index T = data.cols();
  Eigen::MatrixXd center = (data - err.center.replicate(1, T)) * w_pinv;
  std::vector<Eigen::MatrixXd> gens;
  if (materialize) {
    gens.reserve(static_cast<std::size_t>(err.num_generators() * T));
    for (Eigen::Index i = 0; i < err.num_generators(); ++i) {
      const Eigen::VectorXd g = err.generators.col(i);
      if (g.isZero(0.0)) continue;
      for (Eigen::Index k = 0; k < T; ++k) {
        gens.push_back(-g * w_pinv.row(k));
      }
    }
  }
  return MatrixZonotope(std::move(center), std::move(gens));
}

// Axis-aligned radii of an error zonotope, or nothing when some generator is
// not axis-aligned (then the factored form does not apply).
std::optional<Eigen::VectorXd> axis_radii(const Zonotope& z) {
  Eigen::VectorXd r = Eigen::VectorXd::Zero(z.dim());
  for (Eigen::Index i = 0; i < z.num_generators(); ++i) {
    Eigen::Index nnz = 0, axis = -1;
    for (Eigen::Index a = 0; a < z.dim(); ++a) {
      if (z.generators(a, i) != 0.0) {
        ++nnz;
        axis = a;
      }
    }
    if (nnz > 1) return std::nullopt;
    if (nnz == 1) r(axis) += std::abs(z.generators(axis, i));
  }
  return r;
}

Eigen::MatrixXd factored_radius(const FactoredUncertainty& f, Eigen::Index rows,
                                Eigen::Index cols) {
  Eigen::MatrixXd rad = Eigen::MatrixXd::Zero(rows, cols);
  if (f.empty()) return rad;
  Eigen::RowVectorXd col_l1 = f.P.cwiseAbs().colwise().sum();
  for (Eigen::Index i = 0; i < rows; ++i) rad.row(i) = f.row_scale(i) * col_l1;
  return rad;
}

}  // namespace

setcalc::MatrixInterval hull_abhj(const LearnedSetModel& sm) {
  setcalc::MatrixInterval h = setcalc::interval_hull(sm.M_abhj);
  if (!sm.abhj_factored.empty() && sm.M_abhj.num_generators() == 0) {
    Eigen::MatrixXd rad = factored_radius(sm.abhj_factored, sm.M_abhj.rows(), sm.M_abhj.cols());
    h.lower -= rad;
    h.upper += rad;
  }
  return h;
}

setcalc::MatrixInterval hull_c(const LearnedSetModel& sm) {
  setcalc::MatrixInterval h = setcalc::interval_hull(sm.M_c);
  if (!sm.c_factored.empty() && sm.M_c.num_generators() == 0) {
    Eigen::MatrixXd rad = factored_radius(sm.c_factored, sm.M_c.rows(), sm.M_c.cols());
    h.lower -= rad;
    h.upper += rad;
  }
  return h;
}

LearnedSetModel learn_model_sets(const platoon::Sequences& s, const Zonotope& Z_sigma,
                                 const Zonotope& Z_rho, int matzono_budget, bool materialize) {
  const Eigen::Index nz = s.Z_.rows();
  const Eigen::Index T = s.Z_.cols();
  if (Z_sigma.dim() != nz) throw std::invalid_argument("learn_model_sets: Z_sigma dim mismatch");
  if (Z_rho.dim() != s.X_.rows()) throw std::invalid_argument("learn_model_sets: Z_rho dim mismatch");

  Eigen::MatrixXd W(nz + 3, T);
  W << s.Z_, s.U_, s.E_, s.F_;
  lifting::require_full_row_rank(W, "regressor [Z-;U-;E-;F-]");
  lifting::require_full_row_rank(s.Zp, "lifted sequence Z+");

  std::optional<Eigen::VectorXd> sigma_axes = axis_radii(Z_sigma);
  std::optional<Eigen::VectorXd> rho_axes = axis_radii(Z_rho);
  const bool want_explicit = materialize || !sigma_axes.has_value() || !rho_axes.has_value();

  LearnedSetModel sm;
  Eigen::MatrixXd Wp = lifting::pinv(W);
  Eigen::MatrixXd Zp_pinv = lifting::pinv(s.Zp);
  sm.M_abhj = set_regression(s.Zp, Z_sigma, Wp, want_explicit);
  sm.M_c = set_regression(s.Xp, Z_rho, Zp_pinv, want_explicit);
  sm.Z_sigma = Z_sigma;
  sm.Z_rho = Z_rho;
  sm.reduction_budget = matzono_budget;
  if (sigma_axes.has_value() && sigma_axes->maxCoeff() > 0.0) {
    sm.abhj_factored = FactoredUncertainty{Wp, *sigma_axes};
  }
  if (rho_axes.has_value() && rho_axes->maxCoeff() > 0.0) {
    sm.c_factored = FactoredUncertainty{Zp_pinv, *rho_axes};
  }
  if (matzono_budget > 0 && want_explicit) {
    sm.M_abhj = setcalc::reduce(sm.M_abhj, matzono_budget);
    sm.M_c = setcalc::reduce(sm.M_c, matzono_budget);
    // the reduced explicit form replaces the factored families
    sm.abhj_factored = FactoredUncertainty{};
    sm.c_factored = FactoredUncertainty{};
  }
  return sm;
}

ReachStep reach_step(const LearnedSetModel& sm, const Zonotope& Rz, const Zonotope& Zu,
                     const Zonotope& Zeps, const Zonotope& Ztheta, int zono_order) {
  if (!sm.materialized()) {
    throw std::invalid_argument(
        "reach_step: model sets carry only factored generators; learn them with materialize=true");
  }
  if (Zu.num_generators() != 0) {
    throw std::invalid_argument("reach_step: the input set must be a point");
  }
  Zonotope prod = setcalc::cartesian_product(
      setcalc::cartesian_product(setcalc::cartesian_product(Rz, Zu), Zeps), Ztheta);
  Zonotope rz_next = setcalc::minkowski_sum(setcalc::matzono_map(sm.M_abhj, prod), sm.Z_sigma);
  if (zono_order > 0) rz_next = setcalc::reduce(rz_next, zono_order);
  Zonotope rx_next = setcalc::minkowski_sum(setcalc::matzono_map(sm.M_c, rz_next), sm.Z_rho);
  return ReachStep{std::move(rz_next), std::move(rx_next)};
}

TightnessReport quantify_tightness(const LearnedSetModel& sm, const Eigen::MatrixXd& nominal_abhj,
                                   const Eigen::MatrixXd& nominal_c) {
  if (nominal_abhj.rows() != sm.M_abhj.rows() || nominal_abhj.cols() != sm.M_abhj.cols() ||
      nominal_c.rows() != sm.M_c.rows() || nominal_c.cols() != sm.M_c.cols()) {
    throw std::invalid_argument("quantify_tightness: nominal shape mismatch");
  }
  setcalc::MatrixInterval ab = hull_abhj(sm);
  setcalc::MatrixInterval c = hull_c(sm);
  TightnessReport rep;
  rep.e_abhj_sup = ab.upper - nominal_abhj;
  rep.e_abhj_inf = ab.lower - nominal_abhj;
  rep.e_c_sup = c.upper - nominal_c;
  rep.e_c_inf = c.lower - nominal_c;
  return rep;
}

void save_tightness_csv(const TightnessReport& rep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  auto put = [&out](const char* tag, const Eigen::MatrixXd& m) {
    out << tag << "\n";
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) out << m(r, c) << (c + 1 < m.cols() ? "," : "");
      out << "\n";
    }
  };
  put("e_abhj_sup", rep.e_abhj_sup);
  put("e_abhj_inf", rep.e_abhj_inf);
  put("e_c_sup", rep.e_c_sup);
  put("e_c_inf", rep.e_c_inf);
}

serialize::json to_json(const LearnedSetModel& sm) {
  serialize::json j{{"kind", "learned_set_model"},
                    {"M_ABHJ", serialize::to_json(sm.M_abhj)},
                    {"M_C", serialize::to_json(sm.M_c)},
                    {"Z_sigma", serialize::to_json(sm.Z_sigma)},
                    {"Z_rho", serialize::to_json(sm.Z_rho)},
                    {"provenance",
                     {{"data_hash", sm.data_hash},
                      {"reduction_budget", sm.reduction_budget}}}};
  if (!sm.abhj_factored.empty()) {
    j["abhj_factored"] = {{"P", serialize::matrix_to_json(sm.abhj_factored.P)},
                          {"row_scale", serialize::vector_to_json(sm.abhj_factored.row_scale)}};
  }
  if (!sm.c_factored.empty()) {
    j["c_factored"] = {{"P", serialize::matrix_to_json(sm.c_factored.P)},
                       {"row_scale", serialize::vector_to_json(sm.c_factored.row_scale)}};
  }
  return j;
}

LearnedSetModel set_model_from_json(const serialize::json& j) {
  LearnedSetModel sm;
  sm.M_abhj = serialize::matzono_from_json(j.at("M_ABHJ"));
  sm.M_c = serialize::matzono_from_json(j.at("M_C"));
  sm.Z_sigma = serialize::zonotope_from_json(j.at("Z_sigma"));
  sm.Z_rho = serialize::zonotope_from_json(j.at("Z_rho"));
  if (j.contains("abhj_factored")) {
    sm.abhj_factored.P = serialize::matrix_from_json(j.at("abhj_factored").at("P"));
    sm.abhj_factored.row_scale =
        serialize::vector_from_json(j.at("abhj_factored").at("row_scale"));
  }
  if (j.contains("c_factored")) {
    sm.c_factored.P = serialize::matrix_from_json(j.at("c_factored").at("P"));
    sm.c_factored.row_scale = serialize::vector_from_json(j.at("c_factored").at("row_scale"));
  }
  sm.data_hash = j.at("provenance").value("data_hash", "");
  sm.reduction_budget = j.at("provenance").value("reduction_budget", 0);
  return sm;
}

// ---------------------------------------------------------------------------
// Symbolic tube
// ---------------------------------------------------------------------------

void AffExpr::add(int var, double coef) {
  if (coef == 0.0) return;
  auto it = std::lower_bound(terms.begin(), terms.end(), var,
                             [](const auto& t, int v) { return t.first < v; });
  if (it != terms.end() && it->first == var) {
    it->second += coef;
  } else {
    terms.insert(it, {var, coef});
  }
}

AffExpr& AffExpr::operator+=(const AffExpr& other) {
  c0 += other.c0;
  for (const auto& [v, c] : other.terms) add(v, c);
  return *this;
}

AffExpr AffExpr::scaled(double s) const {
  AffExpr out;
  out.c0 = c0 * s;
  if (s != 0.0) {
    out.terms = terms;
    for (auto& [v, c] : out.terms) c *= s;
  }
  return out;
}

double AffExpr::eval(const Eigen::VectorXd& t) const {
  double v = c0;
  for (const auto& [var, coef] : terms) v += coef * t(var);
  return v;
}

Eigen::VectorXd SymbolicTube::tight_t(const Eigen::VectorXd& u) const {
  Eigen::VectorXd t(num_t());
  for (int i = 0; i < num_t(); ++i) t(i) = tdefs[static_cast<std::size_t>(i)].eval(u);
  return t;
}

TubeEval SymbolicTube::evaluate(const Eigen::VectorXd& u) const {
  if (u.size() != n_inputs) throw std::invalid_argument("tube evaluate: input length mismatch");
  Eigen::VectorXd t = tight_t(u);
  TubeEval ev;
  for (const auto& st : steps) {
    Eigen::VectorXd zc = st.zc0 + st.zcU * u;
    Eigen::MatrixXd G(zc.size(), static_cast<Eigen::Index>(st.zgens.size()));
    for (std::size_t g = 0; g < st.zgens.size(); ++g) {
      G.col(static_cast<Eigen::Index>(g)) = st.zgens[g].dir * st.zgens[g].scale.eval(t);
    }
    ev.Rz.emplace_back(zc, std::move(G));
    ev.x_center.push_back(st.xc0 + st.xcU * u);
    Eigen::VectorXd rad(st.x_radius.size());
    for (std::size_t a = 0; a < st.x_radius.size(); ++a) {
      rad(static_cast<Eigen::Index>(a)) = st.x_radius[a].eval(t);
    }
    ev.x_radius.push_back(std::move(rad));
  }
  return ev;
}

namespace {

// Row-supported generator families of one model set: the shared-factor block
// (all rows, common P) plus per-axis stacked factors, plus accumulated radii
// of the axis-aligned generators.
struct Families {
  Eigen::MatrixXd center;
  Eigen::MatrixXd R;  // axis-aligned |value| accumulation
  FactoredUncertainty shared;
  struct Axis {
    Eigen::Index row;
    Eigen::MatrixXd P;  // stacked row factors for this axis
  };
  std::vector<Axis> per_axis;
};

Families decompose_families(const MatrixZonotope& m, const FactoredUncertainty& factored,
                            const char* name) {
  Families out;
  out.center = m.center;
  out.R = Eigen::MatrixXd::Zero(m.rows(), m.cols());
  if (!factored.empty() && m.num_generators() == 0) {
    out.shared = factored;
    return out;
  }
  std::vector<std::vector<Eigen::RowVectorXd>> rows(static_cast<std::size_t>(m.rows()));
  for (const auto& g : m.generators) {
    Eigen::Index row = -1;
    Eigen::Index nnz_entries = 0;
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      if (!g.row(r).isZero(0.0)) {
        if (row >= 0) {
          throw std::invalid_argument(std::string(name) +
                                      ": tube construction needs row-supported generators");
        }
        row = r;
        for (Eigen::Index c = 0; c < g.cols(); ++c) nnz_entries += g(r, c) != 0.0 ? 1 : 0;
      }
    }
    if (row < 0) continue;  // zero generator
    if (nnz_entries == 1) {
      for (Eigen::Index c = 0; c < g.cols(); ++c) out.R(row, c) += std::abs(g(row, c));
    } else {
      rows[static_cast<std::size_t>(row)].push_back(g.row(row));
    }
  }
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto& list = rows[static_cast<std::size_t>(r)];
    if (list.empty()) continue;
    Eigen::MatrixXd P(static_cast<Eigen::Index>(list.size()), m.cols());
    for (std::size_t k = 0; k < list.size(); ++k) P.row(static_cast<Eigen::Index>(k)) = list[k];
    out.per_axis.push_back(Families::Axis{r, std::move(P)});
  }
  return out;
}

struct TubeBuilderCtx {
  SymbolicTube tube;
  std::vector<int> u_abs;  // auxiliary id of |u_j|, -1 until created

  AffExpr abs_of(const Eigen::VectorXd& u_coef, double c0) {
    AffExpr e;
    if (u_coef.isZero(0.0)) {
      e.c0 = std::abs(c0);
      return e;
    }
    TDef def;
    def.u_coef = u_coef;
    def.c0 = c0;
    tube.tdefs.push_back(std::move(def));
    e.add(static_cast<int>(tube.tdefs.size()) - 1, 1.0);
    return e;
  }

  int u_abs_var(int j, int n_inputs) {
    if (u_abs.empty()) u_abs.assign(static_cast<std::size_t>(n_inputs), -1);
    int& id = u_abs[static_cast<std::size_t>(j)];
    if (id < 0) {
      TDef def;
      def.u_coef = Eigen::VectorXd::Unit(n_inputs, j);
      def.c0 = 0.0;
      tube.tdefs.push_back(std::move(def));
      id = static_cast<int>(tube.tdefs.size()) - 1;
    }
    return id;
  }
};

// Effect of one row-factor family P on an affine center plus generator list:
// sum_k [ |p_k . c0| + sum_j |p_k . Cu_j| |u_j| + sum_g |p_k . v_g| s_g ].
// The constant and generator parts are exact; the input-dependent center part
// is bounded through the per-input magnitudes, which keeps the expression
// affine in the auxiliaries.
AffExpr family_effect(const Eigen::MatrixXd& P, const Eigen::VectorXd& c0,
                      const Eigen::MatrixXd& cU, const std::vector<TubeGen>& gens,
                      TubeBuilderCtx& ctx, int n_inputs) {
  AffExpr e;
  e.c0 = (P * c0).cwiseAbs().sum();
  if (!cU.isZero(0.0)) {
    Eigen::RowVectorXd w = (P * cU).cwiseAbs().colwise().sum();
    for (int j = 0; j < n_inputs; ++j) {
      if (w(j) > 0.0) e.add(ctx.u_abs_var(j, n_inputs), w(j));
    }
  }
  if (!gens.empty()) {
    Eigen::MatrixXd V(P.cols(), static_cast<Eigen::Index>(gens.size()));
    for (std::size_t g = 0; g < gens.size(); ++g) V.col(static_cast<Eigen::Index>(g)) = gens[g].dir;
    Eigen::RowVectorXd wg = (P * V).cwiseAbs().colwise().sum();
    for (std::size_t g = 0; g < gens.size(); ++g) {
      const double coef = wg(static_cast<Eigen::Index>(g));
      if (coef != 0.0) e += gens[g].scale.scaled(coef);
    }
  }
  return e;
}

}  // namespace

SymbolicTube build_symbolic_tube(const LearnedSetModel& sm, const Eigen::VectorXd& z0,
                                 double eps_center, double eps_max, double theta_max, int N,
                                 int gen_budget) {
  if (N < 1) throw std::invalid_argument("build_symbolic_tube: horizon must be >= 1");
  const Eigen::Index nz = sm.nz();
  const Eigen::Index nx = sm.state_dim();
  const Eigen::Index m = nz + 3;
  if (z0.size() != nz) throw std::invalid_argument("build_symbolic_tube: z0 dim mismatch");
  if (sm.M_abhj.cols() != m || sm.M_c.cols() != nz) {
    throw std::invalid_argument("build_symbolic_tube: model set shape mismatch");
  }

  Families ab = decompose_families(sm.M_abhj, sm.abhj_factored, "M_ABHJ");
  Families mc = decompose_families(sm.M_c, sm.c_factored, "M_C");
  const Eigen::VectorXd rho_radius = sm.Z_rho.generators.cwiseAbs().rowwise().sum();

  TubeBuilderCtx ctx;
  ctx.tube.N = N;
  ctx.tube.n_inputs = N;

  Eigen::VectorXd zc0 = z0;
  Eigen::MatrixXd zcU = Eigen::MatrixXd::Zero(nz, N);
  std::vector<TubeGen> gens;
  // lazily cached |center_j| expressions of the current lifted center, used
  // by the axis-aligned interval parts only
  std::vector<std::optional<AffExpr>> absc(static_cast<std::size_t>(nz));
  auto abs_center = [&](Eigen::Index j) -> const AffExpr& {
    auto& slot = absc[static_cast<std::size_t>(j)];
    if (!slot.has_value()) slot = ctx.abs_of(zcU.row(j).transpose(), zc0(j));
    return *slot;
  };

  for (int step = 0; step < N; ++step) {
    // product center over [z; u; eps; theta]
    Eigen::VectorXd pc0(m);
    pc0 << zc0, 0.0, eps_center, 0.0;
    Eigen::MatrixXd pcU = Eigen::MatrixXd::Zero(m, N);
    pcU.topRows(nz) = zcU;
    pcU(nz, step) = 1.0;

    // product generators
    std::vector<TubeGen> pgens;
    pgens.reserve(gens.size() + 2);
    for (const auto& g : gens) {
      Eigen::VectorXd dir = Eigen::VectorXd::Zero(m);
      dir.head(nz) = g.dir;
      pgens.push_back(TubeGen{std::move(dir), g.scale});
    }
    AffExpr one;
    one.c0 = 1.0;
    if (eps_max > 0.0) {
      Eigen::VectorXd dir = Eigen::VectorXd::Zero(m);
      dir(nz + 1) = eps_max;
      pgens.push_back(TubeGen{std::move(dir), one});
    }
    if (theta_max > 0.0) {
      Eigen::VectorXd dir = Eigen::VectorXd::Zero(m);
      dir(nz + 2) = theta_max;
      pgens.push_back(TubeGen{std::move(dir), one});
    }

    // |product center| entries consumed by the axis-aligned interval parts
    std::vector<std::optional<AffExpr>> absp(3);
    auto abs_prod = [&](Eigen::Index j) -> const AffExpr& {
      if (j < nz) return abs_center(j);
      auto& slot = absp[static_cast<std::size_t>(j - nz)];
      if (!slot.has_value()) {
        AffExpr e;
        if (j == nz) {
          e.add(ctx.u_abs_var(step, N), 1.0);
        } else {
          e.c0 = std::abs(pc0(j));
        }
        slot = e;
      }
      return *slot;
    };

    // next lifted center
    Eigen::VectorXd zc0_next = ab.center * pc0;
    Eigen::MatrixXd zcU_next = ab.center * pcU;

    std::vector<TubeGen> next;
    next.reserve(pgens.size() + static_cast<std::size_t>(nz));
    for (const auto& g : pgens) next.push_back(TubeGen{ab.center * g.dir, g.scale});

    // per-axis bucket: factored families, axis-aligned interval part, process error
    std::vector<AffExpr> bucket(static_cast<std::size_t>(nz));
    if (!ab.shared.empty()) {
      AffExpr e = family_effect(ab.shared.P, pc0, pcU, pgens, ctx, N);
      for (Eigen::Index a = 0; a < nz; ++a) {
        if (ab.shared.row_scale(a) != 0.0) {
          bucket[static_cast<std::size_t>(a)] += e.scaled(ab.shared.row_scale(a));
        }
      }
    }
    for (const auto& fam : ab.per_axis) {
      bucket[static_cast<std::size_t>(fam.row)] += family_effect(fam.P, pc0, pcU, pgens, ctx, N);
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      if (ab.R.col(j).isZero(0.0)) continue;
      AffExpr w = abs_prod(j);
      for (const auto& g : pgens) {
        if (g.dir(j) != 0.0) w += g.scale.scaled(std::abs(g.dir(j)));
      }
      for (Eigen::Index a = 0; a < nz; ++a) {
        if (ab.R(a, j) != 0.0) bucket[static_cast<std::size_t>(a)] += w.scaled(ab.R(a, j));
      }
    }
    for (Eigen::Index sgen = 0; sgen < sm.Z_sigma.num_generators(); ++sgen) {
      const Eigen::VectorXd col = sm.Z_sigma.generators.col(sgen);
      Eigen::Index nnz = 0, axis = -1;
      for (Eigen::Index a = 0; a < nz; ++a) {
        if (col(a) != 0.0) {
          ++nnz;
          axis = a;
        }
      }
      if (nnz == 0) continue;
      if (nnz == 1) {
        bucket[static_cast<std::size_t>(axis)].c0 += std::abs(col(axis));
      } else {
        next.push_back(TubeGen{col, one});
      }
    }
    for (Eigen::Index a = 0; a < nz; ++a) {
      auto& e = bucket[static_cast<std::size_t>(a)];
      if (e.c0 != 0.0 || !e.terms.empty()) {
        next.push_back(TubeGen{Eigen::VectorXd::Unit(nz, a), std::move(e)});
      }
    }

    // optional merge of constant generators into per-axis boxes
    if (gen_budget > 0 &&
        next.size() > static_cast<std::size_t>(gen_budget) * static_cast<std::size_t>(nz)) {
      std::vector<std::size_t> constant_idx;
      for (std::size_t g = 0; g < next.size(); ++g) {
        if (next[g].scale.terms.empty()) constant_idx.push_back(g);
      }
      const std::size_t target =
          static_cast<std::size_t>(gen_budget) * static_cast<std::size_t>(nz);
      if (next.size() > target && !constant_idx.empty()) {
        std::stable_sort(constant_idx.begin(), constant_idx.end(),
                         [&](std::size_t a, std::size_t b) {
                           return next[a].dir.norm() * next[a].scale.c0 <
                                  next[b].dir.norm() * next[b].scale.c0;
                         });
        const std::size_t to_merge = std::min(constant_idx.size(), next.size() - target);
        Eigen::VectorXd box = Eigen::VectorXd::Zero(nz);
        std::vector<bool> dead(next.size(), false);
        for (std::size_t i = 0; i < to_merge; ++i) {
          const auto& g = next[constant_idx[i]];
          box += g.dir.cwiseAbs() * g.scale.c0;
          dead[constant_idx[i]] = true;
        }
        std::vector<TubeGen> merged;
        merged.reserve(next.size() - to_merge + static_cast<std::size_t>(nz));
        for (std::size_t g = 0; g < next.size(); ++g) {
          if (!dead[g]) merged.push_back(std::move(next[g]));
        }
        for (Eigen::Index a = 0; a < nz; ++a) {
          if (box(a) != 0.0) {
            AffExpr e;
            e.c0 = box(a);
            merged.push_back(TubeGen{Eigen::VectorXd::Unit(nz, a), std::move(e)});
          }
        }
        next = std::move(merged);
      }
    }

    zc0 = std::move(zc0_next);
    zcU = std::move(zcU_next);
    gens = std::move(next);

    // the |center| cache now refers to this step's output
    for (Eigen::Index j = 0; j < nz; ++j) absc[static_cast<std::size_t>(j)].reset();

    // projection to state space
    TubeStep ts;
    ts.zc0 = zc0;
    ts.zcU = zcU;
    ts.zgens = gens;
    ts.xc0 = mc.center * zc0;
    ts.xcU = mc.center * zcU;
    ts.x_radius.assign(static_cast<std::size_t>(nx), AffExpr{});
    for (const auto& g : gens) {
      Eigen::VectorXd proj = mc.center * g.dir;
      for (Eigen::Index b = 0; b < nx; ++b) {
        if (proj(b) != 0.0) {
          ts.x_radius[static_cast<std::size_t>(b)] += g.scale.scaled(std::abs(proj(b)));
        }
      }
    }
    if (!mc.shared.empty()) {
      AffExpr e = family_effect(mc.shared.P, zc0, zcU, gens, ctx, N);
      for (Eigen::Index b = 0; b < nx; ++b) {
        if (mc.shared.row_scale(b) != 0.0) {
          ts.x_radius[static_cast<std::size_t>(b)] += e.scaled(mc.shared.row_scale(b));
        }
      }
    }
    for (const auto& fam : mc.per_axis) {
      ts.x_radius[static_cast<std::size_t>(fam.row)] +=
          family_effect(fam.P, zc0, zcU, gens, ctx, N);
    }
    for (Eigen::Index j = 0; j < nz; ++j) {
      if (mc.R.col(j).isZero(0.0)) continue;
      AffExpr w = abs_center(j);
      for (const auto& g : gens) {
        if (g.dir(j) != 0.0) w += g.scale.scaled(std::abs(g.dir(j)));
      }
      for (Eigen::Index b = 0; b < nx; ++b) {
        if (mc.R(b, j) != 0.0) ts.x_radius[static_cast<std::size_t>(b)] += w.scaled(mc.R(b, j));
      }
    }
    for (Eigen::Index b = 0; b < nx; ++b) {
      ts.x_radius[static_cast<std::size_t>(b)].c0 += rho_radius(b);
    }

    ctx.tube.steps.push_back(std::move(ts));
  }

  return ctx.tube;
}

}  // namespace rnddpc::reach
