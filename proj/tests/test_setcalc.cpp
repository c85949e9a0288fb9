#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <random>

#include "rnddpc/serialize.hpp"
#include "rnddpc/setcalc.hpp"
#include "test_util.hpp"

using namespace rnddpc::setcalc;
using testutil::random_beta;
using testutil::random_matzono;
using testutil::random_vector;
using testutil::random_zonotope;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) x(i++) = d;
  return x;
}

}  // namespace

TEST_CASE("linear map: identity and scaling") {
  Zonotope z(vec({1, 1}), (Eigen::MatrixXd(2, 2) << 1, 0, 0, 1).finished());
  Zonotope id = linear_map(Eigen::MatrixXd::Identity(2, 2), z);
  CHECK(id.center.isApprox(z.center));
  CHECK(id.generators.isApprox(z.generators));

  Zonotope two = linear_map(2.0 * Eigen::MatrixXd::Identity(2, 2), z);
  CHECK(two.center.isApprox(vec({2, 2})));
  CHECK(two.generators.isApprox((Eigen::MatrixXd(2, 2) << 2, 0, 0, 2).finished()));
}

TEST_CASE("linear map rejects shape mismatch") {
  Zonotope z(vec({0, 0, 0}), Eigen::MatrixXd::Zero(3, 1));
  CHECK_THROWS_AS(linear_map(Eigen::MatrixXd::Identity(2, 2), z), std::invalid_argument);
}

TEST_CASE("linear map sampling oracle") {
  std::mt19937_64 eng(101);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index d = 1 + trial % 4, m = 1 + (trial / 2) % 4, g = trial % 7;
    Zonotope z = random_zonotope(eng, d, g);
    Eigen::MatrixXd L = testutil::random_matrix(eng, m, d);
    Zonotope out = linear_map(L, z);
    for (int s = 0; s < 50; ++s) {
      Eigen::VectorXd beta = random_beta(eng, g);
      Eigen::VectorXd x = sample(z, beta);
      // same beta is a witness in the mapped set
      CHECK((L * x - sample(out, beta)).norm() < 1e-9);
      CHECK(interval_hull(out).contains(L * x, 1e-9));
    }
  }
}

TEST_CASE("minkowski sum: formula, identity, commutation") {
  Zonotope a(vec({1}), (Eigen::MatrixXd(1, 1) << 2).finished());
  Zonotope b(vec({3}), (Eigen::MatrixXd(1, 1) << 1).finished());
  Zonotope s = minkowski_sum(a, b);
  CHECK(s.center(0) == doctest::Approx(4));
  CHECK(s.generators(0, 0) == doctest::Approx(2));
  CHECK(s.generators(0, 1) == doctest::Approx(1));

  // point is the additive identity
  Zonotope p = Zonotope::point(vec({0}));
  Zonotope same = minkowski_sum(a, p);
  CHECK(same.center.isApprox(a.center));
  CHECK(same.generators.isApprox(a.generators));

  // sum with a point only translates the center
  Zonotope shift = minkowski_sum(a, Zonotope::point(vec({5})));
  CHECK(shift.center(0) == doctest::Approx(6));
  CHECK(shift.generators.isApprox(a.generators));

  // commutes up to generator ordering
  std::mt19937_64 eng(7);
  Zonotope z1 = random_zonotope(eng, 3, 4), z2 = random_zonotope(eng, 3, 2);
  Zonotope ab = minkowski_sum(z1, z2), ba = minkowski_sum(z2, z1);
  CHECK(ab.center.isApprox(ba.center));
  IntervalBox h1 = interval_hull(ab), h2 = interval_hull(ba);
  CHECK(h1.lower.isApprox(h2.lower));
  CHECK(h1.upper.isApprox(h2.upper));
}

TEST_CASE("minkowski sum sampling oracle") {
  std::mt19937_64 eng(102);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index d = 1 + trial % 4;
    Zonotope z1 = random_zonotope(eng, d, trial % 5), z2 = random_zonotope(eng, d, (trial + 2) % 5);
    Zonotope s = minkowski_sum(z1, z2);
    for (int k = 0; k < 50; ++k) {
      Eigen::VectorXd b1 = random_beta(eng, z1.num_generators());
      Eigen::VectorXd b2 = random_beta(eng, z2.num_generators());
      Eigen::VectorXd x = sample(z1, b1) + sample(z2, b2);
      Eigen::VectorXd bw(b1.size() + b2.size());
      bw << b1, b2;
      CHECK((x - sample(s, bw)).norm() < 1e-9);
    }
  }
}

TEST_CASE("cartesian product block structure") {
  Zonotope a(vec({1}), (Eigen::MatrixXd(1, 1) << 1).finished());
  Zonotope b(vec({2}), (Eigen::MatrixXd(1, 1) << 3).finished());
  Zonotope p = cartesian_product(a, b);
  CHECK(p.center.isApprox(vec({1, 2})));
  Eigen::MatrixXd expect(2, 2);
  expect << 1, 0, 0, 3;
  CHECK(p.generators.isApprox(expect));

  Zonotope pp = cartesian_product(Zonotope::point(vec({1})), Zonotope::point(vec({2})));
  CHECK(pp.num_generators() == 0);
  CHECK(pp.center.isApprox(vec({1, 2})));
}

TEST_CASE("cartesian product sampling oracle") {
  std::mt19937_64 eng(103);
  for (int trial = 0; trial < 20; ++trial) {
    Zonotope z1 = random_zonotope(eng, 1 + trial % 3, trial % 4);
    Zonotope z2 = random_zonotope(eng, 1 + (trial + 1) % 3, (trial + 1) % 4);
    Zonotope p = cartesian_product(z1, z2);
    for (int k = 0; k < 50; ++k) {
      Eigen::VectorXd b1 = random_beta(eng, z1.num_generators());
      Eigen::VectorXd b2 = random_beta(eng, z2.num_generators());
      Eigen::VectorXd x(p.dim());
      x << sample(z1, b1), sample(z2, b2);
      Eigen::VectorXd bw(b1.size() + b2.size());
      bw << b1, b2;
      CHECK((x - sample(p, bw)).norm() < 1e-9);
    }
  }
}

TEST_CASE("interval hull") {
  Zonotope p = Zonotope::point(vec({3, -1}));
  IntervalBox hb = interval_hull(p);
  CHECK(hb.lower.isApprox(p.center));
  CHECK(hb.upper.isApprox(p.center));

  Zonotope z(vec({0, 0}), (Eigen::MatrixXd(2, 2) << 1, 1, 1, -1).finished());
  IntervalBox h = interval_hull(z);
  CHECK(h.lower.isApprox(vec({-2, -2})));
  CHECK(h.upper.isApprox(vec({2, 2})));

  std::mt19937_64 eng(104);
  for (int trial = 0; trial < 10; ++trial) {
    Zonotope r = random_zonotope(eng, 3, 5);
    IntervalBox hull = interval_hull(r);
    for (int k = 0; k < 100; ++k) {
      CHECK(hull.contains(sample(r, random_beta(eng, 5)), 1e-12));
    }
  }
}

TEST_CASE("hull matches brute-force vertex enumeration (small cases)") {
  std::mt19937_64 eng(105);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index d = 1 + trial % 2, g = trial % 4;
    Zonotope z = random_zonotope(eng, d, g);
    IntervalBox h = interval_hull(z);
    Eigen::VectorXd lo = z.center, hi = z.center;
    for (int mask = 0; mask < (1 << g); ++mask) {
      Eigen::VectorXd beta(g);
      for (Eigen::Index i = 0; i < g; ++i) beta(i) = (mask >> i) & 1 ? 1.0 : -1.0;
      Eigen::VectorXd v = sample(z, beta);
      lo = lo.cwiseMin(v);
      hi = hi.cwiseMax(v);
    }
    CHECK((lo - h.lower).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((hi - h.upper).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("matzono_map ordering and hand expansion") {
  MatrixZonotope m((Eigen::MatrixXd(1, 1) << 1).finished(),
                   {(Eigen::MatrixXd(1, 1) << 0.5).finished()});
  Zonotope z(vec({2}), (Eigen::MatrixXd(1, 1) << 1).finished());
  Zonotope out = matzono_map(m, z);
  CHECK(out.center(0) == doctest::Approx(2));
  REQUIRE(out.num_generators() == 3);
  CHECK(out.generators(0, 0) == doctest::Approx(1));    // C_M * g
  CHECK(out.generators(0, 1) == doctest::Approx(1));    // G_M * c
  CHECK(out.generators(0, 2) == doctest::Approx(0.5));  // G_M * g

  // degenerate: no generators anywhere reduces to a plain linear map of a point
  MatrixZonotope mp = MatrixZonotope::point((Eigen::MatrixXd(2, 2) << 1, 2, 3, 4).finished());
  Zonotope zp = Zonotope::point(vec({1, 1}));
  Zonotope outp = matzono_map(mp, zp);
  CHECK(outp.num_generators() == 0);
  CHECK(outp.center.isApprox(vec({3, 7})));
}

TEST_CASE("matzono_map sampling oracle") {
  std::mt19937_64 eng(106);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 1 + trial % 3, mm = 1 + (trial + 1) % 3;
    MatrixZonotope m = random_matzono(eng, n, mm, trial % 4);
    Zonotope z = random_zonotope(eng, mm, (trial + 2) % 4);
    Zonotope out = matzono_map(m, z);
    IntervalBox hull = interval_hull(out);
    for (int k = 0; k < 50; ++k) {
      Eigen::VectorXd bm = random_beta(eng, m.num_generators());
      Eigen::VectorXd bz = random_beta(eng, z.num_generators());
      Eigen::VectorXd y = sample(m, bm) * sample(z, bz);
      // witness: [bz; bm; bm (x) bz]
      Eigen::VectorXd bw(out.num_generators());
      bw.head(bz.size()) = bz;
      bw.segment(bz.size(), bm.size()) = bm;
      for (Eigen::Index j = 0; j < bm.size(); ++j) {
        for (Eigen::Index i = 0; i < bz.size(); ++i) {
          bw(bz.size() + bm.size() + j * bz.size() + i) = bm(j) * bz(i);
        }
      }
      CHECK((y - sample(out, bw)).norm() < 1e-9);
      CHECK(hull.contains(y, 1e-9));
    }
  }
}

TEST_CASE("zonotope sample: formula and symmetry") {
  Zonotope z(vec({0}), (Eigen::MatrixXd(1, 2) << 1, 2).finished());
  CHECK(sample(z, vec({0, 0}))(0) == doctest::Approx(0));
  CHECK(sample(z, vec({1, 1}))(0) == doctest::Approx(3));
  std::mt19937_64 eng(107);
  Zonotope r = random_zonotope(eng, 3, 4);
  Eigen::VectorXd beta = random_beta(eng, 4);
  Eigen::VectorXd plus = sample(r, beta), minus = sample(r, (-beta).eval());
  CHECK((plus + minus - 2 * r.center).norm() < 1e-12);
  CHECK_THROWS_AS(sample(r, vec({2, 0, 0, 0})), std::invalid_argument);
}

TEST_CASE("zonotope reduce: budget, soundness, order-1 box") {
  std::mt19937_64 eng(108);
  Zonotope small = random_zonotope(eng, 3, 4);
  Zonotope same = reduce(small, 2);  // 4 <= 2*3, untouched
  CHECK(same.generators.isApprox(small.generators));

  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index d = 2 + trial % 3;
    Zonotope z = random_zonotope(eng, d, 12);
    const int order = 1 + trial % 3;
    Zonotope red = reduce(z, order);
    CHECK(red.num_generators() <= order * d);
    IntervalBox hull = interval_hull(red);
    for (int k = 0; k < 50; ++k) {
      CHECK(hull.contains(sample(z, random_beta(eng, 12)), 1e-9));
    }
  }

  Zonotope z = random_zonotope(eng, 3, 7);
  Zonotope red1 = reduce(z, 1);
  IntervalBox want = interval_hull(z), got = interval_hull(red1);
  CHECK(got.lower.isApprox(want.lower, 1e-12));
  CHECK(got.upper.isApprox(want.upper, 1e-12));
  // order-1 result is axis-aligned
  for (Eigen::Index i = 0; i < red1.num_generators(); ++i) {
    CHECK((red1.generators.col(i).array() != 0.0).count() == 1);
  }
}

TEST_CASE("matrix zonotope reduce") {
  std::mt19937_64 eng(109);
  MatrixZonotope small = random_matzono(eng, 2, 3, 4);
  MatrixZonotope same = reduce(small, 10);
  CHECK(same.num_generators() == 4);

  for (int trial = 0; trial < 10; ++trial) {
    MatrixZonotope m = random_matzono(eng, 2, 3, 15);
    MatrixZonotope red = reduce(m, 9);  // 6-entry box + up to 3 kept
    CHECK(red.num_generators() <= 9);
    // kept generators (largest Frobenius norms) dominate boxed ones
    double min_kept = 1e300, max_boxed = 0;
    std::vector<double> norms;
    for (const auto& g : m.generators) norms.push_back(g.norm());
    std::sort(norms.rbegin(), norms.rend());
    const std::size_t kept = 3;
    for (std::size_t i = 0; i < kept; ++i) min_kept = std::min(min_kept, norms[i]);
    for (std::size_t i = kept; i < norms.size(); ++i) max_boxed = std::max(max_boxed, norms[i]);
    CHECK(min_kept >= max_boxed - 1e-12);

    // vectorized membership is preserved
    MatrixInterval hull = interval_hull(red);
    for (int k = 0; k < 100; ++k) {
      Eigen::MatrixXd x = sample(m, random_beta(eng, 15));
      CHECK(((x - hull.lower).array() >= -1e-9).all());
      CHECK(((hull.upper - x).array() >= -1e-9).all());
    }
  }
}

TEST_CASE("serialization round-trips bit-exactly") {
  std::mt19937_64 eng(110);
  Zonotope z = random_zonotope(eng, 4, 6);
  auto j = rnddpc::serialize::to_json(z);
  Zonotope back = rnddpc::serialize::zonotope_from_json(j);
  CHECK(back.center == z.center);
  CHECK(back.generators == z.generators);

  MatrixZonotope m = random_matzono(eng, 3, 5, 4);
  auto jm = rnddpc::serialize::to_json(m);
  MatrixZonotope mb = rnddpc::serialize::matzono_from_json(jm);
  CHECK(mb.center == m.center);
  for (std::size_t i = 0; i < m.generators.size(); ++i) CHECK(mb.generators[i] == m.generators[i]);

  // through text as the harness cache does
  auto j2 = nlohmann::json::parse(j.dump());
  Zonotope back2 = rnddpc::serialize::zonotope_from_json(j2);
  CHECK(back2.center == z.center);
  CHECK(back2.generators == z.generators);
}

TEST_CASE("composed operations keep sampled members inside") {
  std::mt19937_64 eng(111);
  for (int trial = 0; trial < 10; ++trial) {
    Zonotope z1 = random_zonotope(eng, 2, 3);
    Zonotope z2 = random_zonotope(eng, 3, 2);
    MatrixZonotope m = random_matzono(eng, 2, 5, 3);
    Eigen::MatrixXd L = testutil::random_matrix(eng, 5, 5);
    Zonotope pipeline = reduce(matzono_map(m, linear_map(L, cartesian_product(z1, z2))), 3);
    IntervalBox hull = interval_hull(pipeline);
    for (int k = 0; k < 100; ++k) {
      Eigen::VectorXd x(5);
      x << sample(z1, random_beta(eng, 3)), sample(z2, random_beta(eng, 2));
      Eigen::VectorXd y = sample(m, random_beta(eng, 3)) * (L * x);
      CHECK(hull.contains(y, 1e-9));
    }
  }
}
