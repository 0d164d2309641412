#include "doctest.h"
#include "helpers.hpp"
#include "rpr/rif.hpp"

using namespace rpr;
using rpr::test::cloud_of;

namespace {

GroupIndex single_group(std::vector<Index> ids) {
  GroupIndex g;
  g.k = static_cast<Index>(ids.size());
  g.neighbor_ids.resize(1, g.k);
  for (Index s = 0; s < g.k; ++s) g.neighbor_ids(0, s) = ids[static_cast<std::size_t>(s)];
  g.seed_ids = {ids.front()};
  return g;
}

double angle(const Eigen::Vector3d& u, const Eigen::Vector3d& v) {
  if (u.norm() <= 1e-9 || v.norm() <= 1e-9) return 0.0;
  // Kahan's half-angle form.
  const Eigen::Vector3d a = u / u.norm(), b = v / v.norm();
  return 2.0 * std::atan2((a - b).norm(), (a + b).norm());
}

/// Direct per-element evaluation of all 11 channels.
RowMatrix<double> rif_oracle(const PointCloud<double>& seeds, const GroupIndex& g, double sigma) {
  const Index ns = g.num_seeds(), k = g.k;
  RowMatrix<double> out(ns * k, 11);
  for (Index n = 0; n < ns; ++n) {
    std::vector<Eigen::Vector3d> x;
    for (Index s = 0; s < k; ++s) x.push_back(seeds.row(g.neighbor_ids(n, s)).transpose());
    const Eigen::Vector3d xi = seeds.row(n).transpose();
    Eigen::Vector3d m = Eigen::Vector3d::Zero();
    for (const auto& p : x) m += p;
    m /= static_cast<double>(k);
    Index c = -1, f = 0;
    for (Index s = 0; s < k; ++s) {
      const double d = (x[s] - xi).norm();
      if (s > 0 && (c < 0 || d < (x[c] - xi).norm())) c = s;
      if (d > (x[f] - xi).norm()) f = s;
    }
    for (Index s = 0; s < k; ++s) {
      const Eigen::Vector3d& xk = x[s];
      double fss = 0.0;
      if (xk.norm() > 1e-9)
        for (Index j = 0; j < k; ++j) {
          if (j == s || x[j].norm() <= 1e-9) continue;
          const double th = angle(x[j], xk);
          fss += x[j].norm() * std::exp(-th * th / (2 * sigma * sigma));
        }
      auto row = out.row(n * k + s);
      row(0) = xk.norm();
      row(1) = fss;
      row(2) = (xk - xi).norm();
      row(3) = (xk - m).norm();
      row(4) = angle(xi - xk, m - xk);
      row(5) = angle(xk - xi, m - xi);
      row(6) = angle(xk - m, xi - m);
      row(7) = (x[c] - xi).norm();
      row(8) = (x[f] - xi).norm();
      row(9) = angle(x[c] - xi, m - xi);
      row(10) = angle(x[f] - xi, m - xi);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("spherical signal examples") {
  const auto origin = cloud_of({{0, 0, 0}});
  const auto s0 = spherical_signals(origin, single_group({0}));
  CHECK(s0(0, 0) == 0.0);
  CHECK(s0(0, 1) == 0.0);

  const auto one = cloud_of({{1, 0, 0}});
  const auto s1 = spherical_signals(one, single_group({0}));
  CHECK(s1(0, 0) == 1.0);
  CHECK(s1(0, 1) == 0.0);

  const auto two = cloud_of({{1, 0, 0}, {0, 1, 0}});
  const auto s2 = spherical_signals(two, single_group({0, 1}), 0.2);
  CHECK(s2(0, 1) == doctest::Approx(std::exp(-(M_PI / 2) * (M_PI / 2) / 0.08)).epsilon(1e-12));
}

TEST_CASE("ilrif examples") {
  const auto c = cloud_of({{0, 0, 0}, {0, 0, 0}, {2, 0, 0}});
  const auto f = ilrif(c, single_group({0, 1, 2}));
  // self slot
  CHECK(f(0, 0) == 0.0);
  CHECK(f(0, 2) == 0.0);
  CHECK(f(0, 3) == 0.0);
  // m = (2/3, 0, 0) for the three-point group; check against the oracle.
  const auto o = rif_oracle(c, single_group({0, 1, 2}), 0.2);
  CHECK((f - o.middleCols(2, 5)).cwiseAbs().maxCoeff() <= 1e-12);

  const auto pair = cloud_of({{0, 0, 0}, {2, 0, 0}});
  const auto p = ilrif(pair, single_group({0, 1}));
  CHECK(p(1, 0) == doctest::Approx(2.0));
  CHECK(p(1, 1) == doctest::Approx(1.0));
  CHECK(p(1, 2) == doctest::Approx(0.0));
  CHECK(p(1, 3) == doctest::Approx(0.0));
  CHECK(p(1, 4) == doctest::Approx(M_PI));
}

TEST_CASE("ilrif triangle angles sum to pi") {
  const auto c = rpr::test::uniform_cloud(64, 3);
  const GroupIndex g = knn_group(c, 8);
  const auto f = ilrif(c, g);
  for (Index r = 0; r < f.rows(); ++r) {
    if (r % g.k == 0) continue;
    CHECK(f(r, 2) + f(r, 3) + f(r, 4) == doctest::Approx(M_PI).epsilon(1e-12));
  }
}

TEST_CASE("glrif examples and errors") {
  const auto c = cloud_of({{0, 0, 0}, {1, 0, 0}, {3, 0, 0}});
  const auto f = glrif(c, single_group({0, 1, 2}));
  for (Index s = 0; s < 3; ++s) {
    CHECK(f(s, 0) == doctest::Approx(1.0));
    CHECK(f(s, 1) == doctest::Approx(3.0));
    CHECK(f(s, 2) == doctest::Approx(0.0));
    CHECK(f(s, 3) == doctest::Approx(0.0));
  }

  const auto eq = cloud_of({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  const auto e = glrif(eq, single_group({0, 1, 2, 3}));
  CHECK(e(0, 0) == doctest::Approx(e(0, 1)));

  CHECK_THROWS_AS(glrif(c, single_group({0})), InvalidArgument);
}

TEST_CASE("assemble_rifs matches the direct oracle") {
  const auto c = normalize_cloud(rpr::test::gaussian_cloud(300, 5));
  const GroupIndex g = sample_and_group(c, 100, 12);
  const auto seeds = select_rows(c, g.seed_ids);
  const auto r = assemble_rifs(seeds, g);
  CHECK(r.values.rows() == 100 * 12);
  CHECK(r.values.cols() == 11);
  CHECK((r.values - rif_oracle(seeds, g, 0.2)).cwiseAbs().maxCoeff() <= 1e-12);
  for (Index n = 0; n < 100; ++n) {
    CHECK(r(n, 0, kRifH) == doctest::Approx(seeds.row(n).norm()));
    for (Index s = 1; s < 12; ++s)
      for (int ch = kRifD3; ch < kRifChannels; ++ch) CHECK(r(n, s, ch) == r(n, 0, ch));
  }
  CHECK(r.values.allFinite());
  CHECK((r.values.array() >= 0.0).all());
  for (int ch : {kRifA1, kRifA2, kRifA3, kRifA4, kRifA5}) CHECK(r.values.col(ch).maxCoeff() <= M_PI);
}

TEST_CASE("assemble_rifs shape at the default size") {
  const auto c = normalize_cloud(rpr::test::uniform_cloud(1100, 1));
  const GroupIndex g = sample_and_group(c, 1024, 32);
  const auto r = assemble_rifs(select_rows(c, g.seed_ids), g);
  CHECK(r.num_seeds == 1024);
  CHECK(r.k == 32);
  CHECK(r.values.rows() == 1024 * 32);
}

TEST_CASE("rifs are invariant under rotation with a shared index") {
  const auto c = normalize_cloud(rpr::test::uniform_cloud(256, 8));
  const GroupIndex g = sample_and_group(c, 64, 16);
  const auto ref = assemble_rifs(select_rows(c, g.seed_ids), g);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto rc = apply_rotation(c, random_rotation(s, RotationMode::so3()));
    const auto rot = assemble_rifs(select_rows(rc, g.seed_ids), g);
    CHECK((rot.values - ref.values).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("rifs permute with the neighbor order") {
  const auto c = rpr::test::uniform_cloud(40, 12);
  GroupIndex g = knn_group(c, 6);
  const auto ref = assemble_rifs(c, g);
  GroupIndex p = g;
  for (Index n = 0; n < p.num_seeds(); ++n) {
    std::swap(p.neighbor_ids(n, 2), p.neighbor_ids(n, 5));
  }
  const auto perm = assemble_rifs(c, p);
  for (Index n = 0; n < g.num_seeds(); ++n) {
    for (int ch = 0; ch < kRifD3; ++ch) {
      CHECK(perm(n, 2, ch) == doctest::Approx(ref(n, 5, ch)).epsilon(1e-12));
      CHECK(perm(n, 5, ch) == doctest::Approx(ref(n, 2, ch)).epsilon(1e-12));
    }
    for (int ch = kRifD3; ch < kRifChannels; ++ch) CHECK(perm(n, 3, ch) == doctest::Approx(ref(n, 3, ch)).epsilon(1e-12));
  }
}

TEST_CASE("distance channels scale and angle channels stay fixed under scaling") {
  const auto c = rpr::test::uniform_cloud(80, 21);
  const GroupIndex g = knn_group(c, 8);
  const auto a = assemble_rifs(c, g);
  const PointCloud<double> scaled = 2.5 * c;
  const auto b = assemble_rifs(scaled, g);
  for (int ch : {kRifH, kRifD1, kRifD2, kRifD3, kRifD4})
    CHECK((b.values.col(ch) - 2.5 * a.values.col(ch)).cwiseAbs().maxCoeff() <= 1e-9);
  for (int ch : {kRifA1, kRifA2, kRifA3, kRifA4, kRifA5})
    CHECK((b.values.col(ch) - a.values.col(ch)).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("rif input validation") {
  const auto c = rpr::test::uniform_cloud(10, 1);
  GroupIndex g = knn_group(c, 3);
  g.neighbor_ids(0, 1) = 99;
  CHECK_THROWS_AS(assemble_rifs(c, g), InvalidArgument);
}
