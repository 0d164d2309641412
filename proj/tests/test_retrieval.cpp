#include "doctest.h"
#include "helpers.hpp"
#include "rpr/retrieval.hpp"

#include <random>

using namespace rpr;

namespace {

PlaceDatabase db_of(std::initializer_list<std::pair<std::vector<float>, Eigen::Vector2d>> rows) {
  PlaceDatabase db;
  for (const auto& [d, p] : rows) db.add(Eigen::Map<const Eigen::VectorXf>(d.data(), static_cast<Index>(d.size())), p);
  return db;
}

RprNetConfig small_net() {
  RprNetConfig c;
  c.n_seeds = 24;
  c.k = 6;
  c.channels = 3;
  c.final_channels = 12;
  c.descriptor_dim = 12;
  c.kernel_hidden = 8;
  return c;
}

}  // namespace

TEST_CASE("query ordering and ties") {
  const auto db = db_of({{{0.f, 0.f}, {0, 0}}, {{1.f, 0.f}, {100, 0}}, {{0.f, 1.f}, {200, 0}}, {{3.f, 3.f}, {300, 0}}});
  CHECK(query(db, Eigen::Vector2f(0.1f, 0.f), 2) == std::vector<Index>{0, 1});
  // Rows 0, 1 and 2 all lie at distance sqrt(0.5); ids break the tie.
  CHECK(query(db, Eigen::Vector2f(0.5f, 0.5f), 3) == std::vector<Index>{0, 1, 2});
  CHECK(query(db, Eigen::Vector2f(1.f, 1.f), 2) == std::vector<Index>{1, 2});
  CHECK_THROWS_AS(query(db, Eigen::Vector3f(0.f, 0.f, 0.f), 1), InvalidArgument);
  CHECK_THROWS_AS(query(db, Eigen::Vector2f(0.f, 0.f), 5), InvalidArgument);
  CHECK_THROWS_AS(query(db, Eigen::Vector2f(0.f, 0.f), 0), InvalidArgument);
  CHECK_THROWS_AS(query(PlaceDatabase{}, Eigen::Vector2f(0.f, 0.f), 1), EmptyDatabase);
  PlaceDatabase d = db;
  CHECK_THROWS_AS(d.add(Eigen::Vector3f::Zero(), Eigen::Vector2d::Zero()), InvalidArgument);
}

TEST_CASE("evaluate recall, windows and exclusions") {
  const auto db = db_of({{{0.f}, {0, 0}}, {{1.f}, {100, 0}}, {{2.f}, {200, 0}}});
  SUBCASE("perfect retrieval") {
    const auto q = db_of({{{0.1f}, {10, 0}}, {{1.9f}, {200, 20}}});
    const auto r = evaluate(db, q);
    CHECK(r.recall_at_1 == 1.0);
    CHECK(r.recall_at_top1pct == 1.0);
    CHECK(r.window == 1);
    CHECK(r.num_queries == 2);
  }
  SUBCASE("wrong neighbor and the 25 m rule") {
    const auto q = db_of({{{0.1f}, {100, 0}}, {{2.f}, {200, 24.9}}, {{1.f}, {500, 0}}});
    const auto r = evaluate(db, q);
    CHECK(r.num_excluded == 1);
    CHECK(r.num_queries == 2);
    CHECK(r.recall_at_1 == 0.5);
  }
  SUBCASE("window is ceil(m / 100)") {
    PlaceDatabase big;
    for (int i = 0; i < 250; ++i) big.add(Eigen::VectorXf::Constant(1, static_cast<float>(i)), Eigen::Vector2d(100.0 * i, 0));
    const auto q = db_of({{{2.2f}, {0, 0}}});
    const auto r = evaluate(big, q);
    CHECK(r.window == 3);
    CHECK(r.recall_at_1 == 0.0);
    CHECK(r.recall_at_top1pct == 0.0);
    const auto q2 = db_of({{{1.2f}, {0, 0}}});
    CHECK(evaluate(big, q2).recall_at_top1pct == 1.0);
  }
  CHECK_THROWS_AS(evaluate(PlaceDatabase{}, db), EmptyDatabase);
}

TEST_CASE("random descriptors give chance-level recall") {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> g;
  double total = 0.0;
  const int reps = 20;
  for (int rep = 0; rep < reps; ++rep) {
    PlaceDatabase db, q;
    for (int i = 0; i < 100; ++i) {
      Eigen::VectorXf a(16), b(16);
      for (int j = 0; j < 16; ++j) {
        a(j) = g(rng);
        b(j) = g(rng);
      }
      db.add(a, Eigen::Vector2d(100.0 * i, 0));
      q.add(b, Eigen::Vector2d(100.0 * i, 0));
    }
    total += evaluate(db, q).recall_at_1;
  }
  // 2000 Bernoulli(0.01) trials: mean 0.01, sd about 0.0022.
  CHECK(total / reps == doctest::Approx(0.01).epsilon(0.8));
}

TEST_CASE("rotation sweep") {
  RprNet<double> net(small_net());
  net.initialize(3);
  std::vector<PointCloud<double>> dbc, qc;
  std::vector<Eigen::Vector2d> dbp, qp;
  for (int i = 0; i < 6; ++i) {
    const auto c = normalize_cloud(rpr::test::uniform_cloud(64, 100 + i));
    dbc.push_back(c);
    qc.push_back(c);
    dbp.emplace_back(100.0 * i, 0);
    qp.emplace_back(100.0 * i, 0);
  }
  const std::vector<RotationLevel> levels = {{RotationMode::z(0.0), "0"}, {RotationMode::z(M_PI), "z180"}, {RotationMode::so3(), "so3"}};
  const auto out = rotation_sweep(net, dbc, dbp, qc, qp, levels, false, 1);
  REQUIRE(out.size() == 3);
  CHECK(out[0].level.is_identity());
  CHECK(!out[1].level.is_identity());
  // Identical clouds at level 0 retrieve themselves.
  CHECK(out[0].report.recall_at_1 == 1.0);
  CHECK(out[0].report == evaluate(embed_all(net, dbc, dbp), embed_all(net, qc, qp)));
  const auto again = rotation_sweep(net, dbc, dbp, qc, qp, levels, true, 1);
  CHECK(again[0].report == out[0].report);
  CHECK(rotation_sweep(net, dbc, dbp, qc, qp, levels, true, 1)[2].report == again[2].report);
}
