#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "rpr/errors.hpp"
#include "rpr/geometry.hpp"
#include "rpr/network.hpp"
#include "rpr/rng.hpp"

namespace rpr {

/// Descriptors (stored at 32-bit, as persisted) with their map positions.
/// Row i has id i.
struct PlaceDatabase {
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> descriptors;
  Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor> positions;

  Index size() const { return descriptors.rows(); }
  Index dim() const { return descriptors.cols(); }

  template <typename Derived>
  void add(const Eigen::MatrixBase<Derived>& descriptor, const Eigen::Vector2d& position) {
    const Index m = size();
    if (m > 0 && descriptor.size() != dim()) throw InvalidArgument("database: descriptor length does not match");
    descriptors.conservativeResize(m + 1, descriptor.size());
    positions.conservativeResize(m + 1, 2);
    descriptors.row(m) = descriptor.transpose().template cast<float>();
    positions.row(m) = position.transpose();
  }
};

/// Ids of the k nearest rows by Euclidean distance, ascending; ties by id.
inline std::vector<Index> query(const PlaceDatabase& db, const Eigen::VectorXf& q, Index k) {
  const Index m = db.size();
  if (m == 0) throw EmptyDatabase("query on an empty database");
  if (q.size() != db.dim()) throw InvalidArgument("query descriptor length does not match the database");
  if (k < 1 || k > m) throw InvalidArgument("query: k must lie in [1, m]");
  std::vector<std::pair<double, Index>> d(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) {
    d[static_cast<std::size_t>(i)] = {(db.descriptors.row(i).transpose() - q).cast<double>().squaredNorm(), i};
  }
  std::partial_sort(d.begin(), d.begin() + k, d.end());
  std::vector<Index> out(static_cast<std::size_t>(k));
  for (Index i = 0; i < k; ++i) out[static_cast<std::size_t>(i)] = d[static_cast<std::size_t>(i)].second;
  return out;
}

struct EvalReport {
  double recall_at_1 = 0.0;
  double recall_at_top1pct = 0.0;
  Index num_queries = 0;   // queries with at least one true match (the denominator)
  Index num_excluded = 0;  // queries without any true match within the radius
  Index window = 0;        // ceil(m / 100)

  bool operator==(const EvalReport&) const = default;
};

inline constexpr double kMatchRadius = 25.0;

/// Retrieval recall of `queries` against `db`. A retrieval is correct when
/// its position lies within `radius` of the query's true position.
inline EvalReport evaluate(const PlaceDatabase& db, const PlaceDatabase& queries, double radius = kMatchRadius) {
  if (db.size() == 0) throw EmptyDatabase("evaluate on an empty database");
  EvalReport r;
  r.window = (db.size() + 99) / 100;
  Index hit1 = 0, hit_pct = 0;
  for (Index qi = 0; qi < queries.size(); ++qi) {
    const Eigen::Vector2d qp = queries.positions.row(qi).transpose();
    auto is_match = [&](Index id) { return (db.positions.row(id).transpose() - qp).norm() <= radius; };
    bool any = false;
    for (Index i = 0; i < db.size() && !any; ++i) any = is_match(i);
    if (!any) {
      ++r.num_excluded;
      continue;
    }
    ++r.num_queries;
    const auto ranked = query(db, queries.descriptors.row(qi).transpose(), r.window);
    if (is_match(ranked.front())) ++hit1;
    if (std::any_of(ranked.begin(), ranked.end(), is_match)) ++hit_pct;
  }
  if (r.num_queries > 0) {
    r.recall_at_1 = static_cast<double>(hit1) / static_cast<double>(r.num_queries);
    r.recall_at_top1pct = static_cast<double>(hit_pct) / static_cast<double>(r.num_queries);
  }
  return r;
}

/// One rotation level of a sweep.
struct RotationLevel {
  RotationMode mode;
  std::string label;

  bool is_identity() const { return mode.axis == RotationAxis::kZ && mode.max_angle == 0.0; }
};

struct LevelReport {
  RotationLevel level;
  EvalReport report;
};

template <typename T>
PlaceDatabase embed_all(const RprNet<T>& net, const std::vector<PointCloud<T>>& clouds,
                        const std::vector<Eigen::Vector2d>& positions) {
  PlaceDatabase db;
  for (std::size_t i = 0; i < clouds.size(); ++i) db.add(net.embed(clouds[i]), positions[i]);
  return db;
}

/// Re-embeds queries (and the database when `rotate_database`) under fresh
/// random rotations at each level, then evaluates.
template <typename T>
std::vector<LevelReport> rotation_sweep(const RprNet<T>& net, const std::vector<PointCloud<T>>& db_clouds,
                                        const std::vector<Eigen::Vector2d>& db_positions,
                                        const std::vector<PointCloud<T>>& query_clouds,
                                        const std::vector<Eigen::Vector2d>& query_positions,
                                        const std::vector<RotationLevel>& levels, bool rotate_database,
                                        std::uint64_t seed, double radius = kMatchRadius) {
  auto rotated = [&](const std::vector<PointCloud<T>>& clouds, std::size_t level, std::uint64_t which) {
    std::vector<PointCloud<T>> out;
    for (std::size_t i = 0; i < clouds.size(); ++i) {
      const auto r = random_rotation(derive_seed(seed, {level, which, i}), levels[level].mode);
      out.push_back(apply_rotation(clouds[i], r));
    }
    return out;
  };
  const PlaceDatabase plain_db = embed_all(net, db_clouds, db_positions);
  PlaceDatabase plain_queries;
  bool have_plain_queries = false;
  std::vector<LevelReport> out;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    LevelReport lr;
    lr.level = levels[l];
    if (levels[l].is_identity()) {
      if (!have_plain_queries) {
        plain_queries = embed_all(net, query_clouds, query_positions);
        have_plain_queries = true;
      }
      lr.report = evaluate(plain_db, plain_queries, radius);
    } else {
      const PlaceDatabase qdb = embed_all(net, rotated(query_clouds, l, 0), query_positions);
      if (rotate_database) {
        lr.report = evaluate(embed_all(net, rotated(db_clouds, l, 1), db_positions), qdb, radius);
      } else {
        lr.report = evaluate(plain_db, qdb, radius);
      }
    }
    out.push_back(lr);
  }
  return out;
}

}  // namespace rpr
