#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "rpr/errors.hpp"

namespace rpr {

using Index = Eigen::Index;

/// N x 3 row-major point coordinates.
template <typename T>
using PointCloud = Eigen::Matrix<T, Eigen::Dynamic, 3, Eigen::RowMajor>;

template <typename T>
using Rotation3 = Eigen::Matrix<T, 3, 3>;

template <typename T>
using Vec3 = Eigen::Matrix<T, 3, 1>;

using IndexTable = Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Norm below which a vector is treated as zero by angle computations.
inline constexpr double kEpsVec = 1e-9;

/// Seed selection plus seed-to-seed neighbor table shared by every layer.
///
/// `neighbor_ids(n, k)` indexes the seed set, not the source cloud; slot 0 is
/// always the seed itself.
struct GroupIndex {
  std::vector<Index> seed_ids;
  IndexTable neighbor_ids;
  Index k = 0;

  Index num_seeds() const { return neighbor_ids.rows(); }
};

template <typename T>
void check_finite(const PointCloud<T>& cloud) {
  if (cloud.rows() < 1) throw InvalidCloud("point cloud is empty");
  if (!cloud.allFinite()) throw InvalidCloud("point cloud has non-finite coordinates");
}

/// Mean-centers the cloud and scales it by a single factor so the largest
/// absolute coordinate is 1. A cloud of one repeated point maps to zeros.
template <typename T>
PointCloud<T> normalize_cloud(const PointCloud<T>& cloud) {
  check_finite(cloud);
  const Eigen::Matrix<T, 1, 3> mean = cloud.colwise().mean();
  PointCloud<T> out = cloud.rowwise() - mean;
  const T extent = out.cwiseAbs().maxCoeff();
  if (extent > T(0)) {
    out /= extent;
  } else {
    out.setZero();
  }
  return out;
}

/// Greedy max-min selection starting at `start`. Returned ids are in visit
/// order; ties go to the smallest index.
template <typename T>
std::vector<Index> farthest_point_sample(const PointCloud<T>& cloud, Index n_s, Index start = 0) {
  const Index n = cloud.rows();
  if (n_s < 1 || n_s > n) {
    throw InvalidArgument("farthest_point_sample: n_s=" + std::to_string(n_s) +
                          " outside [1, " + std::to_string(n) + "]");
  }
  if (start < 0 || start >= n) {
    throw InvalidArgument("farthest_point_sample: start index out of range");
  }
  std::vector<Index> ids;
  ids.reserve(static_cast<std::size_t>(n_s));
  Eigen::Matrix<T, Eigen::Dynamic, 1> min_dist =
      Eigen::Matrix<T, Eigen::Dynamic, 1>::Constant(n, std::numeric_limits<T>::infinity());
  Index current = start;
  for (Index s = 0; s < n_s; ++s) {
    ids.push_back(current);
    min_dist(current) = T(-1);
    const auto p = cloud.row(current);
    Index best = -1;
    T best_dist = T(-1);
    for (Index j = 0; j < n; ++j) {
      if (min_dist(j) < T(0)) continue;
      const T d = (cloud.row(j) - p).squaredNorm();
      if (d < min_dist(j)) min_dist(j) = d;
      if (min_dist(j) > best_dist) {
        best_dist = min_dist(j);
        best = j;
      }
    }
    current = best;
  }
  return ids;
}

template <typename T>
PointCloud<T> select_rows(const PointCloud<T>& cloud, const std::vector<Index>& ids) {
  PointCloud<T> out(static_cast<Index>(ids.size()), 3);
  for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Index>(i)) = cloud.row(ids[i]);
  return out;
}

/// K nearest seeds of every seed (self at slot 0, then ascending distance,
/// ties by smallest index). Brute force O(N_s^2).
template <typename T>
IndexTable knn_table(const PointCloud<T>& seeds, Index k) {
  const Index n = seeds.rows();
  if (k < 1 || k > n) {
    throw InvalidArgument("knn_group: K=" + std::to_string(k) + " outside [1, " +
                          std::to_string(n) + "]");
  }
  IndexTable table(n, k);
  std::vector<std::pair<T, Index>> cand(static_cast<std::size_t>(n > 0 ? n - 1 : 0));
  for (Index i = 0; i < n; ++i) {
    table(i, 0) = i;
    if (k == 1) continue;
    std::size_t c = 0;
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      cand[c++] = {(seeds.row(j) - seeds.row(i)).squaredNorm(), j};
    }
    std::partial_sort(cand.begin(), cand.begin() + (k - 1), cand.end());
    for (Index s = 1; s < k; ++s) table(i, s) = cand[static_cast<std::size_t>(s - 1)].second;
  }
  return table;
}

template <typename T>
GroupIndex knn_group(const PointCloud<T>& seeds, Index k) {
  GroupIndex g;
  g.seed_ids.resize(static_cast<std::size_t>(seeds.rows()));
  std::iota(g.seed_ids.begin(), g.seed_ids.end(), Index{0});
  g.neighbor_ids = knn_table(seeds, k);
  g.k = k;
  return g;
}

/// FPS followed by seed-to-seed KNN.
template <typename T>
GroupIndex sample_and_group(const PointCloud<T>& cloud, Index n_s, Index k, Index start = 0) {
  GroupIndex g;
  g.seed_ids = farthest_point_sample(cloud, n_s, start);
  g.neighbor_ids = knn_table(select_rows(cloud, g.seed_ids), k);
  g.k = k;
  return g;
}

enum class RotationAxis { kZ, kSO3 };

struct RotationMode {
  RotationAxis axis = RotationAxis::kZ;
  double max_angle = 0.0;  // radians; z-axis mode only

  static RotationMode z(double max_angle) { return {RotationAxis::kZ, max_angle}; }
  static RotationMode so3() { return {RotationAxis::kSO3, 0.0}; }
};

/// z mode: angle ~ U[-max_angle, max_angle] about gravity. so3 mode: uniform
/// on SO(3) through a uniformly distributed unit quaternion.
inline Rotation3<double> random_rotation(std::uint64_t rng_seed, RotationMode mode) {
  std::mt19937_64 rng(rng_seed);
  if (mode.axis == RotationAxis::kZ) {
    if (!(mode.max_angle >= 0.0 && mode.max_angle <= 2.0 * M_PI)) {
      throw InvalidArgument("random_rotation: max angle must lie in [0, 2*pi]");
    }
    if (mode.max_angle == 0.0) return Rotation3<double>::Identity();
    std::uniform_real_distribution<double> u(-mode.max_angle, mode.max_angle);
    return Eigen::AngleAxisd(u(rng), Eigen::Vector3d::UnitZ()).toRotationMatrix();
  }
  // Shoemake's subgroup algorithm.
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double u1 = u(rng), u2 = u(rng), u3 = u(rng);
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  Eigen::Quaterniond q(b * std::cos(2.0 * M_PI * u3), a * std::sin(2.0 * M_PI * u2),
                       a * std::cos(2.0 * M_PI * u2), b * std::sin(2.0 * M_PI * u3));
  q.normalize();
  return q.toRotationMatrix();
}

template <typename T>
PointCloud<T> apply_rotation(const PointCloud<T>& cloud, const Rotation3<double>& r) {
  return cloud * r.transpose().cast<T>();
}

/// Angle in [0, pi]; 0 when either vector is (near) zero. Evaluated as
/// atan2(|u x v|, u . v), which stays accurate near 0 and pi.
template <typename T>
T angle_between(const Vec3<T>& u, const Vec3<T>& v) {
  const T nu = u.norm(), nv = v.norm();
  if (nu <= T(kEpsVec) || nv <= T(kEpsVec)) return T(0);
  return std::atan2(u.cross(v).norm(), u.dot(v));
}

/// Smallest distance margin behind any decision of sample_and_group: the
/// winner/runner-up gap of every FPS step and the gaps between consecutive
/// sorted neighbor distances up to rank K of every seed. When it exceeds the
/// roundoff of a transform, sampling and grouping are stable under it.
template <typename T>
T grouping_margin(const PointCloud<T>& cloud, Index n_s, Index k, Index start = 0) {
  using std::sqrt;
  const Index n = cloud.rows();
  T margin = std::numeric_limits<T>::infinity();
  const auto ids = farthest_point_sample(cloud, n_s, start);
  Eigen::Matrix<T, Eigen::Dynamic, 1> min_dist = Eigen::Matrix<T, Eigen::Dynamic, 1>::Constant(n, std::numeric_limits<T>::infinity());
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  for (Index s = 0; s + 1 < n_s; ++s) {
    const Index cur = ids[static_cast<std::size_t>(s)];
    taken[static_cast<std::size_t>(cur)] = 1;
    T best = T(-1), second = T(-1);
    for (Index j = 0; j < n; ++j) {
      if (taken[static_cast<std::size_t>(j)]) continue;
      min_dist(j) = std::min(min_dist(j), (cloud.row(j) - cloud.row(cur)).norm());
      if (min_dist(j) > best) {
        second = best;
        best = min_dist(j);
      } else if (min_dist(j) > second) {
        second = min_dist(j);
      }
    }
    if (second >= T(0)) margin = std::min(margin, best - second);
  }
  const PointCloud<T> seeds = select_rows(cloud, ids);
  std::vector<T> d;
  for (Index i = 0; i < n_s; ++i) {
    d.clear();
    for (Index j = 0; j < n_s; ++j)
      if (j != i) d.push_back((seeds.row(j) - seeds.row(i)).norm());
    const auto upto = std::min<std::size_t>(static_cast<std::size_t>(k), d.size());
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(upto), d.end());
    for (std::size_t r = 1; r < upto; ++r) margin = std::min(margin, d[r] - d[r - 1]);
  }
  return margin;
}

}  // namespace rpr
