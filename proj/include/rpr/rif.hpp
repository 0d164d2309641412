#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "rpr/geometry.hpp"

namespace rpr {

/// Channel layout of one RIF row.
enum RifChannel : int {
  kRifH = 0,
  kRifSphere,
  kRifD1,
  kRifD2,
  kRifA1,
  kRifA2,
  kRifA3,
  kRifD3,
  kRifD4,
  kRifA4,
  kRifA5,
  kRifChannels
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// N_s x K x 11 features, stored as (N_s * K) rows; row n * K + k is slot k of
/// group n.
template <typename T>
struct RifTensor {
  Index num_seeds = 0;
  Index k = 0;
  RowMatrix<T> values;

  T operator()(Index n, Index slot, Index c) const { return values(n * k + slot, c); }
};

namespace detail {

template <typename T>
void check_group(const PointCloud<T>& seeds, const GroupIndex& group) {
  if (group.neighbor_ids.cols() != group.k || group.k < 1) {
    throw InvalidArgument("group index: neighbor table width does not match K");
  }
  if ((group.neighbor_ids.array() < 0).any() || (group.neighbor_ids.array() >= seeds.rows()).any()) {
    throw InvalidArgument("group index: neighbor id outside the seed set");
  }
}

template <typename T>
Vec3<T> group_mean(const PointCloud<T>& seeds, const GroupIndex& group, Index n) {
  Vec3<T> m = Vec3<T>::Zero();
  for (Index s = 0; s < group.k; ++s) m += seeds.row(group.neighbor_ids(n, s)).transpose();
  return m / T(group.k);
}

}  // namespace detail

/// Radial distance h and a Gaussian angular density of peer radial distances:
///   f_ss(k) = sum_{j != k, |x_j| > eps} h_j exp(-angle(x_j, x_k)^2 / (2 sigma^2)).
template <typename T>
RowMatrix<T> spherical_signals(const PointCloud<T>& seeds, const GroupIndex& group, T sigma = T(0.2)) {
  detail::check_group(seeds, group);
  const Index ns = group.num_seeds(), k = group.k;
  RowMatrix<T> out(ns * k, 2);
  const T inv_two_var = T(1) / (T(2) * sigma * sigma);
  std::vector<Vec3<T>> pts(static_cast<std::size_t>(k));
  std::vector<T> h(static_cast<std::size_t>(k));
  for (Index n = 0; n < ns; ++n) {
    for (Index s = 0; s < k; ++s) {
      pts[s] = seeds.row(group.neighbor_ids(n, s)).transpose();
      h[s] = pts[s].norm();
    }
    for (Index s = 0; s < k; ++s) {
      T f = T(0);
      if (h[s] > T(kEpsVec)) {
        for (Index j = 0; j < k; ++j) {
          if (j == s || h[j] <= T(kEpsVec)) continue;
          const T theta = angle_between(pts[j], pts[s]);
          f += h[j] * std::exp(-theta * theta * inv_two_var);
        }
      }
      out(n * k + s, 0) = h[s];
      out(n * k + s, 1) = f;
    }
  }
  return out;
}

/// Per-neighbor triangle quantities against the seed x_i and group mean m:
/// [d1, d2, a1, a2, a3].
template <typename T>
RowMatrix<T> ilrif(const PointCloud<T>& seeds, const GroupIndex& group) {
  detail::check_group(seeds, group);
  const Index ns = group.num_seeds(), k = group.k;
  RowMatrix<T> out(ns * k, 5);
  for (Index n = 0; n < ns; ++n) {
    const Vec3<T> xi = seeds.row(n).transpose();
    const Vec3<T> m = detail::group_mean(seeds, group, n);
    for (Index s = 0; s < k; ++s) {
      const Vec3<T> xk = seeds.row(group.neighbor_ids(n, s)).transpose();
      auto row = out.row(n * k + s);
      row(0) = (xk - xi).norm();
      row(1) = (xk - m).norm();
      row(2) = angle_between<T>(xi - xk, m - xk);
      row(3) = angle_between<T>(xk - xi, m - xi);
      row(4) = angle_between<T>(xk - m, xi - m);
    }
  }
  return out;
}

/// Group-level features [d3, d4, a4, a5] from the closest non-self neighbor,
/// the farthest neighbor and the group mean, repeated over the K axis.
template <typename T>
RowMatrix<T> glrif(const PointCloud<T>& seeds, const GroupIndex& group) {
  detail::check_group(seeds, group);
  const Index ns = group.num_seeds(), k = group.k;
  if (k < 2) throw InvalidArgument("glrif: K must be at least 2");
  RowMatrix<T> out(ns * k, 4);
  for (Index n = 0; n < ns; ++n) {
    const Vec3<T> xi = seeds.row(n).transpose();
    const Vec3<T> m = detail::group_mean(seeds, group, n);
    Index closest = -1, farthest = -1;
    T dmin = T(0), dmax = T(0);
    // Ties resolve to the smallest point id so the result ignores slot order.
    for (Index s = 0; s < k; ++s) {
      const Index id = group.neighbor_ids(n, s);
      const T d = (seeds.row(id).transpose() - xi).norm();
      if (farthest < 0 || d > dmax || (d == dmax && id < farthest)) {
        farthest = id;
        dmax = d;
      }
      if (s == 0) continue;
      if (closest < 0 || d < dmin || (d == dmin && id < closest)) {
        closest = id;
        dmin = d;
      }
    }
    const Vec3<T> c = seeds.row(closest).transpose();
    const Vec3<T> f = seeds.row(farthest).transpose();
    const T a4 = angle_between<T>(c - xi, m - xi);
    const T a5 = angle_between<T>(f - xi, m - xi);
    for (Index s = 0; s < k; ++s) out.row(n * k + s) << dmin, dmax, a4, a5;
  }
  return out;
}

/// Concatenation [SS(2) | ILRIF(5) | GLRIF(4)]. `seeds` row n must be the
/// coordinates of seed n of `group`.
template <typename T>
RifTensor<T> assemble_rifs(const PointCloud<T>& seeds, const GroupIndex& group, T sigma = T(0.2)) {
  RifTensor<T> out;
  out.num_seeds = group.num_seeds();
  out.k = group.k;
  out.values.resize(out.num_seeds * out.k, kRifChannels);
  out.values.leftCols(2) = spherical_signals(seeds, group, sigma);
  out.values.middleCols(2, 5) = ilrif(seeds, group);
  out.values.rightCols(4) = glrif(seeds, group);
  return out;
}

}  // namespace rpr
