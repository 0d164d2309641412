#pragma once

#include <random>

#include "rpr/geometry.hpp"

namespace rpr::test {

inline PointCloud<double> gaussian_cloud(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  PointCloud<double> c(n, 3);
  for (Index i = 0; i < c.size(); ++i) c.data()[i] = g(rng);
  return c;
}

inline PointCloud<double> uniform_cloud(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PointCloud<double> c(n, 3);
  for (Index i = 0; i < c.size(); ++i) c.data()[i] = u(rng);
  return c;
}

inline PointCloud<double> cloud_of(std::initializer_list<std::array<double, 3>> pts) {
  PointCloud<double> c(static_cast<Index>(pts.size()), 3);
  Index i = 0;
  for (const auto& p : pts) c.row(i++) << p[0], p[1], p[2];
  return c;
}

}  // namespace rpr::test
