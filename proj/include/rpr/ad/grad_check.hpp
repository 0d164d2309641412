#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "rpr/ad/graph.hpp"

namespace rpr::ad {

struct GradCheckOptions {
  double eps = 1e-5;
  /// Parameters larger than this are probed on a random subset of this many
  /// coordinates; smaller ones on every coordinate.
  Index coords_per_param = 200;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  Index worst_coordinate = -1;
  Index coordinates_checked = 0;
};

template <typename T>
using LossFn = std::function<Var<T>(Graph<T>&)>;

/// Central finite differences against backprop for every trainable parameter
/// the loss touches. Relative error = |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
template <typename T>
GradCheckResult grad_check(ParameterSet<T>& params, const std::type_identity_t<LossFn<T>>& loss, const GradCheckOptions& opts = {}) {
  auto eval = [&]() -> double {
    Graph<T> g;
    const Var<T> l = loss(g);
    if (l.size() != 1) throw ShapeError("grad_check: loss must be scalar, got " + l.shape().str());
    const double v = static_cast<double>(l.item());
    if (!std::isfinite(v)) throw NumericalError("grad_check: non-finite loss");
    return v;
  };

  std::vector<Array<T>> analytic(params.size());
  {
    Graph<T> g;
    const Var<T> l = loss(g);
    if (!std::isfinite(static_cast<double>(l.item()))) throw NumericalError("grad_check: non-finite loss");
    g.backward(l);
    for (std::size_t i = 0; i < params.size(); ++i) {
      analytic[i] = g.parameter_grad(params[i]);
      if (!analytic[i].allFinite()) throw NumericalError("grad_check: non-finite gradient for " + params[i].name);
    }
  }

  std::mt19937_64 rng(opts.seed);
  GradCheckResult res;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = params[i];
    if (!p.trainable) continue;
    std::vector<Index> coords(static_cast<std::size_t>(p.shape.size()));
    std::iota(coords.begin(), coords.end(), Index{0});
    if (static_cast<Index>(coords.size()) > opts.coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(opts.coords_per_param));
    }
    for (Index c : coords) {
      const T orig = p.value(c);
      p.value(c) = orig + T(opts.eps);
      const double up = eval();
      p.value(c) = orig - T(opts.eps);
      const double down = eval();
      p.value(c) = orig;
      const double fd = (up - down) / (2.0 * opts.eps);
      const double ad = static_cast<double>(analytic[i](c));
      const double err = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
      ++res.coordinates_checked;
      if (res.worst_coordinate < 0 || err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_parameter = p.name;
        res.worst_coordinate = c;
      }
    }
  }
  return res;
}

}  // namespace rpr::ad
