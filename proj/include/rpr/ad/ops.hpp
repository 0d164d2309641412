#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "rpr/ad/graph.hpp"

namespace rpr::ad {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRowMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapRowMat = Eigen::Map<const RowMat<T>>;

using IndexTable = Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

inline void require(bool ok, const std::string& op, const Shape& a, const Shape& b) {
  if (!ok) throw ShapeError(op + ": incompatible shapes " + a.str() + " and " + b.str());
}

inline void require_rank(const std::string& op, const Shape& a, int rank) {
  if (a.rank() != rank) {
    throw ShapeError(op + ": expected rank " + std::to_string(rank) + ", got " + a.str());
  }
}

/// Right-aligned numpy broadcasting of two shapes, padded to rank 4.
struct BroadcastPlan {
  Shape shape;
  std::array<Index, kMaxRank> dims{1, 1, 1, 1};
  std::array<Index, kMaxRank> stride_a{};
  std::array<Index, kMaxRank> stride_b{};
};

inline std::array<Index, kMaxRank> padded(const Shape& s) {
  std::array<Index, kMaxRank> d{1, 1, 1, 1};
  for (int i = 0; i < s.rank(); ++i) d[static_cast<std::size_t>(kMaxRank - s.rank() + i)] = s[i];
  return d;
}

inline std::array<Index, kMaxRank> contiguous_strides(const std::array<Index, kMaxRank>& d) {
  std::array<Index, kMaxRank> st{};
  Index acc = 1;
  for (int i = kMaxRank - 1; i >= 0; --i) {
    st[static_cast<std::size_t>(i)] = acc;
    acc *= d[static_cast<std::size_t>(i)];
  }
  return st;
}

inline BroadcastPlan broadcast_plan(const std::string& op, const Shape& a, const Shape& b) {
  BroadcastPlan p;
  const auto da = padded(a), db = padded(b);
  const auto sa = contiguous_strides(da), sb = contiguous_strides(db);
  std::array<Index, kMaxRank> out{};
  for (std::size_t i = 0; i < kMaxRank; ++i) {
    require(da[i] == db[i] || da[i] == 1 || db[i] == 1, op, a, b);
    out[i] = std::max(da[i], db[i]);
    p.stride_a[i] = da[i] == 1 ? 0 : sa[i];
    p.stride_b[i] = db[i] == 1 ? 0 : sb[i];
  }
  p.dims = out;
  const int rank = std::max(a.rank(), b.rank());
  p.shape = Shape(std::span<const Index>(out.data() + (kMaxRank - rank), static_cast<std::size_t>(rank)));
  return p;
}

template <typename Fn>
void for_each_broadcast(const BroadcastPlan& p, Fn&& fn) {
  Index o = 0;
  for (Index i0 = 0; i0 < p.dims[0]; ++i0)
    for (Index i1 = 0; i1 < p.dims[1]; ++i1)
      for (Index i2 = 0; i2 < p.dims[2]; ++i2) {
        Index a = i0 * p.stride_a[0] + i1 * p.stride_a[1] + i2 * p.stride_a[2];
        Index b = i0 * p.stride_b[0] + i1 * p.stride_b[1] + i2 * p.stride_b[2];
        for (Index i3 = 0; i3 < p.dims[3]; ++i3, ++o, a += p.stride_a[3], b += p.stride_b[3]) fn(o, a, b);
      }
}

template <typename T>
bool any_requires_grad(std::initializer_list<Var<T>> vars) {
  for (const auto& v : vars)
    if (v.requires_grad()) return true;
  return false;
}

template <typename T>
Graph<T>& same_graph(const Var<T>& a, const Var<T>& b) {
  if (&a.graph() != &b.graph()) throw InvalidArgument("operands belong to different graphs");
  return a.graph();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with broadcasting.

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Graph<T>& g = detail::same_graph(a, b);
  const bool rg = detail::any_requires_grad({a, b});
  if (a.shape() == b.shape()) {
    return g.make(a.shape(), a.value() + b.value(), rg, [a, b](Graph<T>& g, std::size_t self) {
      const Array<T>& go = g.grad(self);
      if (a.requires_grad()) g.grad(a.id()) += go;
      if (b.requires_grad()) g.grad(b.id()) += go;
    });
  }
  const auto plan = detail::broadcast_plan("add", a.shape(), b.shape());
  Array<T> out(plan.shape.size());
  const auto va = a.value(), vb = b.value();
  detail::for_each_broadcast(plan, [&](Index o, Index i, Index j) { out(o) = va(i) + vb(j); });
  return g.make(plan.shape, std::move(out), rg, [a, b, plan](Graph<T>& g, std::size_t self) {
    const Array<T>& go = g.grad(self);
    if (a.requires_grad()) {
      Array<T>& ga = g.grad(a.id());
      detail::for_each_broadcast(plan, [&](Index o, Index i, Index) { ga(i) += go(o); });
    }
    if (b.requires_grad()) {
      Array<T>& gb = g.grad(b.id());
      detail::for_each_broadcast(plan, [&](Index o, Index, Index j) { gb(j) += go(o); });
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
  return a.graph().make(a.shape(), a.value() * c, a.requires_grad(), [a, c](Graph<T>& g, std::size_t self) {
    g.grad(a.id()) += c * g.grad(self);
  });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T c) {
  return a.graph().make(a.shape(), a.value() + c, a.requires_grad(), [a](Graph<T>& g, std::size_t self) {
    g.grad(a.id()) += g.grad(self);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return add(a, scale(b, T(-1)));
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Graph<T>& g = detail::same_graph(a, b);
  const bool rg = detail::any_requires_grad({a, b});
  if (a.shape() == b.shape()) {
    return g.make(a.shape(), a.value() * b.value(), rg, [a, b](Graph<T>& g, std::size_t self) {
      const Array<T>& go = g.grad(self);
      if (a.requires_grad()) g.grad(a.id()) += go * b.value();
      if (b.requires_grad()) g.grad(b.id()) += go * a.value();
    });
  }
  const auto plan = detail::broadcast_plan("mul", a.shape(), b.shape());
  Array<T> out(plan.shape.size());
  const auto va = a.value(), vb = b.value();
  detail::for_each_broadcast(plan, [&](Index o, Index i, Index j) { out(o) = va(i) * vb(j); });
  return g.make(plan.shape, std::move(out), rg, [a, b, plan](Graph<T>& g, std::size_t self) {
    const Array<T>& go = g.grad(self);
    const auto va = a.value(), vb = b.value();
    if (a.requires_grad()) {
      Array<T>& ga = g.grad(a.id());
      detail::for_each_broadcast(plan, [&](Index o, Index i, Index j) { ga(i) += go(o) * vb(j); });
    }
    if (b.requires_grad()) {
      Array<T>& gb = g.grad(b.id());
      detail::for_each_broadcast(plan, [&](Index o, Index i, Index j) { gb(j) += go(o) * va(i); });
    }
  });
}

template <typename T> Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <typename T> Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <typename T> Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// Elementwise unary ops.

/// Subgradient at 0 is 0.
template <typename T>
Var<T> relu(Var<T> a) {
  return a.graph().make(a.shape(), a.value().max(T(0)), a.requires_grad(), [a](Graph<T>& g, std::size_t self) {
    g.grad(a.id()) += (a.value() > T(0)).select(g.grad(self), T(0));
  });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  Array<T> y = (T(1) + (-a.value()).exp()).inverse();
  return a.graph().make(a.shape(), std::move(y), a.requires_grad(), [a](Graph<T>& g, std::size_t self) {
    const auto y = g.value(self);
    g.grad(a.id()) += g.grad(self) * y * (T(1) - y);
  });
}

template <typename T>
Var<T> sqrt(Var<T> a) {
  if ((a.value() < T(0)).any()) throw NumericalError("sqrt of a negative value");
  return a.graph().make(a.shape(), a.value().sqrt(), a.requires_grad(), [a](Graph<T>& g, std::size_t self) {
    g.grad(a.id()) += g.grad(self) * T(0.5) / g.value(self);
  });
}

/// max(a, lo); gradient passes only where a > lo.
template <typename T>
Var<T> clamp_min(Var<T> a, T lo) {
  return a.graph().make(a.shape(), a.value().max(lo), a.requires_grad(), [a, lo](Graph<T>& g, std::size_t self) {
    g.grad(a.id()) += (a.value() > lo).select(g.grad(self), T(0));
  });
}

template <typename T>
Var<T> reciprocal(Var<T> a) {
  return a.graph().make(a.shape(), a.value().inverse(), a.requires_grad(), [a](Graph<T>& g, std::size_t self) {
    const auto y = g.value(self);
    g.grad(a.id()) -= g.grad(self) * y * y;
  });
}

/// Elementwise x^p with a learnable scalar exponent p (shape [1]). Requires
/// x >= 0; d/dp uses x^p ln x, taken as 0 at x = 0.
template <typename T>
Var<T> pow(Var<T> x, Var<T> p) {
  Graph<T>& g = detail::same_graph(x, p);
  if (p.size() != 1) throw ShapeError("pow: exponent must have one element, got " + p.shape().str());
  if ((x.value() < T(0)).any()) throw NumericalError("pow: negative base");
  const T e = p.item();
  Array<T> y = x.value().pow(e);
  return g.make(x.shape(), std::move(y), detail::any_requires_grad({x, p}), [x, p](Graph<T>& g, std::size_t self) {
    const Array<T>& go = g.grad(self);
    const auto xv = x.value();
    const auto yv = g.value(self);
    const T e = p.item();
    if (x.requires_grad()) g.grad(x.id()) += go * e * xv.pow(e - T(1));
    if (p.requires_grad()) {
      T acc = T(0);
      for (Index i = 0; i < xv.size(); ++i)
        if (xv(i) > T(0)) acc += go(i) * yv(i) * std::log(xv(i));
      g.grad(p.id())(0) += acc;
    }
  });
}

// ---------------------------------------------------------------------------
// Shape ops.

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  if (shape.size() != a.size()) throw ShapeError("reshape: cannot view " + a.shape().str() + " as " + shape.str());
  return a.graph().make(shape, Array<T>(a.value()), a.requires_grad(), [a](Graph<T>& g, std::size_t self) {
    g.grad(a.id()) += g.grad(self);
  });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  detail::require_rank("transpose", a.shape(), 2);
  const Index r = a.shape()[0], c = a.shape()[1];
  Array<T> out(a.size());
  MapRowMat<T>(out.data(), c, r) = ConstMapRowMat<T>(a.value().data(), r, c).transpose();
  return a.graph().make(Shape{c, r}, std::move(out), a.requires_grad(), [a, r, c](Graph<T>& g, std::size_t self) {
    MapRowMat<T>(g.grad(a.id()).data(), r, c) += ConstMapRowMat<T>(g.grad(self).data(), c, r).transpose();
  });
}

/// Concatenation along `axis`; all other dimensions must agree.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts.front().shape();
  if (axis < 0 || axis >= s0.rank()) throw ShapeError("concat: axis out of range for " + s0.str());
  Index outer = 1, inner_rest = 1, total_axis = 0;
  for (int i = 0; i < axis; ++i) outer *= s0[i];
  for (int i = axis + 1; i < s0.rank(); ++i) inner_rest *= s0[i];
  bool rg = false;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.rank() == s0.rank();
    for (int i = 0; ok && i < s0.rank(); ++i) ok = i == axis || s[i] == s0[i];
    detail::require(ok, "concat", s0, s);
    if (&p.graph() != &parts.front().graph()) throw InvalidArgument("concat: operands belong to different graphs");
    total_axis += s[axis];
    rg = rg || p.requires_grad();
  }
  std::vector<Index> dims(s0.dims().begin(), s0.dims().end());
  dims[static_cast<std::size_t>(axis)] = total_axis;
  const Shape out_shape{std::span<const Index>(dims)};
  const Index out_row = total_axis * inner_rest;
  Array<T> out(out_shape.size());
  Index col = 0;
  for (const auto& p : parts) {
    const Index w = p.shape()[axis] * inner_rest;
    ConstMapRowMat<T> src(p.value().data(), outer, w);
    MapRowMat<T>(out.data(), outer, out_row).middleCols(col, w) = src;
    col += w;
  }
  return parts.front().graph().make(out_shape, std::move(out), rg, [parts, axis, outer, inner_rest, out_row](Graph<T>& g, std::size_t self) {
    Index col = 0;
    const Array<T>& go = g.grad(self);
    for (const auto& p : parts) {
      const Index w = p.shape()[axis] * inner_rest;
      if (p.requires_grad()) {
        MapRowMat<T>(g.grad(p.id()).data(), outer, w) += ConstMapRowMat<T>(go.data(), outer, out_row).middleCols(col, w);
      }
      col += w;
    }
  });
}

/// Rows of `src` [N, C] picked by an index table [R, K] -> [R, K, C].
/// The adjoint scatter-adds into the source rows.
template <typename T>
Var<T> gather(Var<T> src, const IndexTable& table) {
  detail::require_rank("gather", src.shape(), 2);
  const Index n = src.shape()[0], c = src.shape()[1];
  if (table.size() == 0) throw ShapeError("gather: empty index table");
  if ((table.array() < 0).any() || (table.array() >= n).any()) {
    throw ShapeError("gather: index outside source rows " + src.shape().str());
  }
  const Index rows = table.rows(), k = table.cols();
  Array<T> out(rows * k * c);
  ConstMapRowMat<T> s(src.value().data(), n, c);
  MapRowMat<T> o(out.data(), rows * k, c);
  for (Index r = 0; r < rows * k; ++r) o.row(r) = s.row(table.data()[r]);
  return src.graph().make(Shape{rows, k, c}, std::move(out), src.requires_grad(), [src, table, n, c](Graph<T>& g, std::size_t self) {
    MapRowMat<T> gs(g.grad(src.id()).data(), n, c);
    ConstMapRowMat<T> go(g.grad(self).data(), table.size(), c);
    for (Index r = 0; r < table.size(); ++r) gs.row(table.data()[r]) += go.row(r);
  });
}

// ---------------------------------------------------------------------------
// Reductions.

/// Sums over the listed axes (dropped from the result; full reduction gives [1]).
template <typename T>
Var<T> sum(Var<T> a, std::vector<int> axes) {
  const Shape& s = a.shape();
  std::vector<Index> keep(s.dims().begin(), s.dims().end());
  for (int ax : axes) {
    if (ax < 0 || ax >= s.rank()) throw ShapeError("sum: axis " + std::to_string(ax) + " out of range for " + s.str());
    keep[static_cast<std::size_t>(ax)] = 1;
  }
  std::vector<Index> dropped;
  for (int i = 0; i < s.rank(); ++i)
    if (std::find(axes.begin(), axes.end(), i) == axes.end()) dropped.push_back(s[i]);
  if (dropped.empty()) dropped.push_back(1);
  const Shape keep_shape{std::span<const Index>(keep)};
  const Shape out_shape{std::span<const Index>(dropped)};
  const auto plan = detail::broadcast_plan("sum", s, keep_shape);
  Array<T> out = Array<T>::Zero(out_shape.size());
  const auto va = a.value();
  detail::for_each_broadcast(plan, [&](Index, Index i, Index j) { out(j) += va(i); });
  return a.graph().make(out_shape, std::move(out), a.requires_grad(), [a, plan](Graph<T>& g, std::size_t self) {
    Array<T>& ga = g.grad(a.id());
    const Array<T>& go = g.grad(self);
    detail::for_each_broadcast(plan, [&](Index, Index i, Index j) { ga(i) += go(j); });
  });
}

template <typename T>
Var<T> mean(Var<T> a, std::vector<int> axes) {
  Index count = 1;
  for (int ax : axes) {
    if (ax < 0 || ax >= a.shape().rank()) throw ShapeError("mean: axis out of range for " + a.shape().str());
    count *= a.shape()[ax];
  }
  return scale(sum(a, axes), T(1) / T(count));
}

template <typename T>
Var<T> sum_all(Var<T> a) {
  return a.graph().make(Shape{1}, Array<T>::Constant(1, a.value().sum()), a.requires_grad(), [a](Graph<T>& g, std::size_t self) {
    g.grad(a.id()) += g.grad(self)(0);
  });
}

template <typename T>
Var<T> mean_all(Var<T> a) {
  return scale(sum_all(a), T(1) / T(a.size()));
}

// ---------------------------------------------------------------------------
// Contractions.

/// [m, k] x [k, n] -> [m, n].
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Graph<T>& g = detail::same_graph(a, b);
  detail::require_rank("matmul", a.shape(), 2);
  detail::require_rank("matmul", b.shape(), 2);
  const Index m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  detail::require(b.shape()[0] == k, "matmul", a.shape(), b.shape());
  Array<T> out(m * n);
  MapRowMat<T>(out.data(), m, n).noalias() = ConstMapRowMat<T>(a.value().data(), m, k) * ConstMapRowMat<T>(b.value().data(), k, n);
  return g.make(Shape{m, n}, std::move(out), detail::any_requires_grad({a, b}), [a, b, m, k, n](Graph<T>& g, std::size_t self) {
    ConstMapRowMat<T> go(g.grad(self).data(), m, n);
    if (a.requires_grad()) {
      MapRowMat<T>(g.grad(a.id()).data(), m, k).noalias() += go * ConstMapRowMat<T>(b.value().data(), k, n).transpose();
    }
    if (b.requires_grad()) {
      MapRowMat<T>(g.grad(b.id()).data(), k, n).noalias() += ConstMapRowMat<T>(a.value().data(), m, k).transpose() * go;
    }
  });
}

/// Batched product: for each batch b, op(A_b) * B_b where op transposes A_b
/// when `transpose_a` is set. a: [B, m, k] (or [B, k, m]), b: [B, k, n].
template <typename T>
Var<T> batched_matmul(Var<T> a, Var<T> b, bool transpose_a = false) {
  Graph<T>& g = detail::same_graph(a, b);
  detail::require_rank("batched_matmul", a.shape(), 3);
  detail::require_rank("batched_matmul", b.shape(), 3);
  const Index batch = a.shape()[0];
  const Index ar = a.shape()[1], ac = a.shape()[2];
  const Index m = transpose_a ? ac : ar, k = transpose_a ? ar : ac, n = b.shape()[2];
  detail::require(b.shape()[0] == batch && b.shape()[1] == k, "batched_matmul", a.shape(), b.shape());
  Array<T> out(batch * m * n);
  for (Index i = 0; i < batch; ++i) {
    ConstMapRowMat<T> A(a.value().data() + i * ar * ac, ar, ac);
    ConstMapRowMat<T> B(b.value().data() + i * k * n, k, n);
    MapRowMat<T> O(out.data() + i * m * n, m, n);
    if (transpose_a) O.noalias() = A.transpose() * B;
    else O.noalias() = A * B;
  }
  return g.make(Shape{batch, m, n}, std::move(out), detail::any_requires_grad({a, b}),
                [a, b, batch, ar, ac, m, k, n, transpose_a](Graph<T>& g, std::size_t self) {
    const Array<T>& go = g.grad(self);
    for (Index i = 0; i < batch; ++i) {
      ConstMapRowMat<T> G(go.data() + i * m * n, m, n);
      ConstMapRowMat<T> A(a.value().data() + i * ar * ac, ar, ac);
      ConstMapRowMat<T> B(b.value().data() + i * k * n, k, n);
      if (a.requires_grad()) {
        MapRowMat<T> GA(g.grad(a.id()).data() + i * ar * ac, ar, ac);
        if (transpose_a) GA.noalias() += B * G.transpose();
        else GA.noalias() += G * B.transpose();
      }
      if (b.requires_grad()) {
        MapRowMat<T> GB(g.grad(b.id()).data() + i * k * n, k, n);
        if (transpose_a) GB.noalias() += A * G;
        else GB.noalias() += A.transpose() * G;
      }
    }
  });
}

namespace detail {

/// Parsed two-operand contraction "ab,bc->ac" over named axes.
struct Contraction {
  std::string letters;
  std::vector<Index> sizes;
  std::vector<Index> stride_a, stride_b, stride_out;
  Shape out_shape;
  Index total = 1;
};

inline std::vector<Index> letter_strides(std::string_view term, const std::string& letters, const std::vector<Index>& sizes) {
  std::vector<Index> st(letters.size(), 0);
  Index acc = 1;
  for (std::size_t i = term.size(); i-- > 0;) {
    const auto pos = letters.find(term[i]);
    st[pos] += acc;
    acc *= sizes[pos];
  }
  return st;
}

inline Contraction parse_contraction(std::string_view pattern, const Shape& a, const Shape& b) {
  const auto comma = pattern.find(',');
  const auto arrow = pattern.find("->");
  if (comma == std::string_view::npos || arrow == std::string_view::npos || arrow < comma) {
    throw ShapeError("contract: malformed pattern '" + std::string(pattern) + "'");
  }
  const std::string_view ta = pattern.substr(0, comma), tb = pattern.substr(comma + 1, arrow - comma - 1),
                         to = pattern.substr(arrow + 2);
  if (static_cast<int>(ta.size()) != a.rank() || static_cast<int>(tb.size()) != b.rank()) {
    throw ShapeError("contract: pattern '" + std::string(pattern) + "' does not match ranks of " + a.str() + " and " + b.str());
  }
  Contraction c;
  auto bind = [&](std::string_view term, const Shape& s) {
    for (std::size_t i = 0; i < term.size(); ++i) {
      const auto pos = c.letters.find(term[i]);
      if (pos == std::string::npos) {
        c.letters.push_back(term[i]);
        c.sizes.push_back(s[static_cast<int>(i)]);
      } else if (c.sizes[pos] != s[static_cast<int>(i)]) {
        throw ShapeError("contract: axis '" + std::string(1, term[i]) + "' has conflicting sizes in " + a.str() + " and " + b.str());
      }
    }
  };
  bind(ta, a);
  bind(tb, b);
  std::vector<Index> out_dims;
  for (char ch : to) {
    const auto pos = c.letters.find(ch);
    if (pos == std::string::npos) throw ShapeError("contract: output axis '" + std::string(1, ch) + "' not in inputs");
    out_dims.push_back(c.sizes[pos]);
  }
  if (out_dims.empty()) out_dims.push_back(1);
  c.out_shape = Shape(std::span<const Index>(out_dims));
  c.stride_a = letter_strides(ta, c.letters, c.sizes);
  c.stride_b = letter_strides(tb, c.letters, c.sizes);
  c.stride_out = letter_strides(to, c.letters, c.sizes);
  for (Index s : c.sizes) c.total *= s;
  return c;
}

/// Visits every point of the joint index space, last letter fastest.
template <typename Fn>
void for_each_contraction(const Contraction& c, Fn&& fn) {
  const std::size_t L = c.letters.size();
  std::vector<Index> idx(L, 0);
  Index ia = 0, ib = 0, io = 0;
  for (Index t = 0; t < c.total; ++t) {
    fn(ia, ib, io);
    for (std::size_t d = L; d-- > 0;) {
      ++idx[d];
      ia += c.stride_a[d];
      ib += c.stride_b[d];
      io += c.stride_out[d];
      if (idx[d] < c.sizes[d]) break;
      ia -= c.stride_a[d] * c.sizes[d];
      ib -= c.stride_b[d] * c.sizes[d];
      io -= c.stride_out[d] * c.sizes[d];
      idx[d] = 0;
    }
  }
}

}  // namespace detail

/// Two-operand contraction over named axes, e.g. "nkio,nki->no". Letters
/// absent from the output are summed.
template <typename T>
Var<T> contract(std::string_view pattern, Var<T> a, Var<T> b) {
  Graph<T>& g = detail::same_graph(a, b);
  const auto c = detail::parse_contraction(pattern, a.shape(), b.shape());
  Array<T> out = Array<T>::Zero(c.out_shape.size());
  const auto va = a.value(), vb = b.value();
  detail::for_each_contraction(c, [&](Index i, Index j, Index o) { out(o) += va(i) * vb(j); });
  return g.make(c.out_shape, std::move(out), detail::any_requires_grad({a, b}), [a, b, c](Graph<T>& g, std::size_t self) {
    const Array<T>& go = g.grad(self);
    const auto va = a.value(), vb = b.value();
    if (a.requires_grad()) {
      Array<T>& ga = g.grad(a.id());
      detail::for_each_contraction(c, [&](Index i, Index j, Index o) { ga(i) += go(o) * vb(j); });
    }
    if (b.requires_grad()) {
      Array<T>& gb = g.grad(b.id());
      detail::for_each_contraction(c, [&](Index i, Index j, Index o) { gb(j) += go(o) * va(i); });
    }
  });
}

}  // namespace rpr::ad
