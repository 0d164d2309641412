#pragma once

#include <Eigen/Core>

#include <array>
#include <initializer_list>
#include <span>
#include <string>

#include "rpr/errors.hpp"

namespace rpr::ad {

using Index = Eigen::Index;

inline constexpr int kMaxRank = 4;

/// Dimension list of a rank 1..4 dense tensor (row-major storage).
class Shape {
 public:
  Shape() = default;

  Shape(std::initializer_list<Index> dims) {
    if (dims.size() < 1 || dims.size() > kMaxRank) {
      throw ShapeError("tensor rank must be 1..4, got " + std::to_string(dims.size()));
    }
    for (Index d : dims) dims_[rank_++] = d;
    validate();
  }

  explicit Shape(std::span<const Index> dims) {
    if (dims.size() < 1 || dims.size() > kMaxRank) {
      throw ShapeError("tensor rank must be 1..4, got " + std::to_string(dims.size()));
    }
    for (Index d : dims) dims_[rank_++] = d;
    validate();
  }

  int rank() const { return rank_; }
  Index operator[](int axis) const { return dims_[static_cast<std::size_t>(axis)]; }
  std::span<const Index> dims() const { return {dims_.data(), static_cast<std::size_t>(rank_)}; }

  Index size() const {
    Index s = 1;
    for (int i = 0; i < rank_; ++i) s *= dims_[static_cast<std::size_t>(i)];
    return s;
  }

  bool operator==(const Shape& o) const {
    if (rank_ != o.rank_) return false;
    for (int i = 0; i < rank_; ++i)
      if (dims_[static_cast<std::size_t>(i)] != o.dims_[static_cast<std::size_t>(i)]) return false;
    return true;
  }

  std::string str() const {
    std::string s = "[";
    for (int i = 0; i < rank_; ++i) {
      if (i) s += ", ";
      s += std::to_string(dims_[static_cast<std::size_t>(i)]);
    }
    return s + "]";
  }

 private:
  void validate() const {
    for (int i = 0; i < rank_; ++i)
      if (dims_[static_cast<std::size_t>(i)] < 1) throw ShapeError("non-positive dimension in " + str());
  }

  std::array<Index, kMaxRank> dims_{};
  int rank_ = 0;
};

}  // namespace rpr::ad
