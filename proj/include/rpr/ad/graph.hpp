#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "rpr/ad/shape.hpp"
#include "rpr/errors.hpp"

namespace rpr::ad {

template <typename T>
using Array = Eigen::Array<T, Eigen::Dynamic, 1>;

/// Named trainable tensor owned by a model.
template <typename T>
struct Parameter {
  std::string name;
  Shape shape;
  Array<T> value;
  bool trainable = true;
};

/// Owns a model's parameters with stable addresses and unique names.
template <typename T>
class ParameterSet {
 public:
  Parameter<T>& add(const std::string& name, Shape shape, bool trainable = true) {
    if (index_.count(name)) throw InvalidArgument("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->shape = shape;
    p->value = Array<T>::Zero(shape.size());
    p->trainable = trainable;
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  Index count_trainable() const {
    Index n = 0;
    for (const auto& p : params_)
      if (p->trainable) n += p->shape.size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* g, std::size_t id) : graph_(g), id_(id) {}

  Graph<T>& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Shape& shape() const { return graph_->shape(id_); }
  Index size() const { return shape().size(); }
  Eigen::Map<const Array<T>> value() const { return graph_->value(id_); }
  bool requires_grad() const { return graph_->requires_grad(id_); }
  T item() const { return value()(0); }

 private:
  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Tape-based reverse-mode graph. Nodes are appended in evaluation order, so
/// the tape is topologically sorted by construction.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Shape shape, Array<T> value) { return leaf(shape, std::move(value), false); }

  /// Leaf that receives a gradient (not tied to a Parameter).
  Var<T> variable(Shape shape, Array<T> value) { return leaf(shape, std::move(value), true); }

  /// Reads the parameter's storage in place; it must not change while the
  /// graph is alive.
  Var<T> parameter(const Parameter<T>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return {this, it->second};
    Node n;
    n.shape = p.shape;
    n.external = p.value.data();
    n.requires_grad = p.trainable;
    nodes_.push_back(std::move(n));
    param_nodes_[&p] = nodes_.size() - 1;
    return {this, nodes_.size() - 1};
  }

  Var<T> make(Shape shape, Array<T> value, bool requires_grad, BackwardFn fn) {
    if (value.size() != shape.size()) {
      throw ShapeError("node value size " + std::to_string(value.size()) + " does not match " +
                       shape.str());
    }
    Node n;
    n.shape = shape;
    n.storage = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Shape& shape(std::size_t id) const { return nodes_[id].shape; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  Eigen::Map<const Array<T>> value(std::size_t id) const {
    const Node& n = nodes_[id];
    return {n.data(), n.shape.size()};
  }

  /// Gradient accumulator, zero-initialized on first access.
  Array<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() != n.shape.size()) n.grad = Array<T>::Zero(n.shape.size());
    return n.grad;
  }

  bool has_grad(std::size_t id) const { return nodes_[id].grad.size() == nodes_[id].shape.size(); }

  void backward(Var<T> root) {
    if (root.size() != 1) throw ShapeError("backward without seed needs a scalar root, got " + root.shape().str());
    backward(root, Array<T>::Ones(1));
  }

  void backward(Var<T> root, const Array<T>& seed) {
    if (backward_done_) throw InvalidArgument("backward already ran on this graph");
    if (seed.size() != root.size()) throw ShapeError("backward seed size does not match root " + root.shape().str());
    backward_done_ = true;
    if (!requires_grad(root.id())) return;
    grad(root.id()) += seed;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && has_grad(i)) n.backward(*this, i);
    }
  }

  /// Gradient of a parameter bound into this graph; zeros when unused.
  Array<T> parameter_grad(const Parameter<T>& p) {
    auto it = param_nodes_.find(&p);
    if (it == param_nodes_.end() || !has_grad(it->second)) return Array<T>::Zero(p.shape.size());
    return nodes_[it->second].grad;
  }

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    Array<T> storage;
    const T* external = nullptr;
    Array<T> grad;
    bool requires_grad = false;
    BackwardFn backward;

    const T* data() const { return external ? external : storage.data(); }
  };

  Var<T> leaf(Shape shape, Array<T> value, bool requires_grad) {
    if (value.size() != shape.size()) {
      throw ShapeError("leaf value size " + std::to_string(value.size()) + " does not match " + shape.str());
    }
    Node n;
    n.shape = shape;
    n.storage = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
  bool backward_done_ = false;
};

}  // namespace rpr::ad
