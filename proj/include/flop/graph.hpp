#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "flop/tensor.hpp"

namespace flop {

class Graph;

/// Learnable tensor with an accumulated gradient. Owned by a layer; a Graph
/// only references it for the duration of one forward/backward pass.
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Tensor value, bool requires_grad = true);

  const std::string& name() const { return name_; }
  Tensor& value() { return value_; }
  const Tensor& value() const { return value_; }
  Tensor& grad() { return grad_; }
  const Tensor& grad() const { return grad_; }
  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }
  void zero_grad();

 private:
  std::string name_;
  Tensor value_;
  Tensor grad_;
  bool requires_grad_ = true;
};

/// Handle to a node recorded on a Graph.
class Var {
 public:
  Var() = default;

  bool valid() const { return graph_ != nullptr; }
  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  /// Gradient of the last backward() w.r.t. this node (empty if none reached it).
  const Tensor& grad() const;

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Append-only tape of operations. Nodes are recorded in evaluation order, so
/// a reverse sweep over the tape is a valid backward order.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to a parameter. Repeated calls for one parameter return the
  /// same node, so weights shared across time steps accumulate one gradient.
  Var parameter(Parameter& param);

  /// Records an op result. `backward` receives this node's index and must add
  /// into grad_of(parent) for each parent that needs_grad().
  Var record(const char* op, Tensor value, std::vector<std::size_t> parents,
             BackwardFn backward);

  const Tensor& value(std::size_t node) const { return nodes_[node].value; }
  /// Gradient slot of a node, zero-allocated on first access.
  Tensor& grad_of(std::size_t node);
  const Tensor& grad(std::size_t node) const { return nodes_[node].grad; }
  bool needs_grad(std::size_t node) const { return nodes_[node].needs_grad; }

  /// Reverse sweep from a scalar loss. Parameter gradients are added into
  /// Parameter::grad(). A second call without reset() is an error.
  void backward(Var loss);
  void reset();

  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }
  /// Unique per graph and per reset(); lets layers detect stale per-batch state.
  std::uint64_t serial() const { return serial_; }
  /// When disabled, parameters enter as constants and nothing is taped for backward.
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  /// Scratch buffer reused by matmul kernels.
  std::vector<double>& scratch() { return scratch_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  std::vector<double> scratch_;
  bool backward_done_ = false;
  bool grad_enabled_ = true;
  std::uint64_t serial_ = 0;
};

}  // namespace flop
