#include "flop/graph.hpp"

#include <algorithm>
#include <atomic>

#include "flop/errors.hpp"

namespace flop {
namespace {

std::uint64_t next_serial() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace

Graph::Graph() : serial_(next_serial()) {}

Parameter::Parameter(std::string name, Tensor value, bool requires_grad)
    : name_(std::move(name)), value_(std::move(value)), requires_grad_(requires_grad) {
  grad_ = Tensor(value_.shape());
}

void Parameter::zero_grad() {
  if (grad_.shape() != value_.shape()) grad_ = Tensor(value_.shape());
  grad_.fill(0.0);
}

const Tensor& Var::value() const { return graph_->value(id_); }
const Tensor& Var::grad() const { return graph_->grad(id_); }

Var Graph::constant(Tensor value) {
  if (backward_done_) throw GraphError("graph already differentiated; call reset()");
  if (!value.all_finite()) throw NumericError("non-finite constant recorded");
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::parameter(Parameter& param) {
  if (backward_done_) throw GraphError("graph already differentiated; call reset()");
  if (auto it = param_nodes_.find(&param); it != param_nodes_.end()) return Var(this, it->second);
  if (!param.value().all_finite())
    throw NumericError("parameter '" + param.name() + "' holds non-finite values");
  Node node;
  node.value = param.value();
  node.param = &param;
  node.needs_grad = grad_enabled_ && param.requires_grad();
  nodes_.push_back(std::move(node));
  param_nodes_.emplace(&param, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(const char* op, Tensor value, std::vector<std::size_t> parents,
                  BackwardFn backward) {
  if (backward_done_) throw GraphError("graph already differentiated; call reset()");
  if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
  Node node;
  node.value = std::move(value);
  node.needs_grad = std::any_of(parents.begin(), parents.end(),
                                [this](std::size_t p) { return nodes_[p].needs_grad; });
  if (node.needs_grad) {
    node.parents = std::move(parents);
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor& Graph::grad_of(std::size_t node) {
  Node& n = nodes_[node];
  if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size())
    n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Graph::backward(Var loss) {
  if (backward_done_) throw GraphError("backward() called twice without reset()");
  if (nodes_.empty()) throw GraphError("backward() on an empty graph");
  if (loss.graph_ != this) throw GraphError("loss belongs to a different graph");
  if (nodes_[loss.id_].value.size() != 1)
    throw DimensionError("loss must be scalar, got shape " + shape_string(nodes_[loss.id_].value.shape()));
  backward_done_ = true;
  if (!nodes_[loss.id_].needs_grad) return;

  grad_of(loss.id_)[0] = 1.0;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.needs_grad || node.grad.empty()) continue;
    if (node.backward) node.backward(*this, i);
    if (node.param != nullptr) {
      Tensor& target = node.param->grad();
      if (target.shape() != node.value.shape()) target = Tensor(node.value.shape());
      auto dst = target.data();
      auto src = node.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
}

void Graph::reset() {
  nodes_.clear();
  param_nodes_.clear();
  backward_done_ = false;
  serial_ = next_serial();
}

}  // namespace flop
