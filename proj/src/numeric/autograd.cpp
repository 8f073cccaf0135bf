#include "draftrevise/numeric/autograd.hpp"

#include <stdexcept>

namespace draftrevise::numeric {

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)), grad(value.shape(), 0.0) {}

void Parameter::zero_grad() const {
  if (grad.shape() != value.shape()) {
    grad = Tensor(value.shape(), 0.0);
  } else {
    grad.fill(0.0);
  }
}

const Tensor& Var::value() const {
  if (!graph_) throw std::logic_error("Var::value on an empty handle");
  return graph_->value(*this);
}

Graph::Node& Graph::node(Var v) {
  if (v.graph_ != this || v.id_ >= nodes_.size()) {
    throw std::logic_error("Var does not belong to this graph");
  }
  return nodes_[v.id_];
}

const Graph::Node& Graph::node(Var v) const {
  if (v.graph_ != this || v.id_ >= nodes_.size()) {
    throw std::logic_error("Var does not belong to this graph");
  }
  return nodes_[v.id_];
}

Var Graph::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::param(const Parameter& p) {
  Node n;
  n.param = &p;
  n.needs_grad = recording();
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  if (recording()) {
    for (Var in : inputs) {
      if (node(in).needs_grad) {
        n.needs_grad = true;
        break;
      }
    }
    if (n.needs_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Graph::value(Var v) const { return node(v).value(); }

bool Graph::needs_grad(Var v) const { return node(v).needs_grad; }

Tensor* Graph::grad_buffer(Var v) {
  Node& n = node(v);
  if (!n.needs_grad) return nullptr;
  Tensor& g = n.param ? n.param->grad : n.grad;
  if (g.shape() != n.value().shape()) g = Tensor(n.value().shape(), 0.0);
  return &g;
}

void Graph::backward(Var loss) {
  if (!recording()) throw std::logic_error("Graph::backward in inference mode");
  Node& root = node(loss);
  if (root.value().size() != 1) {
    throw std::invalid_argument("Graph::backward: loss must have exactly one element");
  }
  if (root.needs_grad) {
    Tensor* seed = grad_buffer(loss);
    (*seed)[0] += 1.0;
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.shape() != n.value().shape()) continue;
      n.backward(*this, n.grad, n.value());
    }
  }
  clear();
}

}  // namespace draftrevise::numeric
