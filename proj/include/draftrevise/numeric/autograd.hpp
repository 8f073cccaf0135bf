#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "draftrevise/numeric/tensor.hpp"

namespace draftrevise::numeric {

/// A trainable tensor. `grad` is the accumulation buffer written by
/// Graph::backward; it is mutable so that forward passes can take models by
/// const reference.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value);

  std::string name;
  Tensor value;
  mutable Tensor grad;

  void zero_grad() const;
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives
/// and has not been cleared.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;

  friend class Graph;
};

/// Recorded computation for one forward/backward step.
///
/// Nodes are appended in evaluation order, so reverse insertion order is a
/// valid topological order for the backward sweep. In inference mode no
/// backward closures are stored and gradients are never touched, which makes
/// concurrent inference over shared parameters safe.
class Graph {
 public:
  enum class Mode { kTrain, kInference };
  using BackwardFn =
      std::function<void(Graph&, const Tensor& grad_out, const Tensor& out_value)>;

  explicit Graph(Mode mode = Mode::kTrain) : mode_(mode) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Mode mode() const { return mode_; }
  bool recording() const { return mode_ == Mode::kTrain; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value);
  /// Leaf bound to a parameter; the parameter's value is referenced, not copied.
  Var param(const Parameter& p);

  /// Appends an op node. `backward` is kept only if some input needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool needs_grad(Var v) const;

  /// Gradient buffer of `v`, zero-initialized on first access. Returns nullptr
  /// when `v` does not need a gradient.
  Tensor* grad_buffer(Var v);

  /// Backpropagates from a one-element `loss`, accumulating into the
  /// Parameter::grad buffers, then frees the tape.
  void backward(Var loss);

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor owned;
    Tensor grad;
    const Parameter* param = nullptr;
    bool needs_grad = false;
    BackwardFn backward;

    const Tensor& value() const { return param ? param->value : owned; }
  };

  Node& node(Var v);
  const Node& node(Var v) const;

  Mode mode_;
  // deque: values handed out by reference stay valid as the tape grows
  std::deque<Node> nodes_;
};

}  // namespace draftrevise::numeric
