#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctxdepth/tensor.hpp"

namespace ctxdepth {

/// Trainable tensor with its accumulated gradient and optimizer grouping.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool weight_decay = true;  // false for batch-norm scale/shift and biases
  bool decoder = false;      // decoder group trains at a multiplied learning rate

  void zero_grad();
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  /// Value of a single-element tensor.
  double item() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode differentiation record.
///
/// Nodes are appended in execution order, so the node vector is already a
/// topological order. A Tape is single-writer.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  explicit Tape(std::uint64_t seed = 0) : seed_(seed) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives gradient.
  Var constant(Tensor value);
  /// Leaf that receives gradient (readable with grad()).
  Var variable(Tensor value);
  /// Leaf bound to a parameter; backward() adds into `p.grad`. Repeated calls
  /// with the same parameter return the same node.
  Var param(Parameter& p);

  /// Appends an op node. `fn` receives the upstream gradient and must
  /// accumulate into the inputs via accumulate().
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  bool requires_grad(const Var& v) const { return nodes_.at(v.id_).requires_grad; }
  const Tensor& value(const Var& v) const { return nodes_.at(v.id_).value; }

  /// Adds `g` into the gradient buffer of `target`; ignored for constants.
  void accumulate(const Var& target, const Tensor& g);

  /// Reverse sweep from a scalar loss. Throws ContractError otherwise.
  void backward(const Var& loss);

  /// Gradient of a node after backward(); zeros if nothing reached it.
  Tensor grad(const Var& v) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t last_backward_visits() const noexcept { return visits_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    Parameter* param = nullptr;
  };

  Var push(Node node);

  std::deque<Node> nodes_;  // stable addresses: values are handed out by reference
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  std::uint64_t seed_;
  std::size_t visits_ = 0;
};

}  // namespace ctxdepth
