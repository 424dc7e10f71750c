#include "ctxdepth/tape.hpp"

#include "ctxdepth/error.hpp"

namespace ctxdepth {

void Parameter::zero_grad() {
  if (grad.shape() != value.shape()) {
    grad = Tensor(value.shape());
  } else {
    grad.fill(0.0);
  }
}

const Tensor& Var::value() const {
  if (!tape_) throw StateError("use of an unbound Var");
  return tape_->value(*this);
}

double Var::item() const {
  const auto& v = value();
  if (v.size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(v.shape()));
  return v[0];
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  auto v = push(std::move(n));
  param_nodes_.emplace(&p, v.id_);
  return v;
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (in.tape_ != this) throw ContractError("op input belongs to a different tape");
    n.inputs.push_back(in.id_);
    n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

void Tape::accumulate(const Var& target, const Tensor& g) {
  auto& node = nodes_.at(target.id_);
  if (!node.requires_grad) return;
  if (g.size() != node.value.size()) {
    throw DimensionError("gradient " + shape_str(g.shape()) + " does not match value " +
                         shape_str(node.value.shape()));
  }
  if (node.grad.empty()) {
    node.grad = Tensor(node.value.shape(), g.vec());
    return;
  }
  auto dst = node.grad.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ != this) throw ContractError("loss belongs to a different tape");
  const auto& lv = nodes_.at(loss.id_).value;
  if (lv.size() != 1) throw ContractError("backward requires a scalar loss, got " + shape_str(lv.shape()));

  for (auto& n : nodes_) n.grad = Tensor();
  nodes_[loss.id_].grad = Tensor(lv.shape(), 1.0);
  visits_ = 0;

  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    ++visits_;
    if (n.backward) {
      // The node's grad is complete: every consumer has a larger index.
      const Tensor upstream = n.grad;
      n.backward(*this, upstream);
    }
    if (n.param) {
      auto& p = *n.param;
      if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
      auto dst = p.grad.data();
      auto src = n.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
}

Tensor Tape::grad(const Var& v) const {
  const auto& n = nodes_.at(v.id_);
  if (n.grad.empty()) return Tensor(n.value.shape());
  return n.grad;
}

}  // namespace ctxdepth
