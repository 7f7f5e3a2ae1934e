#include "edgecap/tensor/tape.hpp"

namespace edgecap {

template <Real T>
const Tensor<T>& BackwardContext<T>::input(std::size_t i) const {
  return tape_.value(inputs_[i]);
}

template <Real T>
bool BackwardContext<T>::wants(std::size_t i) const {
  return tape_.needs_grad(inputs_[i]);
}

template <Real T>
std::span<T> BackwardContext<T>::input_grad(std::size_t i) {
  return tape_.grad_buffer(inputs_[i]);
}

template <Real T>
Var<T> Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <Real T>
std::vector<T>& Tape<T>::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.val().size(), T(0));
  return n.grad;
}

template <Real T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

template <Real T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = grad_enabled_;
  return push(std::move(n));
}

template <Real T>
Var<T> Tape<T>::param(Tensor<T>& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var<T>(this, it->second);
  Node n;
  n.ref = &p;
  n.needs_grad = grad_enabled_ && p.requires_grad();
  if (n.needs_grad) n.sink = &p;
  Var<T> v = push(std::move(n));
  param_ids_.emplace(&p, v.id());
  return v;
}

template <Real T>
Var<T> Tape<T>::param(const Tensor<T>& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var<T>(this, it->second);
  Node n;
  n.ref = &p;
  Var<T> v = push(std::move(n));
  param_ids_.emplace(&p, v.id());
  return v;
}

template <Real T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (const Var<T>& in : inputs) {
      if (in.tape_ != this) throw ContractError("operation mixes values from different tapes");
      n.needs_grad = n.needs_grad || nodes_[in.id_].needs_grad;
    }
    if (n.needs_grad) {
      n.inputs.reserve(inputs.size());
      for (const Var<T>& in : inputs) n.inputs.push_back(in.id_);
      n.backward = std::move(fn);
    }
  }
  return push(std::move(n));
}

template <Real T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape_ != this) throw ContractError("backward: loss belongs to a different tape");
  if (loss.value().size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  if (backward_done_) throw ContractError("backward: tape already consumed");
  backward_done_ = true;
  if (!nodes_[loss.id_].needs_grad) return;
  grad_buffer(loss.id_)[0] = T(1);
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) {
      BackwardContext<T> ctx(*this, n.inputs, n.grad, n.val());
      n.backward(ctx);
    }
    if (n.sink) {
      auto dst = n.sink->grad();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
    }
  }
}

template <Real T>
std::span<const T> Tape<T>::grad(Var<T> v) const {
  return nodes_[v.id_].grad;
}

template class Tape<float>;
template class Tape<double>;
template class BackwardContext<float>;
template class BackwardContext<double>;

}  // namespace edgecap
