#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "edgecap/tensor/tensor.hpp"

namespace edgecap {

template <Real T>
class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
template <Real T>
class Var {
 public:
  Var() = default;

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
  friend class Tape<T>;
};

// View handed to a node's backward function.
template <Real T>
class BackwardContext {
 public:
  std::span<const T> out_grad() const { return out_grad_; }
  const Tensor<T>& output() const { return output_; }
  const Tensor<T>& input(std::size_t i) const;
  // True when input i (transitively) feeds a gradient-requiring leaf.
  bool wants(std::size_t i) const;
  // Zero-initialized on first access.
  std::span<T> input_grad(std::size_t i);

 private:
  BackwardContext(Tape<T>& tape, std::span<const std::size_t> inputs, std::span<const T> out_grad,
                  const Tensor<T>& output)
      : tape_(tape), inputs_(inputs), out_grad_(out_grad), output_(output) {}
  Tape<T>& tape_;
  std::span<const std::size_t> inputs_;
  std::span<const T> out_grad_;
  const Tensor<T>& output_;
  friend class Tape<T>;
};

// Reverse-mode tape. Nodes are appended in execution order, so every node's
// inputs precede it and a single reverse sweep visits each node once.
// Single-owner and single-threaded.
template <Real T>
class Tape {
 public:
  using BackwardFn = std::function<void(BackwardContext<T>&)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  // Gradient-requiring leaf owned by the tape; read the result via grad().
  Var<T> variable(Tensor<T> value);
  // Leaf referencing an external parameter. When the parameter requires
  // grad, backward() accumulates into its grad buffer. The parameter must
  // outlive the tape and stay unmodified while the tape is in use.
  Var<T> param(Tensor<T>& p);
  Var<T> param(const Tensor<T>& p);

  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn);

  void backward(Var<T> loss);

  std::span<const T> grad(Var<T> v) const;
  const Tensor<T>& value(std::size_t id) const { return nodes_[id].val(); }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* ref = nullptr;
    Tensor<T>* sink = nullptr;
    std::vector<T> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool needs_grad = false;
    const Tensor<T>& val() const { return ref ? *ref : value; }
  };

  Var<T> push(Node node);
  std::vector<T>& grad_buffer(std::size_t id);

  std::deque<Node> nodes_;
  std::unordered_map<const Tensor<T>*, std::size_t> param_ids_;
  bool grad_enabled_;
  bool backward_done_ = false;
  friend class BackwardContext<T>;
};

template <Real T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

extern template class Tape<float>;
extern template class Tape<double>;
extern template class BackwardContext<float>;
extern template class BackwardContext<double>;

}  // namespace edgecap
