#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace bmil {

// A trainable tensor with a persistent gradient accumulator. Optimizers walk
// lists of these; tapes bind them as leaves so backward passes write straight
// into `grad`.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape())) {}
  void zero_grad() { grad.fill(0.0); }
};

class Tape;

struct Node {
  Tensor value;
  Tensor grad;                // allocated on first upstream contribution
  Tensor* sink = nullptr;     // bound Param gradient, bypasses `grad`
  bool has_grad = false;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<Node*> parents;
  std::function<void(Node&)> backward_fn;  // empty for leaves/constants
  std::uint32_t mark = 0;
};

// Handle into a tape. Cheap to copy; valid until the tape is cleared.
struct Var {
  Node* n = nullptr;
  Tape* tape = nullptr;

  const Tensor& value() const { return n->value; }
  bool defined() const { return n != nullptr; }
};

// Define-by-run reverse-mode tape. Owns every node of one computation graph;
// backward() runs one reverse-topological sweep from a scalar root and then
// any registered finalizers (used by fused ops that batch weight gradients).
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Non-differentiable input.
  Var constant(Tensor v);
  // Differentiable input whose gradient lives on the node (read via grad_of).
  Var leaf(Tensor v);
  // Differentiable input bound to a Param: backward accumulates into p.grad.
  Var var(Param& p);

  Node* make(const char* op, Tensor value, std::vector<Node*> parents,
             std::function<void(Node&)> backward_fn);
  Var wrap(Node* n) { return Var{n, this}; }

  void add_finalizer(std::function<void()> f) { finalizers_.push_back(std::move(f)); }

  // Distinguishes backward sweeps, so fused ops can arm one finalizer per
  // sweep. Globally unique across tapes: a fresh tape can reuse a destroyed
  // tape's address, so (tape pointer, per-tape counter) would not identify a
  // sweep.
  std::uint64_t backward_pass_id() const { return pass_id_; }

  void backward(Var root);

  // Gradient of a leaf created with leaf(); zero tensor if it never received one.
  Tensor grad_of(Var v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::unique_ptr<Node>> nodes_;
  std::vector<std::function<void()>> finalizers_;
  std::uint32_t epoch_ = 0;
  std::uint64_t pass_id_ = 0;  // last id drawn from the global sweep counter
};

// Adds g (numel matching) into the node's gradient accumulator.
void accumulate_grad(Node& n, const double* g, int numel);

// ---- Differentiable ops ------------------------------------------------
// Elementwise ops require identical shapes; no implicit broadcasting.

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator-(Var a);
Var operator*(Var a, Var b);  // elementwise

Var scale(Var a, double s);
Var add_const(Var a, double c);

// {m,n}x{n} -> {m} and {m,n}x{n,p} -> {m,p}
Var matmul(Var a, Var b);
Var dot(Var a, Var b);  // {n}.{n} -> scalar

Var tanh(Var a);
Var sigmoid(Var a);
Var log(Var a);
Var exp(Var a);
Var square(Var a);
Var softplus(Var a);  // log(1+e^x), stable at both tails

// Hard clamp to [lo, hi]; gradient passes inside the interval, zero outside.
Var clamp(Var a, double lo, double hi);

Var sum(Var a);   // -> scalar
Var mean(Var a);  // -> scalar

Var add_n(const std::vector<Var>& xs);       // same-shape sum
Var mean_scalars(const std::vector<Var>& xs);

Var concat(const std::vector<Var>& xs);  // 1-D pieces -> 1-D
Var slice(Var a, int start, int len);    // 1-D

// {L,C} + {C} broadcast over rows
Var add_rowvec(Var m, Var v);

// Any shape -> rank 1, same data order.
Var flatten(Var a);

// 1-D convolution, stride 1, zero 'same' padding. input {L,Cin},
// kernels {Cout,Cin,K} with K odd -> output {L,Cout}.
Var conv1d(Var input, Var kernels);

// Cuts the graph: value flows, gradient does not.
Var detach(Var a);

}  // namespace bmil
