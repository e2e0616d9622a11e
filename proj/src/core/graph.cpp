#include "core/graph.hpp"

#include <algorithm>
#include <cmath>

#include "core/error.hpp"

namespace bmil {

namespace {

bool finite_span(const double* p, int n) {
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) return false;
  }
  return true;
}

void check_forward(const Node& n) {
  if (!n.value.all_finite()) fail("non-finite value produced by op '{}'", n.op);
}

}  // namespace

void accumulate_grad(Node& n, const double* g, int numel) {
  Tensor& dst = n.sink ? *n.sink : n.grad;
  if (!n.sink && !n.has_grad) {
    n.grad = Tensor::zeros(n.value.shape());
    n.has_grad = true;
  }
  if (n.sink) n.has_grad = true;
  require(dst.numel() == numel, "gradient size mismatch for op '{}': {} vs {}", n.op,
          dst.numel(), numel);
  double* d = dst.data();
  for (int i = 0; i < numel; ++i) d[i] += g[i];
}

Var Tape::constant(Tensor v) {
  Node* n = make("const", std::move(v), {}, nullptr);
  n->requires_grad = false;
  return wrap(n);
}

Var Tape::leaf(Tensor v) {
  Node* n = make("leaf", std::move(v), {}, nullptr);
  n->requires_grad = true;
  return wrap(n);
}

Var Tape::var(Param& p) {
  Node* n = make("param", p.value, {}, nullptr);
  n->requires_grad = true;
  n->sink = &p.grad;
  return wrap(n);
}

Node* Tape::make(const char* op, Tensor value, std::vector<Node*> parents,
                 std::function<void(Node&)> backward_fn) {
  auto node = std::make_unique<Node>();
  node->op = op;
  node->value = std::move(value);
  node->parents = std::move(parents);
  node->backward_fn = std::move(backward_fn);
  for (Node* p : node->parents) {
    if (p->requires_grad) {
      node->requires_grad = true;
      break;
    }
  }
  check_forward(*node);
  nodes_.push_back(std::move(node));
  return nodes_.back().get();
}

void Tape::backward(Var root) {
  require(root.n != nullptr && root.tape == this, "backward root is not on this tape");
  require(root.n->value.is_scalar(), "backward root must be scalar, got shape {}",
          root.n->value.shape_str());
  static std::uint64_t next_pass_id = 0;
  pass_id_ = ++next_pass_id;

  // Reverse-topological order over the requires_grad subgraph, iteratively.
  ++epoch_;
  std::vector<Node*> order;
  if (root.n->requires_grad) {
    std::vector<std::pair<Node*, std::size_t>> stack;
    root.n->mark = epoch_;
    stack.emplace_back(root.n, 0);
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        Node* p = node->parents[idx++];
        if (p->requires_grad && p->mark != epoch_) {
          p->mark = epoch_;
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  // Op-node grads are per-sweep scratch; leaves (no backward_fn) accumulate
  // across calls until explicitly zeroed.
  for (Node* n : order)
    if (n->backward_fn) n->has_grad = false;

  const double one = 1.0;
  accumulate_grad(*root.n, &one, 1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->has_grad) continue;  // no upstream contribution reached it
    const Tensor& g = node->sink ? *node->sink : node->grad;
    if (!finite_span(g.data(), g.numel())) fail("non-finite gradient at op '{}'", node->op);
    if (node->backward_fn) node->backward_fn(*node);
  }
  for (auto& f : finalizers_) f();
  finalizers_.clear();
}

Tensor Tape::grad_of(Var v) const {
  require(v.n != nullptr && v.tape == this, "grad_of: var is not on this tape");
  if (v.n->sink) return *v.n->sink;
  if (!v.n->has_grad) return Tensor::zeros(v.n->value.shape());
  return v.n->grad;
}

// ---- op helpers ----------------------------------------------------------

namespace {

Tape* tape_of(Var a) {
  require(a.defined(), "op on undefined var");
  return a.tape;
}

void same_tape(Var a, Var b) {
  require(a.defined() && b.defined() && a.tape == b.tape, "ops require vars on one tape");
}

const Tensor& gradient(const Node& n) { return n.sink ? *n.sink : n.grad; }

}  // namespace

Var operator+(Var a, Var b) {
  same_tape(a, b);
  require(a.n->value.same_shape(b.n->value), "add: shape {} vs {}", a.n->value.shape_str(),
          b.n->value.shape_str());
  Tensor out = a.n->value;
  out.flat() += b.n->value.flat();
  Node* n = a.tape->make("add", std::move(out), {a.n, b.n}, [](Node& self) {
    const Tensor& g = gradient(self);
    for (Node* p : self.parents)
      if (p->requires_grad) accumulate_grad(*p, g.data(), g.numel());
  });
  return a.tape->wrap(n);
}

Var operator-(Var a, Var b) {
  same_tape(a, b);
  require(a.n->value.same_shape(b.n->value), "sub: shape {} vs {}", a.n->value.shape_str(),
          b.n->value.shape_str());
  Tensor out = a.n->value;
  out.flat() -= b.n->value.flat();
  Node* n = a.tape->make("sub", std::move(out), {a.n, b.n}, [](Node& self) {
    const Tensor& g = gradient(self);
    if (self.parents[0]->requires_grad)
      accumulate_grad(*self.parents[0], g.data(), g.numel());
    if (self.parents[1]->requires_grad) {
      Tensor neg = g;
      neg.flat() = -neg.flat();
      accumulate_grad(*self.parents[1], neg.data(), neg.numel());
    }
  });
  return a.tape->wrap(n);
}

Var operator-(Var a) { return scale(a, -1.0); }

Var operator*(Var a, Var b) {
  same_tape(a, b);
  require(a.n->value.same_shape(b.n->value), "mul: shape {} vs {}", a.n->value.shape_str(),
          b.n->value.shape_str());
  Tensor out = a.n->value;
  out.flat().array() *= b.n->value.flat().array();
  Node* n = a.tape->make("mul", std::move(out), {a.n, b.n}, [](Node& self) {
    const Tensor& g = gradient(self);
    Node* a = self.parents[0];
    Node* b = self.parents[1];
    Tensor buf = g;
    if (a->requires_grad) {
      buf.flat().array() = g.flat().array() * b->value.flat().array();
      accumulate_grad(*a, buf.data(), buf.numel());
    }
    if (b->requires_grad) {
      buf.flat().array() = g.flat().array() * a->value.flat().array();
      accumulate_grad(*b, buf.data(), buf.numel());
    }
  });
  return a.tape->wrap(n);
}

Var scale(Var a, double s) {
  Tape* t = tape_of(a);
  Tensor out = a.n->value;
  out.flat() *= s;
  Node* n = t->make("scale", std::move(out), {a.n}, [s](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor buf = gradient(self);
    buf.flat() *= s;
    accumulate_grad(*self.parents[0], buf.data(), buf.numel());
  });
  return t->wrap(n);
}

Var add_const(Var a, double c) {
  Tape* t = tape_of(a);
  Tensor out = a.n->value;
  out.flat().array() += c;
  Node* n = t->make("add_const", std::move(out), {a.n}, [](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const Tensor& g = gradient(self);
    accumulate_grad(*self.parents[0], g.data(), g.numel());
  });
  return t->wrap(n);
}

Var matmul(Var a, Var b) {
  same_tape(a, b);
  const Tensor& A = a.n->value;
  const Tensor& B = b.n->value;
  require(A.ndim() == 2, "matmul: left operand must be rank 2, got {}", A.shape_str());
  Tensor out;
  if (B.ndim() == 1) {
    require(A.dim(1) == B.dim(0), "matmul: {} x {}", A.shape_str(), B.shape_str());
    out = Tensor::zeros({A.dim(0)});
    out.flat() = A.mat() * B.flat();
  } else {
    require(B.ndim() == 2 && A.dim(1) == B.dim(0), "matmul: {} x {}", A.shape_str(),
            B.shape_str());
    out = Tensor::zeros({A.dim(0), B.dim(1)});
    out.mat() = A.mat() * B.mat();
  }
  Node* n = a.tape->make("matmul", std::move(out), {a.n, b.n}, [](Node& self) {
    const Tensor& g = gradient(self);
    Node* a = self.parents[0];
    Node* b = self.parents[1];
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    if (B.ndim() == 1) {
      if (a->requires_grad) {  // dA = g * B^T  (outer product)
        Tensor da = Tensor::zeros(A.shape());
        da.mat() = g.flat() * B.flat().transpose();
        accumulate_grad(*a, da.data(), da.numel());
      }
      if (b->requires_grad) {  // dB = A^T * g
        Tensor db = Tensor::zeros(B.shape());
        db.flat() = A.mat().transpose() * g.flat();
        accumulate_grad(*b, db.data(), db.numel());
      }
    } else {
      if (a->requires_grad) {  // dA = g * B^T
        Tensor da = Tensor::zeros(A.shape());
        da.mat() = g.mat() * B.mat().transpose();
        accumulate_grad(*a, da.data(), da.numel());
      }
      if (b->requires_grad) {  // dB = A^T * g
        Tensor db = Tensor::zeros(B.shape());
        db.mat() = A.mat().transpose() * g.mat();
        accumulate_grad(*b, db.data(), db.numel());
      }
    }
  });
  return a.tape->wrap(n);
}

Var dot(Var a, Var b) {
  same_tape(a, b);
  require(a.n->value.ndim() == 1 && a.n->value.same_shape(b.n->value), "dot: {} . {}",
          a.n->value.shape_str(), b.n->value.shape_str());
  Tensor out = Tensor::scalar(a.n->value.flat().dot(b.n->value.flat()));
  Node* n = a.tape->make("dot", std::move(out), {a.n, b.n}, [](Node& self) {
    const double g = gradient(self).value();
    Node* a = self.parents[0];
    Node* b = self.parents[1];
    Tensor buf = a->value;
    if (a->requires_grad) {
      buf.flat() = g * b->value.flat();
      accumulate_grad(*a, buf.data(), buf.numel());
    }
    if (b->requires_grad) {
      buf.flat() = g * a->value.flat();
      accumulate_grad(*b, buf.data(), buf.numel());
    }
  });
  return a.tape->wrap(n);
}

namespace {

// Shared scaffolding for elementwise unary ops whose derivative is a function
// of input and output values.
template <typename Fwd, typename Bwd>
Var unary_op(const char* name, Var a, Fwd fwd, Bwd bwd) {
  Tape* t = tape_of(a);
  Tensor out = a.n->value;
  double* o = out.data();
  for (int i = 0; i < out.numel(); ++i) o[i] = fwd(o[i]);
  Node* n = t->make(name, std::move(out), {a.n}, [bwd](Node& self) {
    Node* p = self.parents[0];
    if (!p->requires_grad) return;
    const Tensor& g = gradient(self);
    Tensor buf = g;
    double* d = buf.data();
    const double* x = p->value.data();
    const double* y = self.value.data();
    for (int i = 0; i < buf.numel(); ++i) d[i] *= bwd(x[i], y[i]);
    accumulate_grad(*p, buf.data(), buf.numel());
  });
  return t->wrap(n);
}

}  // namespace

Var tanh(Var a) {
  return unary_op(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary_op(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var log(Var a) {
  return unary_op(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Var exp(Var a) {
  return unary_op(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Var square(Var a) {
  return unary_op(
      "square", a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Var softplus(Var a) {
  return unary_op(
      "softplus", a,
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var clamp(Var a, double lo, double hi) {
  require(lo <= hi, "clamp: lo {} > hi {}", lo, hi);
  return unary_op(
      "clamp", a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var sum(Var a) {
  Tape* t = tape_of(a);
  Tensor out = Tensor::scalar(a.n->value.flat().sum());
  Node* n = t->make("sum", std::move(out), {a.n}, [](Node& self) {
    Node* p = self.parents[0];
    if (!p->requires_grad) return;
    Tensor buf = Tensor::full(p->value.shape(), gradient(self).value());
    accumulate_grad(*p, buf.data(), buf.numel());
  });
  return t->wrap(n);
}

Var mean(Var a) { return scale(sum(a), 1.0 / a.n->value.numel()); }

Var add_n(const std::vector<Var>& xs) {
  require(!xs.empty(), "add_n: empty input");
  Tape* t = tape_of(xs[0]);
  Tensor out = xs[0].n->value;
  std::vector<Node*> parents{xs[0].n};
  for (std::size_t i = 1; i < xs.size(); ++i) {
    same_tape(xs[0], xs[i]);
    require(out.same_shape(xs[i].n->value), "add_n: shape {} vs {}", out.shape_str(),
            xs[i].n->value.shape_str());
    out.flat() += xs[i].n->value.flat();
    parents.push_back(xs[i].n);
  }
  Node* n = t->make("add_n", std::move(out), std::move(parents), [](Node& self) {
    const Tensor& g = gradient(self);
    for (Node* p : self.parents)
      if (p->requires_grad) accumulate_grad(*p, g.data(), g.numel());
  });
  return t->wrap(n);
}

Var mean_scalars(const std::vector<Var>& xs) {
  require(!xs.empty(), "mean_scalars: empty input");
  return scale(add_n(xs), 1.0 / static_cast<double>(xs.size()));
}

Var concat(const std::vector<Var>& xs) {
  require(!xs.empty(), "concat: empty input");
  Tape* t = tape_of(xs[0]);
  int total = 0;
  std::vector<Node*> parents;
  for (const Var& x : xs) {
    same_tape(xs[0], x);
    require(x.n->value.ndim() == 1, "concat: pieces must be rank 1, got {}",
            x.n->value.shape_str());
    total += x.n->value.dim(0);
    parents.push_back(x.n);
  }
  Tensor out = Tensor::zeros({total});
  int off = 0;
  for (const Var& x : xs) {
    std::copy_n(x.n->value.data(), x.n->value.numel(), out.data() + off);
    off += x.n->value.numel();
  }
  Node* n = t->make("concat", std::move(out), std::move(parents), [](Node& self) {
    const Tensor& g = gradient(self);
    int off = 0;
    for (Node* p : self.parents) {
      if (p->requires_grad) accumulate_grad(*p, g.data() + off, p->value.numel());
      off += p->value.numel();
    }
  });
  return t->wrap(n);
}

Var slice(Var a, int start, int len) {
  Tape* t = tape_of(a);
  const Tensor& v = a.n->value;
  require(v.ndim() == 1, "slice: input must be rank 1, got {}", v.shape_str());
  require(start >= 0 && len >= 0 && start + len <= v.dim(0),
          "slice: [{}:{}) out of range for length {}", start, start + len, v.dim(0));
  Tensor out = Tensor::zeros({len});
  std::copy_n(v.data() + start, len, out.data());
  Node* n = t->make("slice", std::move(out), {a.n}, [start, len](Node& self) {
    Node* p = self.parents[0];
    if (!p->requires_grad) return;
    Tensor buf = Tensor::zeros(p->value.shape());
    std::copy_n(gradient(self).data(), len, buf.data() + start);
    accumulate_grad(*p, buf.data(), buf.numel());
  });
  return t->wrap(n);
}

Var add_rowvec(Var m, Var v) {
  same_tape(m, v);
  const Tensor& M = m.n->value;
  const Tensor& V = v.n->value;
  require(M.ndim() == 2 && V.ndim() == 1 && M.dim(1) == V.dim(0), "add_rowvec: {} + {}",
          M.shape_str(), V.shape_str());
  Tensor out = M;
  out.mat().rowwise() += V.flat().transpose();
  Node* n = m.tape->make("add_rowvec", std::move(out), {m.n, v.n}, [](Node& self) {
    const Tensor& g = gradient(self);
    Node* m = self.parents[0];
    Node* v = self.parents[1];
    if (m->requires_grad) accumulate_grad(*m, g.data(), g.numel());
    if (v->requires_grad) {
      Tensor dv = Tensor::zeros(v->value.shape());
      dv.flat() = g.mat().colwise().sum();
      accumulate_grad(*v, dv.data(), dv.numel());
    }
  });
  return m.tape->wrap(n);
}

Var flatten(Var a) {
  Tape* t = tape_of(a);
  Tensor out({a.n->value.numel()});
  std::copy_n(a.n->value.data(), a.n->value.numel(), out.data());
  Node* n = t->make("flatten", std::move(out), {a.n}, [](Node& self) {
    Node* p = self.parents[0];
    if (!p->requires_grad) return;
    accumulate_grad(*p, gradient(self).data(), p->value.numel());
  });
  return t->wrap(n);
}

Var conv1d(Var input, Var kernels) {
  same_tape(input, kernels);
  const Tensor& X = input.n->value;
  const Tensor& W = kernels.n->value;
  require(X.ndim() == 2, "conv1d: input must be {{L,Cin}}, got {}", X.shape_str());
  require(W.ndim() == 3, "conv1d: kernels must be {{Cout,Cin,K}}, got {}", W.shape_str());
  const int L = X.dim(0), cin = X.dim(1), cout = W.dim(0), K = W.dim(2);
  require(W.dim(1) == cin, "conv1d: channel mismatch, input {} kernels {}", X.shape_str(),
          W.shape_str());
  require(K % 2 == 1, "conv1d: kernel width must be odd, got {}", K);
  const int P = (K - 1) / 2;

  Tensor out = Tensor::zeros({L, cout});
  for (int l = 0; l < L; ++l)
    for (int co = 0; co < cout; ++co) {
      double acc = 0.0;
      for (int k = 0; k < K; ++k) {
        const int j = l + k - P;
        if (j < 0 || j >= L) continue;
        for (int ci = 0; ci < cin; ++ci) acc += X.at(j, ci) * W[(co * cin + ci) * K + k];
      }
      out.at(l, co) = acc;
    }

  Node* n = input.tape->make("conv1d", std::move(out), {input.n, kernels.n}, [](Node& self) {
    const Tensor& g = gradient(self);
    Node* xn = self.parents[0];
    Node* wn = self.parents[1];
    const Tensor& X = xn->value;
    const Tensor& W = wn->value;
    const int L = X.dim(0), cin = X.dim(1), cout = W.dim(0), K = W.dim(2);
    const int P = (K - 1) / 2;
    if (xn->requires_grad) {
      Tensor dx = Tensor::zeros(X.shape());
      for (int l = 0; l < L; ++l)
        for (int co = 0; co < cout; ++co) {
          const double go = g.at(l, co);
          for (int k = 0; k < K; ++k) {
            const int j = l + k - P;
            if (j < 0 || j >= L) continue;
            for (int ci = 0; ci < cin; ++ci) dx.at(j, ci) += go * W[(co * cin + ci) * K + k];
          }
        }
      accumulate_grad(*xn, dx.data(), dx.numel());
    }
    if (wn->requires_grad) {
      Tensor dw = Tensor::zeros(W.shape());
      for (int l = 0; l < L; ++l)
        for (int co = 0; co < cout; ++co) {
          const double go = g.at(l, co);
          for (int k = 0; k < K; ++k) {
            const int j = l + k - P;
            if (j < 0 || j >= L) continue;
            for (int ci = 0; ci < cin; ++ci) dw[(co * cin + ci) * K + k] += go * X.at(j, ci);
          }
        }
      accumulate_grad(*wn, dw.data(), dw.numel());
    }
  });
  return input.tape->wrap(n);
}

Var detach(Var a) {
  Tape* t = tape_of(a);
  return t->constant(a.n->value);
}

}  // namespace bmil
