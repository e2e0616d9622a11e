#pragma once

#include <memory>
#include <string>
#include <vector>

#include "core/graph.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace bmil {

// Orthogonal matrix via QR of a Gaussian draw (sign-fixed); standard choice
// for recurrent weights.
Tensor orthogonal_init(Rng& rng, int rows, int cols, double gain = 1.0);
// U(-1/sqrt(fan_in), +1/sqrt(fan_in)) for feed-forward weights.
Tensor fanin_uniform(Rng& rng, int rows, int cols);

class Linear {
 public:
  Linear(const std::string& name, int in, int out, Rng& rng);
  Var forward(Tape& t, Var x);
  void forward_numeric(const Tensor& x, Tensor& out) const;
  std::vector<Param*> params();
  int out_dim() const { return W_.value.dim(0); }

 private:
  Param W_, b_;
};

// in -> hidden -> hidden -> out, tanh on hidden layers, linear output.
class Mlp {
 public:
  Mlp(const std::string& name, int in, int out, Rng& rng, int hidden = 64);
  Var forward(Tape& t, Var x);
  Tensor forward_numeric(const Tensor& x) const;
  std::vector<Param*> params();
  int out_dim() const { return l3_.out_dim(); }

 private:
  Linear l1_, l2_, l3_;
};

// Single GRU cell. step() records one fused tape node; its backward stages
// per-step gate deltas and inputs, and a tape finalizer turns the whole
// window's weight gradients into two GEMMs (instead of per-step rank-1
// updates). Bias and input/hidden gradients flow per step as usual.
class GruCell {
 public:
  GruCell(const std::string& name, int input, int hidden, Rng& rng);

  Var step(Tape& t, Var h_prev, Var x);
  void step_numeric(const Tensor& h_prev, const Tensor& x, Tensor& h_out) const;

  std::vector<Param*> params();
  int hidden_size() const { return hidden_; }
  int input_size() const { return input_; }

 private:
  struct Stage {
    Tensor::Storage u_rows, v_rows, dzr_rows, dh_rows;
    int rows = 0;
    std::uint64_t pass_id = 0;
    const Tape* tape = nullptr;
    void clear() {
      u_rows.clear();
      v_rows.clear();
      dzr_rows.clear();
      dh_rows.clear();
      rows = 0;
    }
  };
  void flush_stage();

  int input_, hidden_;
  Param wzr_, bzr_, wh_, bh_;  // z and r gates stacked; candidate separate
  Stage stage_;
};

// Two conv1d layers (kernel 3, stride 1, same padding, 5 filters each) over a
// right-padded action window, then flatten + linear projection. Rows at or
// beyond the true length are zero-masked on input, so the output never
// depends on padding content.
class ActionSeqEncoder {
 public:
  ActionSeqEncoder(const std::string& name, int act_dim, int max_k, int out, Rng& rng,
                   int filters = 5);

  // actions.size() in [1, max_k]; each entry has act_dim elements.
  Var encode(Tape& t, const std::vector<Tensor>& actions);

  // Same, from an already-padded {max_k, act_dim} block: rows >= valid_k are
  // zero-masked here, so their content never reaches the convolutions.
  Var encode_padded(Tape& t, const Tensor& padded, int valid_k);

  std::vector<Param*> params();
  int out_dim() const { return proj_.out_dim(); }
  int max_k() const { return max_k_; }

 private:
  int act_dim_, max_k_, filters_;
  Param k1_, b1_, k2_, b2_;
  Linear proj_;
};

// State-independent-variance Gaussian over actions: mean from an MLP on the
// belief, log-std as free parameters.
class GaussianHead {
 public:
  GaussianHead(const std::string& name, int in, int act_dim, Rng& rng);

  void mean_std_numeric(const Tensor& b, Tensor& mu, Tensor& sigma) const;
  Tensor sample(const Tensor& b, Rng& rng) const;      // mu + sigma*eps
  Tensor mean_action(const Tensor& b) const;           // deterministic eval
  double log_prob_numeric(const Tensor& b, const Tensor& a) const;

  Var log_prob(Tape& t, Var b, const Tensor& a);  // scalar
  Var entropy(Tape& t);                           // scalar, depends on log-std only

  std::vector<Param*> params();
  int act_dim() const { return act_dim_; }

 private:
  int act_dim_;
  Mlp mean_;
  Param log_std_;
};

}  // namespace bmil
