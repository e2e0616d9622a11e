#pragma once

#include <string>
#include <vector>

#include "core/demos.hpp"
#include "core/graph.hpp"
#include "core/nn.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace bmil {

// Mixing weights and temporal offsets for the prediction regularizers:
// total = lambda1*L^f + lambda2*L^i + lambda3*L^a, summed over every offset k.
struct RegWeights {
  double lambda1 = 0.2;  // forward (predict o_{t+k})
  double lambda2 = 0.2;  // inverse (predict o_{t-k})
  double lambda3 = 0.2;  // action (predict a_{t:t+k-1})
  std::vector<int> offsets = {1, 5};

  int max_offset() const;  // 0 when the offset set is empty
  void validate() const;   // nonnegative weights, positive offsets
};

// Unweighted per-offset regularizer values captured while the loss graph is
// built, for logging. Entries align with RegWeights::offsets; a term that is
// switched off (zero weight) logs as 0.
struct RegReport {
  std::vector<double> forward, inverse, action;
};

// Recurrent belief trunk plus every head trained with it: a shared observation
// encoder feeding a GRU, an autoregressive next-observation predictor, and the
// forward/inverse/action regularizer heads with their two action-sequence
// encoders (one for past actions, one for future actions). All heads read the
// belief through the same trunk, so each loss backpropagates into the shared
// recurrent parameters.
class BeliefModule {
 public:
  // `max_k` bounds the regularizer offsets this instance can serve (it sizes
  // the action-sequence encoders and the action head's output). When
  // `encoding_space` is set, the forward/inverse heads predict in the
  // observation encoder's output space and their targets are the encoded
  // observations with gradient blocked through the target side.
  BeliefModule(const std::string& name, int obs_dim, int act_dim, int max_k, Rng& rng,
               bool encoding_space = false, int enc_dim = 64, int hidden = 256,
               int mlp_hidden = 64, int act_enc_dim = 64);

  int obs_dim() const { return obs_dim_; }
  int act_dim() const { return act_dim_; }
  int enc_dim() const { return enc_dim_; }
  int hidden_dim() const { return gru_.hidden_size(); }
  int max_k() const { return max_k_; }
  bool encoding_space() const { return encoding_space_; }

  // ---- graph-side forward ------------------------------------------------
  Var encode_obs(Tape& t, Var o);  // tanh(linear(o)), width enc_dim
  // One recurrence step: b' = gru(b_prev, [encode_obs(o), a_prev]).
  Var step(Tape& t, Var b_prev, Var o, Var a_prev);
  // Unrolls the recurrence over an aligned stream: prev_actions[i] is the
  // action taken before observing obs[i] (a zero tensor at an episode start).
  // Returns one belief per stream position.
  std::vector<Var> encode_sequence(Tape& t, const std::vector<Tensor>& obs,
                                   const std::vector<Tensor>& prev_actions,
                                   const Tensor& h0);
  // Beliefs for the window's rows, warm-started from the episode's first step
  // (zero hidden state). beliefs[i] belongs to trajectory row w.start + i.
  // `graph_prefix` bounds truncated BPTT: at most that many warm-up steps
  // before the window are unrolled on the tape, the rest run numerically, so
  // belief values are identical either way (the numeric and graph recurrences
  // agree bitwise) while gradients stop at the prefix boundary. Negative means
  // the whole prefix lives on the tape.
  std::vector<Var> encode_window(Tape& t, const Window& w, int graph_prefix = -1);

  // ---- numeric-side forward (rollouts / evaluation) -----------------------
  Tensor initial_belief() const { return Tensor::zeros({gru_.hidden_size()}); }
  void step_numeric(const Tensor& b_prev, const Tensor& o, const Tensor& a_prev,
                    Tensor& out) const;

  // ---- losses --------------------------------------------------------------
  // All take the window's beliefs (from encode_window, or any graph beliefs
  // aligned the same way) and average one squared-error per valid pair. Pairs
  // never leave the window, so they cannot span an episode boundary.

  // Autoregressive: predict o_t from (b_{t-1}, a_{t-1}); window length >= 2.
  Var loss_ar(Tape& t, const std::vector<Var>& beliefs, const Window& w);
  // Forward: predict o_{t+k} from (b_t, encoded a_{t:t+k-1}); length >= k+1.
  Var loss_forward(Tape& t, const std::vector<Var>& beliefs, const Window& w, int k);
  // Inverse: predict o_{t-k} from (b_t, encoded a_{t-k:t-1}); length >= k+1.
  Var loss_inverse(Tape& t, const std::vector<Var>& beliefs, const Window& w, int k);
  // Action: predict the flattened a_{t:t+k-1} from (b_t, encoded o_{t+k});
  // length >= k+1. The head emits max_k*act_dim values; offset k scores the
  // first k*act_dim of them, so every configured k shares one head.
  Var loss_action(Tape& t, const std::vector<Var>& beliefs, const Window& w, int k);

  // sum over rw.offsets of lambda1*L^f_k + lambda2*L^i_k + lambda3*L^a_k.
  // Zero-weight terms are skipped entirely (they never enter the graph).
  Var loss_regularizers(Tape& t, const std::vector<Var>& beliefs, const Window& w,
                        const RegWeights& rw, RegReport* report = nullptr);
  // imitation_term + regularizers; with all weights zero this returns the
  // imitation term's own node, so ablations are bitwise-exact.
  Var loss_belief_total(Tape& t, const std::vector<Var>& beliefs, const Window& w,
                        const RegWeights& rw, Var imitation_term,
                        RegReport* report = nullptr);

  std::vector<Param*> params();

 private:
  // Target for the forward/inverse heads at trajectory row `row`: the raw
  // observation, or its detached encoding in encoding-space mode.
  Var prediction_target(Tape& t, const Tensor& obs);

  int obs_dim_, act_dim_, enc_dim_, max_k_;
  bool encoding_space_;
  Linear enc_;
  GruCell gru_;
  Mlp g_ar_, g_f_, g_i_, g_a_;
  ActionSeqEncoder past_actions_, future_actions_;
};

}  // namespace bmil
