#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "core/belief.hpp"
#include "core/error.hpp"
#include "core/policy.hpp"

namespace bmil {

// Thrown when a loss, reward, or value turns non-finite during training. The
// trainer writes a diagnostic dump next to the metrics file before throwing;
// the CLI maps this exception to its own exit code.
class NumericalAbort : public Error {
 public:
  using Error::Error;
};

// Full description of one training run. Defaults are the reference
// configuration; every field is reachable from a config file or a key=value
// override through set(). key_docs() lists the exact key strings.
struct TrainConfig {
  // run identity / IO
  std::string env = "masked-pendulum";
  // bmil | bmil-noreg | task-agnostic | gail-ff | gail-obstack |
  // bmil-encoding-space
  std::string mode = "bmil";
  // none | forward-only | inverse-only | action-only (zeroes the other two
  // regularizer weights; meaningful for bmil and bmil-encoding-space)
  std::string ablation = "none";
  std::string demo_path;
  std::string out_dir = "runs/out";
  std::uint64_t seed = 0;

  // budget / loop shape
  long total_steps = 300000;   // environment steps
  int c = 5;                   // on-policy segment length per iteration
  int window_len = 0;          // sampled window length; 0 means c + max offset
  int bptt_prefix = 10;        // warm-up steps kept on the tape before a window
  int disc_steps = 1;          // discriminator updates per iteration
  int offpolicy_updates = 2;   // off-policy belief updates per iteration
  int replay_capacity = 1000;  // episodes kept in the replay buffer

  // losses
  RegWeights reg;  // lambda1..3 = 0.2, offsets {1, 5}
  GaeParams gae;   // gamma 0.99, lambda 0.95
  double entropy_beta = 1e-3;
  bool adv_norm = false;
  bool phi_expert_path = true;    // expert log-D term of the imitation loss
  bool phi_pg_path = true;        // score-function surrogate term
  bool phi_pathwise_path = true;  // pathwise log(1-D) term

  // optimizer (RMSProp, learning rate decayed linearly to zero over the run)
  double lr = 3e-4;
  double rms_alpha = 0.99;
  double rms_eps = 1e-8;

  // module sizes
  int enc_dim = 64;
  int gru_hidden = 256;
  int belief_mlp_hidden = 64;
  int act_enc_dim = 64;
  int disc_hidden = 64;
  bool disc_belief_only = false;  // diagnostic: drop the action input of D
  int critic_hidden = 64;
  int obstack_frames = 4;  // gail-obstack: frames in the stacked observation

  // evaluation / logging
  long eval_interval = 5000;  // env steps between metric rows
  int eval_episodes = 10;
  bool log_wall_clock = false;  // off: the wall-clock column logs 0 so reruns
                                // of the same seed produce identical bytes

  // Assign one field from its dotted key (e.g. "reg.lambda1", "opt.lr").
  // Unknown keys and malformed values raise Error.
  void set(const std::string& key, const std::string& value);
  void validate() const;

  // Regularizer weights after applying mode and ablation: bmil-noreg zeroes
  // all three, forward-only keeps lambda1 only, and so on.
  RegWeights effective_reg() const;
  int effective_window() const;  // window_len, or c + max effective offset
  bool uses_belief() const;      // mode trains/uses the recurrent module

  std::string dump() const;  // config file text; load_config() round-trips it

  // (key, documentation) for every settable field, in display order.
  static const std::vector<std::pair<std::string, std::string>>& key_docs();
};

// key = value lines, '#'/';' comments, optional [section] headers that prefix
// the keys that follow ("[reg]\nlambda1 = 0.1" means "reg.lambda1 = 0.1").
TrainConfig load_config(const std::string& path);
// One "key=value" assignment, as given on a command line.
void apply_override(TrainConfig& cfg, const std::string& assignment);

// One row of the metrics CSV. Loss columns a mode does not touch are zero, so
// every run with the same offset set shares one schema.
struct MetricsRow {
  long iteration = 0;
  long env_steps = 0;
  double eval_mean = 0.0;
  double eval_std = 0.0;
  double policy_loss = 0.0;
  double disc_loss = 0.0;
  double imitation_loss = 0.0;
  double ar_loss = 0.0;  // task-agnostic belief loss; zero elsewhere
  std::vector<double> forward_k, inverse_k, action_k;  // one entry per offset
  double shaped_reward = 0.0;
  double wall_clock_s = 0.0;
};

std::string metrics_header(const std::vector<int>& offsets);
std::string metrics_line(const MetricsRow& row);

struct EvalStats {
  double mean = 0.0;
  double stdev = 0.0;  // sample standard deviation over episodes
  int episodes = 0;
};

struct TrainResult {
  std::string metrics_path;
  std::string checkpoint_path;
  EvalStats final_eval;
  long env_steps = 0;
  long iterations = 0;
};

// Runs the full loop: per iteration an on-policy segment, then the policy,
// discriminator, belief, and off-policy belief updates the mode calls for.
// Writes <out_dir>/metrics.csv and <out_dir>/checkpoint.bmilckpt; byte-for-
// byte reproducible for a given config (with wall-clock logging off).
TrainResult train(const TrainConfig& cfg);

// Deterministic evaluation episodes from a saved checkpoint; the checkpoint
// header carries everything needed to rebuild the modules and environment.
EvalStats evaluate_checkpoint(const std::string& checkpoint_path, int episodes,
                              std::uint64_t seed);

}  // namespace bmil
