#pragma once

#include <string>
#include <vector>

#include "core/graph.hpp"
#include "core/nn.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace bmil {

// Binary classifier on (belief, action) tuples. The raw MLP output is clamped
// to +-kLogitClamp before the sigmoid, so probabilities stay strictly inside
// (0,1) and every log term stays finite. `belief_only` drops the action input
// (a diagnostic configuration for demonstrating belief collapse).
class Discriminator {
 public:
  Discriminator(const std::string& name, int belief_dim, int act_dim, Rng& rng,
                int mlp_hidden = 64, bool belief_only = false);

  static constexpr double kLogitClamp = 20.0;

  Var logit(Tape& t, Var b, const Tensor& a);  // clamped pre-sigmoid score
  double logit_numeric(const Tensor& b, const Tensor& a) const;
  double prob_numeric(const Tensor& b, const Tensor& a) const;  // sigmoid(logit)

  int belief_dim() const { return belief_dim_; }
  int act_dim() const { return act_dim_; }
  bool belief_only() const { return belief_only_; }
  std::vector<Param*> params() { return net_.params(); }

 private:
  int belief_dim_, act_dim_;
  bool belief_only_;
  Mlp net_;
};

// One classification sample: a graph-connected belief and the action taken.
// Callers decide whether the belief is live or detached; actions are data.
struct BeliefAction {
  Var belief;
  Tensor action;
};

// -( mean log D on expert + mean log(1-D) on policy ), the log-loss whose
// minimization trains the classifier. Computed via softplus of the clamped
// logit, which is those logs exactly with stable tails.
Var disc_loss(Tape& t, Discriminator& d, const std::vector<BeliefAction>& expert,
              const std::vector<BeliefAction>& policy);

// r = -log(1 - D(b,a)) = softplus(logit); strictly increasing in D, finite
// thanks to the clamp, and positive whenever D > 0.
double shaped_reward(const Discriminator& d, const Tensor& b, const Tensor& a);

// Which gradient paths of the belief-side imitation loss are active.
struct PhiPaths {
  bool expert = true;           // mean log D on expert tuples, through b
  bool policy_gradient = true;  // mean log pi(a|b) * q_hat, q_hat constant
  bool pathwise = true;         // mean log(1-D) on policy tuples, through b
};

// The imitation loss whose descent trains the belief parameters: the expert
// term, the score-function surrogate for the policy term, and the pathwise
// policy term. `q_hat` estimates the cost-to-go of the minimized quantity
// log(1-D); callers holding shaped-reward advantages pass their negation.
// Beliefs must be graph-connected for gradients to reach the trunk; the
// discriminator and policy parameters also receive gradients, which callers
// discard by only stepping the belief parameter group.
Var imitation_loss_phi(Tape& t, Discriminator& d, GaussianHead& policy,
                       const std::vector<BeliefAction>& expert,
                       const std::vector<BeliefAction>& on_policy,
                       const std::vector<double>& q_hat, const PhiPaths& paths = {});

}  // namespace bmil
