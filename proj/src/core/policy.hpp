#pragma once

#include <vector>

#include "core/graph.hpp"
#include "core/nn.hpp"
#include "core/tensor.hpp"

namespace bmil {

struct GaeParams {
  double gamma = 0.99;
  double lambda = 0.95;
  void validate() const;  // both in (0, 1]
};

// One step of a c-step rollout segment, as consumed by the actor-critic
// update. Beliefs here are plain numbers: the policy update treats them as
// fixed inputs and never moves the belief parameters.
struct RolloutStep {
  Tensor belief;
  Tensor action;
  double reward = 0.0;  // shaped reward at this step
  double value = 0.0;   // critic value of `belief`
  bool done = false;    // the episode ended on this step
};

struct RolloutBatch {
  std::vector<RolloutStep> steps;
  // Critic value of the state after the last step; ignored when that step is
  // terminal (the done mask zeroes it).
  double bootstrap_value = 0.0;
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;  // advantage + value, the critic's target
};

// delta_t = r_t + gamma*V_{t+1}*(1-done_t) - V_t, then the exponentially
// weighted backward recursion A_t = delta_t + gamma*lambda*(1-done_t)*A_{t+1}.
GaeResult gae_advantages(const RolloutBatch& batch, const GaeParams& p);

// -mean[ log pi(a_t|b_t) * A_t ] - beta * entropy(pi). Advantages are
// constants; minimizing this ascends the policy-gradient objective.
Var policy_loss(Tape& t, GaussianHead& head, const RolloutBatch& batch,
                const std::vector<double>& advantages, double entropy_beta);

// Mean squared error between the critic's value and the GAE returns.
Var critic_loss(Tape& t, Mlp& critic, const RolloutBatch& batch,
                const std::vector<double>& returns);

}  // namespace bmil
