#include "core/policy.hpp"

#include "core/error.hpp"

namespace bmil {

void GaeParams::validate() const {
  require(gamma > 0.0 && gamma <= 1.0, "gamma {} outside (0, 1]", gamma);
  require(lambda > 0.0 && lambda <= 1.0, "lambda {} outside (0, 1]", lambda);
}

GaeResult gae_advantages(const RolloutBatch& batch, const GaeParams& p) {
  p.validate();
  require(!batch.steps.empty(), "gae: empty rollout batch");
  const int n = static_cast<int>(batch.steps.size());
  GaeResult out;
  out.advantages.assign(static_cast<std::size_t>(n), 0.0);
  out.returns.assign(static_cast<std::size_t>(n), 0.0);
  double next_adv = 0.0;
  double next_value = batch.bootstrap_value;
  for (int i = n - 1; i >= 0; --i) {
    const RolloutStep& s = batch.steps[static_cast<std::size_t>(i)];
    const double mask = s.done ? 0.0 : 1.0;
    const double delta = s.reward + p.gamma * next_value * mask - s.value;
    const double adv = delta + p.gamma * p.lambda * mask * next_adv;
    out.advantages[static_cast<std::size_t>(i)] = adv;
    out.returns[static_cast<std::size_t>(i)] = adv + s.value;
    next_adv = adv;
    next_value = s.value;
  }
  return out;
}

Var policy_loss(Tape& t, GaussianHead& head, const RolloutBatch& batch,
                const std::vector<double>& advantages, double entropy_beta) {
  require(!batch.steps.empty(), "policy loss: empty batch");
  require(advantages.size() == batch.steps.size(),
          "policy loss: {} advantages for {} steps", advantages.size(), batch.steps.size());
  std::vector<Var> terms;
  terms.reserve(batch.steps.size());
  for (std::size_t i = 0; i < batch.steps.size(); ++i) {
    const RolloutStep& s = batch.steps[i];
    terms.push_back(scale(head.log_prob(t, t.constant(s.belief), s.action), advantages[i]));
  }
  Var loss = scale(mean_scalars(terms), -1.0);
  if (entropy_beta != 0.0) loss = loss - scale(head.entropy(t), entropy_beta);
  return loss;
}

Var critic_loss(Tape& t, Mlp& critic, const RolloutBatch& batch,
                const std::vector<double>& returns) {
  require(!batch.steps.empty(), "critic loss: empty batch");
  require(returns.size() == batch.steps.size(), "critic loss: {} returns for {} steps",
          returns.size(), batch.steps.size());
  std::vector<Var> terms;
  terms.reserve(batch.steps.size());
  for (std::size_t i = 0; i < batch.steps.size(); ++i) {
    Var v = critic.forward(t, t.constant(batch.steps[i].belief));
    Var target = t.constant(Tensor({1}, {returns[i]}));
    terms.push_back(sum(square(v - target)));
  }
  return mean_scalars(terms);
}

}  // namespace bmil
