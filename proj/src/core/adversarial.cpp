#include "core/adversarial.hpp"

#include <algorithm>
#include <cmath>

#include "core/error.hpp"

namespace bmil {

Discriminator::Discriminator(const std::string& name, int belief_dim, int act_dim, Rng& rng,
                             int mlp_hidden, bool belief_only)
    : belief_dim_(belief_dim),
      act_dim_(act_dim),
      belief_only_(belief_only),
      net_(name + ".net", belief_only ? belief_dim : belief_dim + act_dim, 1, rng,
           mlp_hidden) {
  require(belief_dim >= 1 && act_dim >= 1, "discriminator needs positive dims");
}

Var Discriminator::logit(Tape& t, Var b, const Tensor& a) {
  require(b.value().numel() == belief_dim_, "discriminator: belief width {} want {}",
          b.value().numel(), belief_dim_);
  require(a.numel() == act_dim_, "discriminator: action width {} want {}", a.numel(),
          act_dim_);
  Var input = belief_only_ ? b : concat({b, t.constant(a)});
  return clamp(sum(net_.forward(t, input)), -kLogitClamp, kLogitClamp);
}

double Discriminator::logit_numeric(const Tensor& b, const Tensor& a) const {
  require(b.numel() == belief_dim_ && a.numel() == act_dim_,
          "discriminator: widths {}/{} want {}/{}", b.numel(), a.numel(), belief_dim_,
          act_dim_);
  Tensor input = b;
  if (!belief_only_) {
    input = Tensor({belief_dim_ + act_dim_});
    std::copy_n(b.data(), belief_dim_, input.data());
    std::copy_n(a.data(), act_dim_, input.data() + belief_dim_);
  }
  const double raw = net_.forward_numeric(input).value();
  return std::min(std::max(raw, -kLogitClamp), kLogitClamp);
}

double Discriminator::prob_numeric(const Tensor& b, const Tensor& a) const {
  return 1.0 / (1.0 + std::exp(-logit_numeric(b, a)));
}

namespace {

double softplus_s(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

// log D = -softplus(-logit) and log(1-D) = -softplus(logit), exactly.
Var neg_log_d(Tape& t, Discriminator& d, const BeliefAction& s) {
  return softplus(scale(d.logit(t, s.belief, s.action), -1.0));
}
Var neg_log_one_minus_d(Tape& t, Discriminator& d, const BeliefAction& s) {
  return softplus(d.logit(t, s.belief, s.action));
}

}  // namespace

Var disc_loss(Tape& t, Discriminator& d, const std::vector<BeliefAction>& expert,
              const std::vector<BeliefAction>& policy) {
  require(!expert.empty() && !policy.empty(), "disc_loss: empty batch ({} expert, {} policy)",
          expert.size(), policy.size());
  std::vector<Var> e, p;
  e.reserve(expert.size());
  p.reserve(policy.size());
  for (const BeliefAction& s : expert) e.push_back(neg_log_d(t, d, s));
  for (const BeliefAction& s : policy) p.push_back(neg_log_one_minus_d(t, d, s));
  return mean_scalars(e) + mean_scalars(p);
}

double shaped_reward(const Discriminator& d, const Tensor& b, const Tensor& a) {
  return softplus_s(d.logit_numeric(b, a));
}

Var imitation_loss_phi(Tape& t, Discriminator& d, GaussianHead& policy,
                       const std::vector<BeliefAction>& expert,
                       const std::vector<BeliefAction>& on_policy,
                       const std::vector<double>& q_hat, const PhiPaths& paths) {
  std::vector<Var> terms;
  if (paths.expert) {
    require(!expert.empty(), "imitation loss: expert path enabled with no expert tuples");
    std::vector<Var> logs;
    logs.reserve(expert.size());
    for (const BeliefAction& s : expert) logs.push_back(neg_log_d(t, d, s));
    terms.push_back(scale(mean_scalars(logs), -1.0));  // + mean log D
  }
  if (paths.policy_gradient) {
    require(!on_policy.empty(), "imitation loss: policy path enabled with no policy tuples");
    require(q_hat.size() == on_policy.size(),
            "imitation loss: {} q estimates for {} policy tuples", q_hat.size(),
            on_policy.size());
    std::vector<Var> logs;
    logs.reserve(on_policy.size());
    for (std::size_t i = 0; i < on_policy.size(); ++i)
      logs.push_back(
          scale(policy.log_prob(t, on_policy[i].belief, on_policy[i].action), q_hat[i]));
    terms.push_back(mean_scalars(logs));
  }
  if (paths.pathwise) {
    require(!on_policy.empty(), "imitation loss: pathwise path enabled with no policy tuples");
    std::vector<Var> logs;
    logs.reserve(on_policy.size());
    for (const BeliefAction& s : on_policy) logs.push_back(neg_log_one_minus_d(t, d, s));
    terms.push_back(scale(mean_scalars(logs), -1.0));  // + mean log(1-D)
  }
  if (terms.empty()) return t.constant(Tensor::scalar(0.0));
  if (terms.size() == 1) return terms.front();
  return add_n(terms);
}

}  // namespace bmil
