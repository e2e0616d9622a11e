#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "core/env.hpp"
#include "core/rng.hpp"

namespace bmil::verify {

// Exact filtering posterior over the hidden states of a TabularPomdp.
// Convention: b_0 is the prior p0; observations arrive after transitions
// (o_{t+1} from s_{t+1}), so a t-step history holds t actions and t
// observations.
struct BeliefPoint {
  std::vector<double> p;

  // Canonical hash key: entries rounded to 12 decimals.  Merges beliefs that
  // are numerically identical without collapsing genuinely distinct ones.
  std::string key() const;
};

// One exact predict-with-T / correct-with-U step.  Shared by enumeration and
// Monte-Carlo simulation so both produce bit-identical belief atoms.
// Errors when the observation has zero probability under the predicted state
// distribution (impossible history) instead of silently renormalizing.
BeliefPoint belief_update(const TabularPomdp& pomdp, const BeliefPoint& b, int action,
                          int observation);

// Forward algorithm over a full history.  Empty history -> p0.
BeliefPoint bayes_filter(const TabularPomdp& pomdp, const std::vector<int>& actions,
                         const std::vector<int>& observations);

// Policy as a function of the belief atom only (belief-measurable by
// construction — the precondition of the divergence-chain proof).  Rows are
// sampled lazily per distinct belief key: uniform over the simplex, derived
// deterministically from (seed, key) so query order never matters.
class TabularPolicy {
 public:
  TabularPolicy(int num_actions, std::uint64_t seed);
  static TabularPolicy uniform(int num_actions);

  const std::vector<double>& row(const std::string& belief_key) const;
  int num_actions() const { return a_; }

 private:
  int a_;
  std::uint64_t seed_ = 0;
  bool uniform_ = false;
  mutable std::map<std::string, std::vector<double>> cache_;
};

// Discounted visitation measure over discrete atoms (states, belief keys, or
// belief-action keys).  `norm` is the shared constant sum_t gamma^t.
struct VisitationMeasure {
  std::map<std::string, double> weight;
  double norm = 0.0;

  void add(const std::string& key, double w);
  std::map<std::string, double> normalized() const;
};

struct VisitationTriple {
  VisitationMeasure state;          // keys "s<idx>"
  VisitationMeasure belief;         // keys BeliefPoint::key()
  VisitationMeasure belief_action;  // keys "<belief key>|<action>"
};

// Exact enumeration of every action/observation history up to horizon H
// (t = 0..H inclusive); each history contributes gamma^t * P(history).
// Errors when the history tree would exceed 10^6 nodes.
VisitationTriple visitation_measures(const TabularPomdp& pomdp, const TabularPolicy& policy,
                                     int horizon, double gamma);

// Jensen-Shannon divergence between two measures, natural log, in [0, ln 2].
// Measures are normalized internally; atoms missing from one side count as
// zero mass.  Exactly symmetric in its arguments.
double js_divergence(const VisitationMeasure& p, const VisitationMeasure& q);

struct DpiReport {
  double djs_s = 0.0;
  double djs_b = 0.0;
  double djs_ba = 0.0;

  double margin() const;  // min slack across the two inequalities
  bool holds(double tol = 1e-9) const;
};

// Computes the three divergences between the visitation measures of two
// belief-measurable policies and checks
//   D_JS(rho(s)) <= D_JS(rho(b)) <= D_JS(rho(b,a)).
DpiReport check_dpi_chain(const TabularPomdp& pomdp, const TabularPolicy& pi,
                          const TabularPolicy& expert, int horizon, double gamma);

struct DpiSuiteResult {
  int instances = 0;
  int violations = 0;
  std::string report;  // one line per instance: seed, divergences, margin

  bool all_hold() const { return violations == 0; }
};

// Randomized certification suite: `instances` random POMDPs (dims <= 3,
// H <= 4, gamma fixed) with independent random belief-measurable policy
// pairs.
DpiSuiteResult run_dpi_suite(int instances, std::uint64_t seed, double gamma = 0.9);

}  // namespace bmil::verify
