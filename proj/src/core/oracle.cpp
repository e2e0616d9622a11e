#include "core/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include <fmt/format.h>

#include "core/error.hpp"

namespace bmil::verify {

namespace {

// FNV-1a over the key bytes: a stable, platform-independent hash so lazily
// sampled policy rows depend only on (seed, key), never on query order.
std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<double> simplex_uniform(Rng& rng, int n) {
  // Exp(1) draws normalized: uniform over the simplex.  The last entry is
  // closed exactly so the row sums to 1 in floating point.
  std::vector<double> e(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    e[i] = -std::log(1.0 - rng.uniform());
    total += e[i];
  }
  double partial = 0.0;
  for (int i = 0; i + 1 < n; ++i) {
    e[i] /= total;
    partial += e[i];
  }
  e[n - 1] = 1.0 - partial;
  return e;
}

}  // namespace

std::string BeliefPoint::key() const {
  std::string out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const long long r = std::llround(p[i] * 1e12);
    if (i) out.push_back(',');
    out += std::to_string(r);
  }
  return out;
}

namespace {

// Core predict/correct arithmetic; returns the observation's probability mass
// (zero means the branch is impossible and `next` is unnormalized garbage).
// Enumeration, filtering, and Monte-Carlo simulation all go through this one
// function so equal histories yield bit-identical belief atoms.
double belief_step(const TabularPomdp& pomdp, const BeliefPoint& b, int action, int observation,
                   BeliefPoint& next) {
  next.p.assign(pomdp.S, 0.0);
  for (int s2 = 0; s2 < pomdp.S; ++s2) {
    double pred = 0.0;
    for (int s = 0; s < pomdp.S; ++s) pred += b.p[s] * pomdp.t(s, action, s2);
    next.p[s2] = pred * pomdp.u(s2, observation);
  }
  double total = 0.0;
  for (double v : next.p) total += v;
  if (total > 0.0)
    for (double& v : next.p) v /= total;
  return total;
}

}  // namespace

BeliefPoint belief_update(const TabularPomdp& pomdp, const BeliefPoint& b, int action,
                          int observation) {
  require(static_cast<int>(b.p.size()) == pomdp.S, "belief has {} entries, POMDP has {} states",
          b.p.size(), pomdp.S);
  require(action >= 0 && action < pomdp.A, "action {} out of range", action);
  require(observation >= 0 && observation < pomdp.O, "observation {} out of range", observation);

  BeliefPoint next;
  const double total = belief_step(pomdp, b, action, observation, next);
  require(total > 0.0,
          "zero-probability history: observation {} impossible after action {} from this belief",
          observation, action);
  return next;
}

BeliefPoint bayes_filter(const TabularPomdp& pomdp, const std::vector<int>& actions,
                         const std::vector<int>& observations) {
  require(actions.size() == observations.size(),
          "history must pair each action with the observation that follows it ({} vs {})",
          actions.size(), observations.size());
  BeliefPoint b{pomdp.p0};
  for (std::size_t i = 0; i < actions.size(); ++i)
    b = belief_update(pomdp, b, actions[i], observations[i]);
  return b;
}

TabularPolicy::TabularPolicy(int num_actions, std::uint64_t seed) : a_(num_actions), seed_(seed) {
  require(num_actions >= 1, "policy needs at least one action, got {}", num_actions);
}

TabularPolicy TabularPolicy::uniform(int num_actions) {
  TabularPolicy p(num_actions, 0);
  p.uniform_ = true;
  return p;
}

const std::vector<double>& TabularPolicy::row(const std::string& belief_key) const {
  auto it = cache_.find(belief_key);
  if (it != cache_.end()) return it->second;
  std::vector<double> r;
  if (uniform_) {
    r.assign(a_, 1.0 / a_);
    double partial = 0.0;
    for (int i = 0; i + 1 < a_; ++i) partial += r[i];
    r[a_ - 1] = 1.0 - partial;
  } else {
    Rng rng(seed_ ^ fnv1a(belief_key));
    r = simplex_uniform(rng, a_);
  }
  return cache_.emplace(belief_key, std::move(r)).first->second;
}

void VisitationMeasure::add(const std::string& key, double w) {
  require(w >= 0.0, "visitation weight must be nonnegative, got {}", w);
  weight[key] += w;
}

std::map<std::string, double> VisitationMeasure::normalized() const {
  require(norm > 0.0, "visitation measure has no normalization constant");
  std::map<std::string, double> out;
  for (const auto& [k, w] : weight) out[k] = w / norm;
  return out;
}

namespace {

struct Enumerator {
  const TabularPomdp& pomdp;
  const TabularPolicy& policy;
  int horizon;
  double gamma;
  VisitationTriple out;

  void contribute(const BeliefPoint& b, double path_prob, int t) {
    const double w = std::pow(gamma, t) * path_prob;
    const std::string bk = b.key();
    for (int s = 0; s < pomdp.S; ++s) out.state.add("s" + std::to_string(s), w * b.p[s]);
    out.belief.add(bk, w);
    const std::vector<double>& pi = policy.row(bk);
    for (int a = 0; a < pomdp.A; ++a)
      out.belief_action.add(bk + "|" + std::to_string(a), w * pi[a]);
  }

  void expand(const BeliefPoint& b, double path_prob, int t) {
    contribute(b, path_prob, t);
    if (t == horizon) return;
    const std::vector<double>& pi = policy.row(b.key());
    for (int a = 0; a < pomdp.A; ++a) {
      for (int o = 0; o < pomdp.O; ++o) {
        BeliefPoint child;
        const double pobs = belief_step(pomdp, b, a, o, child);
        if (pobs == 0.0) continue;  // impossible branch carries no mass
        expand(child, path_prob * pi[a] * pobs, t + 1);
      }
    }
  }
};

}  // namespace

VisitationTriple visitation_measures(const TabularPomdp& pomdp, const TabularPolicy& policy,
                                     int horizon, double gamma) {
  pomdp.validate();
  require(horizon >= 0, "horizon must be nonnegative, got {}", horizon);
  require(policy.num_actions() == pomdp.A, "policy has {} actions, POMDP has {}",
          policy.num_actions(), pomdp.A);

  double nodes = 1.0, layer = 1.0;
  for (int t = 1; t <= horizon; ++t) {
    layer *= static_cast<double>(pomdp.A) * pomdp.O;
    nodes += layer;
  }
  require(nodes <= 1e6, "history enumeration would visit {:.3g} nodes (limit 1e6)", nodes);

  Enumerator e{pomdp, policy, horizon, gamma, {}};
  double norm = 0.0;
  for (int t = 0; t <= horizon; ++t) norm += std::pow(gamma, t);
  e.out.state.norm = e.out.belief.norm = e.out.belief_action.norm = norm;

  BeliefPoint b0{pomdp.p0};
  e.expand(b0, 1.0, 0);
  return std::move(e.out);
}

double js_divergence(const VisitationMeasure& p, const VisitationMeasure& q) {
  const std::map<std::string, double> pn = p.normalized();
  const std::map<std::string, double> qn = q.normalized();

  // Iterate the sorted union of supports; the per-atom term is symmetric in
  // (p, q), so js(p,q) == js(q,p) bitwise.
  auto mass = [](const std::map<std::string, double>& m, const std::string& k) {
    auto it = m.find(k);
    return it == m.end() ? 0.0 : it->second;
  };
  std::vector<std::string> keys;
  for (const auto& [k, v] : pn) keys.push_back(k);
  for (const auto& [k, v] : qn)
    if (!pn.count(k)) keys.push_back(k);
  std::sort(keys.begin(), keys.end());

  double js = 0.0;
  for (const std::string& k : keys) {
    const double a = mass(pn, k), b = mass(qn, k);
    const double m = 0.5 * (a + b);
    // One symmetric term per atom: swapping (a, b) swaps the addends of a
    // single commutative addition, so js(p,q) == js(q,p) bitwise.
    const double ta = a > 0.0 ? 0.5 * a * std::log(a / m) : 0.0;
    const double tb = b > 0.0 ? 0.5 * b * std::log(b / m) : 0.0;
    js += ta + tb;
  }
  return js;
}

double DpiReport::margin() const { return std::min(djs_b - djs_s, djs_ba - djs_b); }

bool DpiReport::holds(double tol) const { return margin() >= -tol; }

DpiReport check_dpi_chain(const TabularPomdp& pomdp, const TabularPolicy& pi,
                          const TabularPolicy& expert, int horizon, double gamma) {
  const VisitationTriple a = visitation_measures(pomdp, pi, horizon, gamma);
  const VisitationTriple b = visitation_measures(pomdp, expert, horizon, gamma);
  DpiReport r;
  r.djs_s = js_divergence(a.state, b.state);
  r.djs_b = js_divergence(a.belief, b.belief);
  r.djs_ba = js_divergence(a.belief_action, b.belief_action);
  return r;
}

DpiSuiteResult run_dpi_suite(int instances, std::uint64_t seed, double gamma) {
  require(instances >= 1, "suite needs at least one instance");
  DpiSuiteResult out;
  out.instances = instances;
  Rng master(seed);
  for (int i = 0; i < instances; ++i) {
    Rng rng(master.next_u64());
    const int S = 2 + static_cast<int>(rng.uniform_int(2));  // 2..3
    const int A = 2 + static_cast<int>(rng.uniform_int(2));
    const int O = 2 + static_cast<int>(rng.uniform_int(2));
    const int H = 2 + static_cast<int>(rng.uniform_int(3));  // 2..4
    const TabularPomdp pomdp = TabularPomdp::random(rng, S, A, O, H, gamma);
    const TabularPolicy pi(A, rng.next_u64());
    const TabularPolicy expert(A, rng.next_u64());
    const DpiReport r = check_dpi_chain(pomdp, pi, expert, H, gamma);
    if (!r.holds()) ++out.violations;
    out.report += fmt::format(
        "instance {:3d}  S={} A={} O={} H={}  djs_s={:.12f}  djs_b={:.12f}  djs_ba={:.12f}  "
        "margin={:+.3e}  {}\n",
        i, S, A, O, H, r.djs_s, r.djs_b, r.djs_ba, r.margin(), r.holds() ? "ok" : "VIOLATION");
  }
  return out;
}

}  // namespace bmil::verify
