#include "core/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "core/error.hpp"

namespace bmil {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDt = 0.05;

double clip(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

// Wrap to [-pi, pi].
double wrap_angle(double th) {
  th = std::fmod(th + kPi, 2.0 * kPi);
  if (th < 0) th += 2.0 * kPi;
  return th - kPi;
}

}  // namespace

Tensor PomdpEnv::latent() const {
  require(eval_mode_, "latent state access requires an eval-mode environment");
  return latent_impl();
}

// ---- Pendulum ---------------------------------------------------------------

Pendulum::Pendulum(Mask mask, bool eval_mode) : PomdpEnv(eval_mode), mask_(mask) {}

std::string Pendulum::id() const {
  switch (mask_) {
    case Mask::kPosOnly: return "masked-pendulum";
    case Mask::kVelOnly: return "pendulum-velonly";
    case Mask::kFull: return "pendulum-full";
  }
  return {};
}

int Pendulum::observation_dim() const {
  switch (mask_) {
    case Mask::kPosOnly: return 2;
    case Mask::kVelOnly: return 1;
    case Mask::kFull: return 3;
  }
  return 0;
}

Tensor Pendulum::observe() const {
  switch (mask_) {
    case Mask::kPosOnly: return Tensor({2}, {std::cos(th_), std::sin(th_)});
    case Mask::kVelOnly: return Tensor({1}, {thdot_});
    case Mask::kFull: return Tensor({3}, {std::cos(th_), std::sin(th_), thdot_});
  }
  return {};
}

Tensor Pendulum::reset(Rng& rng) {
  th_ = rng.uniform(-kPi, kPi);
  thdot_ = rng.uniform(-1.0, 1.0);
  steps_done_ = 0;
  episode_active_ = true;
  return observe();
}

std::pair<Tensor, bool> Pendulum::step(const Tensor& action) {
  require(episode_active_, "step on a finished pendulum episode");
  require(action.numel() == 1, "pendulum action must be 1-D, got {}", action.shape_str());
  const double g = 9.81, m = 1.0, l = 1.0;
  const double u = clip(action[0], -action_bound(), action_bound());

  // Semi-implicit Euler: velocity first, then position with the new velocity.
  const double thacc = (g / l) * std::sin(th_) + u / (m * l * l);
  thdot_ = clip(thdot_ + kDt * thacc, -8.0, 8.0);
  th_ = wrap_angle(th_ + kDt * thdot_);

  ++steps_done_;
  const bool done = steps_done_ >= max_episode_steps();
  if (done) episode_active_ = false;
  return {observe(), done};
}

double Pendulum::step_score(const Tensor& latent, const Tensor& action) const {
  const double th = wrap_angle(latent[0]);
  const double thdot = latent[1];
  const double u = clip(action[0], -action_bound(), action_bound());
  return -(th * th + 0.1 * thdot * thdot + 0.001 * u * u);
}

Tensor Pendulum::latent_impl() const { return Tensor({2}, {th_, thdot_}); }

// ---- PointMass --------------------------------------------------------------

PointMass::PointMass(Mask mask, bool eval_mode) : PomdpEnv(eval_mode), mask_(mask) {}

std::string PointMass::id() const {
  switch (mask_) {
    case Mask::kPosOnly: return "pointmass-nav";
    case Mask::kVelOnly: return "pointmass-velonly";
    case Mask::kFull: return "pointmass-full";
  }
  return {};
}

int PointMass::observation_dim() const {
  switch (mask_) {
    case Mask::kPosOnly: return 2;
    case Mask::kVelOnly: return 2;
    case Mask::kFull: return 4;
  }
  return 0;
}

Tensor PointMass::observe() const {
  switch (mask_) {
    case Mask::kPosOnly: return Tensor({2}, {x_, y_});
    case Mask::kVelOnly: return Tensor({2}, {vx_, vy_});
    case Mask::kFull: return Tensor({4}, {x_, y_, vx_, vy_});
  }
  return {};
}

Tensor PointMass::reset(Rng& rng) {
  x_ = rng.uniform(-2.0, 2.0);
  y_ = rng.uniform(-2.0, 2.0);
  vx_ = 0.0;
  vy_ = 0.0;
  steps_done_ = 0;
  episode_active_ = true;
  return observe();
}

std::pair<Tensor, bool> PointMass::step(const Tensor& action) {
  require(episode_active_, "step on a finished point-mass episode");
  require(action.numel() == 2, "point-mass action must be 2-D, got {}", action.shape_str());
  const double fx = clip(action[0], -action_bound(), action_bound());
  const double fy = clip(action[1], -action_bound(), action_bound());

  vx_ += kDt * fx;
  vy_ += kDt * fy;
  x_ += kDt * vx_;
  y_ += kDt * vy_;

  ++steps_done_;
  const bool done = steps_done_ >= max_episode_steps();
  if (done) episode_active_ = false;
  return {observe(), done};
}

double PointMass::step_score(const Tensor& latent, const Tensor& action) const {
  const double px = latent[0], py = latent[1];
  const double ux = clip(action[0], -1.0, 1.0), uy = clip(action[1], -1.0, 1.0);
  return -(px * px + py * py + 0.001 * (ux * ux + uy * uy));
}

Tensor PointMass::latent_impl() const { return Tensor({4}, {x_, y_, vx_, vy_}); }

// ---- TabularPomdp -----------------------------------------------------------

namespace {

void check_row(const double* row, int n, const std::string& what) {
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    require(row[i] >= 0.0, "{} has negative entry {}", what, row[i]);
    sum += row[i];
  }
  require(std::abs(sum - 1.0) <= 1e-12, "{} sums to {} (want 1 within 1e-12)", what, sum);
}

}  // namespace

void TabularPomdp::validate() const {
  require(S > 0 && A > 0 && O > 0 && H >= 0, "tabular pomdp dims S={} A={} O={} H={}", S, A, O,
          H);
  require(gamma > 0.0 && gamma <= 1.0, "gamma {} outside (0, 1]", gamma);
  require(static_cast<int>(p0.size()) == S, "p0 length {} want {}", p0.size(), S);
  require(static_cast<int>(T.size()) == S * A * S, "T length {} want {}", T.size(), S * A * S);
  require(static_cast<int>(U.size()) == S * O, "U length {} want {}", U.size(), S * O);
  check_row(p0.data(), S, "p0");
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a)
      check_row(&T[(s * A + a) * S], S, fmt::format("T[s={},a={}]", s, a));
    check_row(&U[s * O], O, fmt::format("U[s={}]", s));
  }
}

TabularPomdp TabularPomdp::load(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open tabular pomdp file '{}'", path);

  // Token stream with '#' line comments.
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) tokens.push_back(tok);
  }
  std::size_t pos = 0;
  auto next = [&]() -> double {
    require(pos < tokens.size(), "tabular pomdp file '{}' is truncated", path);
    try {
      return std::stod(tokens[pos++]);
    } catch (const std::exception&) {
      fail("bad number '{}' in '{}'", tokens[pos - 1], path);
    }
  };

  TabularPomdp p;
  p.S = static_cast<int>(next());
  p.A = static_cast<int>(next());
  p.O = static_cast<int>(next());
  p.H = static_cast<int>(next());
  p.gamma = next();
  require(p.S > 0 && p.S <= 64 && p.A > 0 && p.A <= 64 && p.O > 0 && p.O <= 64,
          "implausible dims in '{}'", path);
  p.p0.resize(p.S);
  for (auto& v : p.p0) v = next();
  p.T.resize(static_cast<std::size_t>(p.S) * p.A * p.S);
  for (auto& v : p.T) v = next();
  p.U.resize(static_cast<std::size_t>(p.S) * p.O);
  for (auto& v : p.U) v = next();
  require(pos == tokens.size(), "trailing tokens in '{}'", path);
  p.validate();
  return p;
}

TabularPomdp TabularPomdp::random(Rng& rng, int S, int A, int O, int H, double gamma) {
  auto dirichlet_row = [&rng](double* row, int n) {
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      row[i] = -std::log(1.0 - rng.uniform());  // Exp(1)
      sum += row[i];
    }
    for (int i = 0; i < n; ++i) row[i] /= sum;
    // Renormalize exactly enough for the 1e-12 validation gate.
    double s2 = 0.0;
    for (int i = 0; i < n - 1; ++i) s2 += row[i];
    row[n - 1] = 1.0 - s2;
  };

  TabularPomdp p;
  p.S = S;
  p.A = A;
  p.O = O;
  p.H = H;
  p.gamma = gamma;
  p.p0.resize(S);
  dirichlet_row(p.p0.data(), S);
  p.T.resize(static_cast<std::size_t>(S) * A * S);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) dirichlet_row(&p.T[(s * A + a) * S], S);
  p.U.resize(static_cast<std::size_t>(S) * O);
  for (int s = 0; s < S; ++s) dirichlet_row(&p.U[s * O], O);
  p.validate();
  return p;
}

// ---- TabularEnv -------------------------------------------------------------

TabularEnv::TabularEnv(TabularPomdp pomdp, bool eval_mode)
    : PomdpEnv(eval_mode), pomdp_(std::move(pomdp)) {
  pomdp_.validate();
}

int TabularEnv::sample_row(const double* row, int n) {
  const double r = rng_.uniform();
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += row[i];
    if (r < acc) return i;
  }
  return n - 1;
}

Tensor TabularEnv::observe(int o) const {
  Tensor t({pomdp_.O});
  t[o] = 1.0;
  return t;
}

Tensor TabularEnv::reset(Rng& rng) {
  rng_ = Rng(rng.next_u64());  // consume entropy so successive resets differ
  state_ = sample_row(pomdp_.p0.data(), pomdp_.S);
  steps_done_ = 0;
  episode_active_ = true;
  return observe(sample_row(&pomdp_.U[state_ * pomdp_.O], pomdp_.O));
}

std::pair<Tensor, bool> TabularEnv::step(const Tensor& action) {
  require(episode_active_, "step on a finished tabular episode");
  const int a = static_cast<int>(action[0]);
  require(a >= 0 && a < pomdp_.A, "action index {} outside [0, {})", a, pomdp_.A);
  state_ = sample_row(&pomdp_.T[(state_ * pomdp_.A + a) * pomdp_.S], pomdp_.S);
  ++steps_done_;
  const bool done = steps_done_ >= std::max(1, pomdp_.H);
  if (done) episode_active_ = false;
  return {observe(sample_row(&pomdp_.U[state_ * pomdp_.O], pomdp_.O)), done};
}

// ---- factory / scoring -------------------------------------------------------

std::unique_ptr<PomdpEnv> make_env(const std::string& id, bool eval_mode) {
  if (id == "masked-pendulum") return std::make_unique<Pendulum>(Pendulum::Mask::kPosOnly, eval_mode);
  if (id == "pendulum-velonly") return std::make_unique<Pendulum>(Pendulum::Mask::kVelOnly, eval_mode);
  if (id == "pendulum-full") return std::make_unique<Pendulum>(Pendulum::Mask::kFull, eval_mode);
  if (id == "pointmass-nav") return std::make_unique<PointMass>(PointMass::Mask::kPosOnly, eval_mode);
  if (id == "pointmass-velonly") return std::make_unique<PointMass>(PointMass::Mask::kVelOnly, eval_mode);
  if (id == "pointmass-full") return std::make_unique<PointMass>(PointMass::Mask::kFull, eval_mode);
  if (id.rfind("tabular:", 0) == 0)
    return std::make_unique<TabularEnv>(TabularPomdp::load(id.substr(8)), eval_mode);
  fail("unknown environment '{}'", id);
}

double ground_truth_return(const PomdpEnv& env, const std::vector<Tensor>& latents,
                           const std::vector<Tensor>& actions) {
  require(env.eval_mode(), "ground-truth scoring requires an eval-mode environment");
  require(latents.size() == actions.size(), "latent/action length mismatch: {} vs {}",
          latents.size(), actions.size());
  double total = 0.0;
  for (std::size_t i = 0; i < latents.size(); ++i)
    total += env.step_score(latents[i], actions[i]);
  return total;
}

}  // namespace bmil
