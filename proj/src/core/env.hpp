#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace bmil {

// Partially observable environment. reset()/step() expose observations only;
// the latent state is reachable solely through the privileged accessor, which
// demands eval mode — training code never sees it.
class PomdpEnv {
 public:
  explicit PomdpEnv(bool eval_mode) : eval_mode_(eval_mode) {}
  virtual ~PomdpEnv() = default;

  virtual std::string id() const = 0;
  virtual int observation_dim() const = 0;
  virtual int action_dim() const = 0;    // continuous dims (0 for discrete)
  virtual int action_count() const { return 0; }  // discrete arms (0 for continuous)
  virtual double action_bound() const = 0;        // symmetric clip box
  virtual int max_episode_steps() const = 0;

  virtual Tensor reset(Rng& rng) = 0;
  // Clips the action to bounds internally; errors on stepping a done episode.
  virtual std::pair<Tensor, bool> step(const Tensor& action) = 0;

  // Per-step ground-truth score, a pure function (no privileged access needed
  // to call it on recorded latents).
  virtual double step_score(const Tensor& latent, const Tensor& action) const = 0;

  // Privileged: current latent state; eval mode only.
  Tensor latent() const;
  bool eval_mode() const { return eval_mode_; }

 protected:
  virtual Tensor latent_impl() const = 0;
  int steps_done_ = 0;
  bool episode_active_ = false;

 private:
  bool eval_mode_;
};

// Inverted pendulum with the velocity channel masked out. theta measured from
// upright; obs = (cos th, sin th) by default, (th_dot) for the velocity-only
// variant, all three channels for the unmasked variant.
class Pendulum final : public PomdpEnv {
 public:
  enum class Mask { kPosOnly, kVelOnly, kFull };
  Pendulum(Mask mask, bool eval_mode);

  std::string id() const override;
  int observation_dim() const override;
  int action_dim() const override { return 1; }
  double action_bound() const override { return 2.0; }
  int max_episode_steps() const override { return 200; }

  Tensor reset(Rng& rng) override;
  std::pair<Tensor, bool> step(const Tensor& action) override;
  double step_score(const Tensor& latent, const Tensor& action) const override;

 protected:
  Tensor latent_impl() const override;

 private:
  Tensor observe() const;
  Mask mask_;
  double th_ = 0.0, thdot_ = 0.0;
};

// Force-controlled double integrator navigating to the origin. obs = (x, y)
// by default; velocity-only and full variants mirror the pendulum's masks.
class PointMass final : public PomdpEnv {
 public:
  enum class Mask { kPosOnly, kVelOnly, kFull };
  PointMass(Mask mask, bool eval_mode);

  std::string id() const override;
  int observation_dim() const override;
  int action_dim() const override { return 2; }
  double action_bound() const override { return 1.0; }
  int max_episode_steps() const override { return 100; }

  Tensor reset(Rng& rng) override;
  std::pair<Tensor, bool> step(const Tensor& action) override;
  double step_score(const Tensor& latent, const Tensor& action) const override;

 protected:
  Tensor latent_impl() const override;

 private:
  Tensor observe() const;
  Mask mask_;
  double x_ = 0.0, y_ = 0.0, vx_ = 0.0, vy_ = 0.0;
};

// Exact finite POMDP given by explicit tables; the substrate for the oracle
// suite and loadable from a plain text file.
struct TabularPomdp {
  int S = 0, A = 0, O = 0, H = 0;
  double gamma = 0.9;
  std::vector<double> p0;  // S
  std::vector<double> T;   // [s][a][s'] row-major
  std::vector<double> U;   // [s][o]

  double t(int s, int a, int s2) const { return T[(s * A + a) * S + s2]; }
  double u(int s, int o) const { return U[s * O + o]; }

  void validate() const;  // rows sum to 1 within 1e-12, entries >= 0
  static TabularPomdp load(const std::string& path);
  static TabularPomdp random(Rng& rng, int S, int A, int O, int H, double gamma);
};

// PomdpEnv adapter: one-hot observations, discrete actions passed as a
// single-element tensor holding the arm index.
class TabularEnv final : public PomdpEnv {
 public:
  TabularEnv(TabularPomdp pomdp, bool eval_mode);

  std::string id() const override { return "tabular"; }
  int observation_dim() const override { return pomdp_.O; }
  int action_dim() const override { return 0; }
  int action_count() const override { return pomdp_.A; }
  double action_bound() const override { return 0.0; }
  int max_episode_steps() const override { return pomdp_.H; }

  Tensor reset(Rng& rng) override;
  std::pair<Tensor, bool> step(const Tensor& action) override;
  double step_score(const Tensor&, const Tensor&) const override { return 0.0; }

  const TabularPomdp& pomdp() const { return pomdp_; }

 protected:
  Tensor latent_impl() const override { return Tensor::scalar(state_); }

 private:
  int sample_row(const double* row, int n);
  Tensor observe(int o) const;
  TabularPomdp pomdp_;
  int state_ = 0;
  Rng rng_{0};
};

// Environment ids: masked-pendulum, pendulum-velonly, pendulum-full,
// pointmass-nav, pointmass-velonly, pointmass-full, tabular:<file>.
std::unique_ptr<PomdpEnv> make_env(const std::string& id, bool eval_mode);

// Sums step_score over a recorded latent/action trajectory. Demands an
// eval-mode env: training code paths cannot reach ground truth.
double ground_truth_return(const PomdpEnv& env, const std::vector<Tensor>& latents,
                           const std::vector<Tensor>& actions);

}  // namespace bmil
