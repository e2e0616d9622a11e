#pragma once

#include <deque>
#include <string>
#include <vector>

#include "core/env.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace bmil {

struct Trajectory {
  std::vector<Tensor> observations;
  std::vector<Tensor> actions;
  bool terminal = true;  // reached the environment's episode end

  int length() const { return static_cast<int>(observations.size()); }
};

// A contiguous (o, a) window inside one trajectory; the pairs before `start`
// are the warm-up prefix used to initialize beliefs from the episode start.
struct Window {
  const Trajectory* traj = nullptr;
  int start = 0;
  int len = 0;
};

// Fixed demonstration set M_E; immutable after construction.
class DemoBuffer {
 public:
  DemoBuffer() = default;
  explicit DemoBuffer(std::vector<Trajectory> trajs) : trajs_(std::move(trajs)) {}

  int size() const { return static_cast<int>(trajs_.size()); }
  const Trajectory& at(int i) const { return trajs_[static_cast<std::size_t>(i)]; }
  const std::vector<Trajectory>& trajectories() const { return trajs_; }

 private:
  std::vector<Trajectory> trajs_;
};

// Off-policy episode store R: ring buffer, oldest evicted first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity) : capacity_(capacity) {}

  void push(Trajectory t);
  int size() const { return static_cast<int>(trajs_.size()); }
  int capacity() const { return capacity_; }
  const Trajectory& at(int i) const { return trajs_[static_cast<std::size_t>(i)]; }

 private:
  int capacity_;
  std::deque<Trajectory> trajs_;
};

// Uniformly chosen trajectory (among those long enough), uniformly chosen
// valid start offset; never crosses an episode boundary.
Window fetch_window(const std::vector<Trajectory>& trajs, int c, Rng& rng);
Window fetch_window(const DemoBuffer& buffer, int c, Rng& rng);
Window fetch_window(const ReplayBuffer& buffer, int c, Rng& rng);

// Scripted full-state experts standing in for pre-trained controllers; they
// read the privileged latent, like experts trained on the underlying MDP.
Tensor expert_policy(const std::string& env_id, const Tensor& latent);

// Uniform-random policy over the env's action box (the scoring baseline).
Tensor random_policy(const PomdpEnv& env, Rng& rng);

struct DemoRecording {
  std::vector<Trajectory> trajectories;
  double mean_return = 0.0;  // ground-truth score over the recorded episodes
};

// Rolls out `n` expert episodes on an eval-mode env; observations stored are
// the masked POMDP observations, never latents.
DemoRecording record_demos(PomdpEnv& env, int n, Rng& rng);

// Demo file: magic "BMILDEMO", version u32, JSON header (u32 length + UTF-8)
// with env id and dims, count u32, then per trajectory: length u32,
// observations row-major, actions row-major, terminal u8. 64-bit LE floats.
void save_demos(const std::string& path, const std::string& env_id, int obs_dim, int act_dim,
                const std::vector<Trajectory>& trajs);

struct DemoFile {
  std::string env_id;
  int obs_dim = 0;
  int act_dim = 0;
  std::vector<Trajectory> trajectories;
};
DemoFile load_demos(const std::string& path);

}  // namespace bmil
