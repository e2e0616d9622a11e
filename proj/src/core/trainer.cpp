#include "core/trainer.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "core/adversarial.hpp"
#include "core/checkpoint.hpp"
#include "core/demos.hpp"
#include "core/env.hpp"
#include "core/optim.hpp"

namespace bmil {

namespace {

// ---- config plumbing --------------------------------------------------------

const std::vector<std::string>& mode_names() {
  static const std::vector<std::string> names = {
      "bmil", "bmil-noreg", "task-agnostic", "gail-ff", "gail-obstack",
      "bmil-encoding-space"};
  return names;
}

const std::vector<std::string>& ablation_names() {
  static const std::vector<std::string> names = {"none", "forward-only", "inverse-only",
                                                 "action-only"};
  return names;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
  for (const std::string& x : v)
    if (x == s) return true;
  return false;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

long parse_long(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long x = std::stol(v, &used);
    require(used == v.size(), "trailing characters");
    return x;
  } catch (const std::exception&) {
    fail("config key '{}': expected an integer, got '{}'", key, v);
  }
}

int parse_int(const std::string& key, const std::string& v) {
  return static_cast<int>(parse_long(key, v));
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long x = std::stoull(v, &used);
    require(used == v.size(), "trailing characters");
    return static_cast<std::uint64_t>(x);
  } catch (const std::exception&) {
    fail("config key '{}': expected a non-negative integer, got '{}'", key, v);
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    require(used == v.size(), "trailing characters");
    return x;
  } catch (const std::exception&) {
    fail("config key '{}': expected a number, got '{}'", key, v);
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail("config key '{}': expected a boolean, got '{}'", key, v);
}

std::vector<int> parse_offsets(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) fail("config key '{}': empty entry in '{}'", key, v);
    out.push_back(parse_int(key, item));
  }
  if (out.empty()) fail("config key '{}': expected a comma-separated list, got '{}'", key, v);
  return out;
}

std::string format_offsets(const std::vector<int>& offsets) {
  std::string out;
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (i > 0) out += ",";
    out += fmt::format("{}", offsets[i]);
  }
  return out;
}

struct KeySpec {
  const char* key;
  const char* doc;
  std::function<void(TrainConfig&, const std::string&)> apply;
  std::function<std::string(const TrainConfig&)> read;
};

const std::vector<KeySpec>& key_table() {
  using C = TrainConfig;
  auto str = [](std::string C::* f, const char* key, const char* doc) {
    return KeySpec{key, doc, [f](C& c, const std::string& v) { c.*f = v; },
                   [f](const C& c) { return c.*f; }};
  };
  auto i32 = [](int C::* f, const char* key, const char* doc) {
    return KeySpec{key, doc,
                   [f, key](C& c, const std::string& v) { c.*f = parse_int(key, v); },
                   [f](const C& c) { return fmt::format("{}", c.*f); }};
  };
  auto i64 = [](long C::* f, const char* key, const char* doc) {
    return KeySpec{key, doc,
                   [f, key](C& c, const std::string& v) { c.*f = parse_long(key, v); },
                   [f](const C& c) { return fmt::format("{}", c.*f); }};
  };
  auto f64 = [](double C::* f, const char* key, const char* doc) {
    return KeySpec{key, doc,
                   [f, key](C& c, const std::string& v) { c.*f = parse_double(key, v); },
                   [f](const C& c) { return fmt::format("{}", c.*f); }};
  };
  auto bol = [](bool C::* f, const char* key, const char* doc) {
    return KeySpec{key, doc,
                   [f, key](C& c, const std::string& v) { c.*f = parse_bool(key, v); },
                   [f](const C& c) { return c.*f ? "true" : "false"; }};
  };
  static const std::vector<KeySpec> table = {
      str(&C::env, "env",
          "environment id (masked-pendulum, pendulum-velonly, pendulum-full, "
          "pointmass-nav, pointmass-velonly, pointmass-full)"),
      str(&C::mode, "mode",
          "bmil | bmil-noreg | task-agnostic | gail-ff | gail-obstack | "
          "bmil-encoding-space"),
      str(&C::ablation, "ablation",
          "none | forward-only | inverse-only | action-only (zeroes the other "
          "regularizer weights)"),
      str(&C::demo_path, "demos", "demonstration file recorded by the demos command"),
      str(&C::out_dir, "out", "output directory for metrics.csv and the checkpoint"),
      KeySpec{"seed", "master seed; every random stream derives from it",
              [](C& c, const std::string& v) { c.seed = parse_u64("seed", v); },
              [](const C& c) { return fmt::format("{}", c.seed); }},
      i64(&C::total_steps, "total_steps", "environment-step budget for the run"),
      i32(&C::c, "rollout.c", "on-policy segment length per iteration"),
      i32(&C::window_len, "rollout.window",
          "sampled window length for belief updates; 0 means rollout.c + max offset"),
      i32(&C::bptt_prefix, "rollout.bptt_prefix",
          "warm-up steps kept on the tape before a window (truncated BPTT depth)"),
      i32(&C::disc_steps, "disc.steps", "discriminator updates per iteration"),
      i32(&C::disc_hidden, "disc.hidden", "discriminator hidden width"),
      bol(&C::disc_belief_only, "disc.belief_only",
          "diagnostic: the discriminator scores the belief alone, ignoring actions"),
      i32(&C::offpolicy_updates, "offpolicy.updates",
          "off-policy belief updates per iteration"),
      i32(&C::replay_capacity, "replay.capacity", "episodes kept in the replay buffer"),
      f64(&C::entropy_beta, "policy.entropy_beta", "entropy bonus weight"),
      bol(&C::adv_norm, "policy.adv_norm", "normalize advantages within each segment"),
      KeySpec{"reg.lambda1", "forward-prediction weight",
              [](C& c, const std::string& v) { c.reg.lambda1 = parse_double("reg.lambda1", v); },
              [](const C& c) { return fmt::format("{}", c.reg.lambda1); }},
      KeySpec{"reg.lambda2", "inverse-prediction weight",
              [](C& c, const std::string& v) { c.reg.lambda2 = parse_double("reg.lambda2", v); },
              [](const C& c) { return fmt::format("{}", c.reg.lambda2); }},
      KeySpec{"reg.lambda3", "action-prediction weight",
              [](C& c, const std::string& v) { c.reg.lambda3 = parse_double("reg.lambda3", v); },
              [](const C& c) { return fmt::format("{}", c.reg.lambda3); }},
      KeySpec{"reg.k", "comma-separated prediction offsets, e.g. 1,5",
              [](C& c, const std::string& v) { c.reg.offsets = parse_offsets("reg.k", v); },
              [](const C& c) { return format_offsets(c.reg.offsets); }},
      KeySpec{"gae.gamma", "discount factor",
              [](C& c, const std::string& v) { c.gae.gamma = parse_double("gae.gamma", v); },
              [](const C& c) { return fmt::format("{}", c.gae.gamma); }},
      KeySpec{"gae.lambda", "GAE exponential weight",
              [](C& c, const std::string& v) { c.gae.lambda = parse_double("gae.lambda", v); },
              [](const C& c) { return fmt::format("{}", c.gae.lambda); }},
      f64(&C::lr, "opt.lr", "RMSProp learning rate (decays linearly to zero)"),
      f64(&C::rms_alpha, "opt.alpha", "RMSProp smoothing constant"),
      f64(&C::rms_eps, "opt.eps", "RMSProp denominator epsilon"),
      bol(&C::phi_expert_path, "phi.expert_path",
          "belief imitation loss: expert log-D term"),
      bol(&C::phi_pg_path, "phi.pg_path",
          "belief imitation loss: score-function surrogate term"),
      bol(&C::phi_pathwise_path, "phi.pathwise_path",
          "belief imitation loss: pathwise log(1-D) term"),
      i32(&C::enc_dim, "net.enc_dim", "observation encoder output width"),
      i32(&C::gru_hidden, "net.gru_hidden", "belief (GRU hidden state) width"),
      i32(&C::belief_mlp_hidden, "net.mlp_hidden", "belief prediction-head hidden width"),
      i32(&C::act_enc_dim, "net.act_enc_dim", "action-sequence encoder output width"),
      i32(&C::critic_hidden, "net.critic_hidden", "critic hidden width"),
      i32(&C::obstack_frames, "obstack.frames",
          "gail-obstack: total observation frames stacked (current + previous)"),
      i64(&C::eval_interval, "eval.interval", "environment steps between metric rows"),
      i32(&C::eval_episodes, "eval.episodes", "deterministic episodes per evaluation"),
      bol(&C::log_wall_clock, "log.wall_clock",
          "log elapsed seconds per row (makes reruns byte-differ)"),
  };
  return table;
}

const KeySpec* find_key(const std::string& key) {
  for (const KeySpec& ks : key_table())
    if (key == ks.key) return &ks;
  return nullptr;
}

// ---- feature pipeline -------------------------------------------------------

// Policy/discriminator input per mode: the recurrent belief, the raw
// observation, or a stacked observation history. Holds the per-episode state;
// copying gives an independent pipe over the same modules.
struct FeaturePipe {
  BeliefModule* belief = nullptr;  // belief modes
  int stack_frames = 0;            // gail-obstack (total frames, > 1)
  int obs_dim = 0;
  int act_dim = 0;

  Tensor hidden;               // belief state
  std::deque<Tensor> history;  // previous observations, most recent last

  int dim() const {
    if (belief != nullptr) return belief->hidden_dim();
    if (stack_frames > 0) return obs_dim * stack_frames;
    return obs_dim;
  }

  void reset() {
    if (belief != nullptr) hidden = belief->initial_belief();
    history.clear();
  }

  // Feature of the step that sees `o` after having taken `a_prev` (zeros at
  // the episode start), without committing state.
  Tensor peek(const Tensor& o, const Tensor& a_prev) const {
    if (belief != nullptr) {
      Tensor out;
      belief->step_numeric(hidden, o, a_prev, out);
      return out;
    }
    if (stack_frames > 0) {
      // Oldest frame first; missing history is padded with the episode's
      // first observation (the current one when history is empty).
      Tensor out = Tensor::zeros({obs_dim * stack_frames});
      const int past = stack_frames - 1;
      const int have = static_cast<int>(history.size());
      for (int f = 0; f < past; ++f) {
        const Tensor& src = (f < past - have) ? (have > 0 ? history.front() : o)
                                              : history[static_cast<std::size_t>(f - (past - have))];
        for (int i = 0; i < obs_dim; ++i) out[f * obs_dim + i] = src[i];
      }
      for (int i = 0; i < obs_dim; ++i) out[past * obs_dim + i] = o[i];
      return out;
    }
    return o;
  }

  Tensor step(const Tensor& o, const Tensor& a_prev) {
    Tensor f = peek(o, a_prev);
    if (belief != nullptr) hidden = f;
    if (stack_frames > 1) {
      history.push_back(o);
      while (static_cast<int>(history.size()) > stack_frames - 1) history.pop_front();
    }
    return f;
  }

  // Features of rows [w.start, w.start + w.len) of a stored trajectory,
  // replayed from the episode start with fresh state. Matches what step()
  // produced when the rows were generated, and (for beliefs) what
  // encode_window computes on the tape.
  std::vector<Tensor> window_features(const Window& w) const {
    FeaturePipe pipe = *this;
    pipe.reset();
    std::vector<Tensor> out;
    out.reserve(static_cast<std::size_t>(w.len));
    const Tensor zero = Tensor::zeros({act_dim});
    for (int row = 0; row < w.start + w.len; ++row) {
      const Tensor& o = w.traj->observations[static_cast<std::size_t>(row)];
      const Tensor& a_prev =
          row == 0 ? zero : w.traj->actions[static_cast<std::size_t>(row - 1)];
      Tensor f = pipe.step(o, a_prev);
      if (row >= w.start) out.push_back(std::move(f));
    }
    return out;
  }
};

// ---- module stack -----------------------------------------------------------

struct Stack {
  std::unique_ptr<BeliefModule> belief;
  std::unique_ptr<GaussianHead> head;
  std::unique_ptr<Mlp> critic;
  std::unique_ptr<Discriminator> disc;
  int obs_dim = 0, act_dim = 0, feature_dim = 0;

  std::vector<Param*> all_params() const {
    std::vector<Param*> out;
    if (belief) for (Param* p : belief->params()) out.push_back(p);
    for (Param* p : head->params()) out.push_back(p);
    for (Param* p : critic->params()) out.push_back(p);
    for (Param* p : disc->params()) out.push_back(p);
    return out;
  }

  FeaturePipe make_pipe(const TrainConfig& cfg) const {
    FeaturePipe pipe;
    pipe.belief = belief.get();
    pipe.stack_frames = cfg.mode == "gail-obstack" ? cfg.obstack_frames : 0;
    pipe.obs_dim = obs_dim;
    pipe.act_dim = act_dim;
    pipe.reset();
    return pipe;
  }
};

// Construction order is fixed so that runs differing only in loss wiring
// start from bitwise-identical parameters.
Stack build_stack(const TrainConfig& cfg, int obs_dim, int act_dim, Rng& rng) {
  Stack s;
  s.obs_dim = obs_dim;
  s.act_dim = act_dim;
  if (cfg.uses_belief()) {
    const int max_k = std::max(1, cfg.reg.max_offset());
    s.belief = std::make_unique<BeliefModule>(
        "belief", obs_dim, act_dim, max_k, rng, cfg.mode == "bmil-encoding-space",
        cfg.enc_dim, cfg.gru_hidden, cfg.belief_mlp_hidden, cfg.act_enc_dim);
    s.feature_dim = cfg.gru_hidden;
  } else if (cfg.mode == "gail-obstack") {
    s.feature_dim = obs_dim * cfg.obstack_frames;
  } else {
    s.feature_dim = obs_dim;
  }
  s.head = std::make_unique<GaussianHead>("pi", s.feature_dim, act_dim, rng);
  s.critic = std::make_unique<Mlp>("critic", s.feature_dim, 1, rng, cfg.critic_hidden);
  s.disc = std::make_unique<Discriminator>("disc", s.feature_dim, act_dim, rng,
                                           cfg.disc_hidden, cfg.disc_belief_only);
  return s;
}

nlohmann::json stack_header(const TrainConfig& cfg, const Stack& s) {
  return nlohmann::json{{"env", cfg.env},
                        {"mode", cfg.mode},
                        {"obs_dim", s.obs_dim},
                        {"act_dim", s.act_dim},
                        {"enc_dim", cfg.enc_dim},
                        {"gru_hidden", cfg.gru_hidden},
                        {"mlp_hidden", cfg.belief_mlp_hidden},
                        {"act_enc_dim", cfg.act_enc_dim},
                        {"disc_hidden", cfg.disc_hidden},
                        {"disc_belief_only", cfg.disc_belief_only},
                        {"critic_hidden", cfg.critic_hidden},
                        {"obstack_frames", cfg.obstack_frames},
                        {"offsets", cfg.reg.offsets},
                        {"seed", cfg.seed}};
}

// ---- evaluation -------------------------------------------------------------

EvalStats run_policy_eval(PomdpEnv& env, const FeaturePipe& proto, const GaussianHead& head,
                          int episodes, Rng& rng) {
  require(env.eval_mode(), "evaluation needs an eval-mode environment");
  std::vector<double> returns;
  returns.reserve(static_cast<std::size_t>(episodes));
  for (int ep = 0; ep < episodes; ++ep) {
    FeaturePipe pipe = proto;
    pipe.reset();
    Tensor obs = env.reset(rng);
    Tensor a_prev = Tensor::zeros({env.action_dim()});
    double total = 0.0;
    bool done = false;
    while (!done) {
      const Tensor latent = env.latent();
      const Tensor feat = pipe.step(obs, a_prev);
      const Tensor act = head.mean_action(feat);
      total += env.step_score(latent, act);
      auto [next_obs, d] = env.step(act);
      obs = next_obs;
      a_prev = act;
      done = d;
    }
    returns.push_back(total);
  }
  EvalStats out;
  out.episodes = episodes;
  for (double r : returns) out.mean += r;
  out.mean /= static_cast<double>(episodes);
  if (episodes > 1) {
    double ss = 0.0;
    for (double r : returns) ss += (r - out.mean) * (r - out.mean);
    out.stdev = std::sqrt(ss / static_cast<double>(episodes - 1));
  }
  return out;
}

// ---- misc -------------------------------------------------------------------

struct Mean {
  double sum = 0.0;
  long n = 0;
  void add(double v) { sum += v; ++n; }
  double value() const { return n > 0 ? sum / static_cast<double>(n) : 0.0; }
  void reset() { sum = 0.0; n = 0; }
};

void normalize_advantages(std::vector<double>& adv) {
  const double n = static_cast<double>(adv.size());
  double mean = 0.0;
  for (double a : adv) mean += a;
  mean /= n;
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / n);
  for (double& a : adv) a = (a - mean) / (sd + 1e-8);
}

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kEnvStream = 2;
constexpr std::uint64_t kPolicyStream = 3;
constexpr std::uint64_t kFetchStream = 4;
constexpr std::uint64_t kEvalStreamBase = 1000;

}  // namespace

// ---- TrainConfig ------------------------------------------------------------

void TrainConfig::set(const std::string& key, const std::string& value) {
  const KeySpec* ks = find_key(key);
  if (ks == nullptr) fail("unknown config key '{}' (see --help for the full list)", key);
  ks->apply(*this, value);
}

bool TrainConfig::uses_belief() const {
  return mode == "bmil" || mode == "bmil-noreg" || mode == "task-agnostic" ||
         mode == "bmil-encoding-space";
}

RegWeights TrainConfig::effective_reg() const {
  RegWeights rw = reg;
  if (mode == "bmil-noreg") {
    rw.lambda1 = rw.lambda2 = rw.lambda3 = 0.0;
  }
  if (ablation == "forward-only") rw.lambda2 = rw.lambda3 = 0.0;
  if (ablation == "inverse-only") rw.lambda1 = rw.lambda3 = 0.0;
  if (ablation == "action-only") rw.lambda1 = rw.lambda2 = 0.0;
  return rw;
}

int TrainConfig::effective_window() const {
  if (window_len > 0) return window_len;
  return c + reg.max_offset();
}

void TrainConfig::validate() const {
  require(contains(mode_names(), mode), "unknown mode '{}'", mode);
  require(contains(ablation_names(), ablation), "unknown ablation '{}'", ablation);
  if (ablation != "none")
    require(mode == "bmil" || mode == "bmil-encoding-space",
            "ablation '{}' only applies to bmil modes, not '{}'", ablation, mode);
  require(c >= 1, "rollout.c must be positive, got {}", c);
  require(total_steps >= c, "total_steps ({}) must be at least rollout.c ({})",
          total_steps, c);
  require(window_len >= 0, "rollout.window must be non-negative, got {}", window_len);
  require(bptt_prefix >= 0, "rollout.bptt_prefix must be non-negative, got {}",
          bptt_prefix);
  require(disc_steps >= 1, "disc.steps must be positive, got {}", disc_steps);
  require(offpolicy_updates >= 0, "offpolicy.updates must be non-negative, got {}",
          offpolicy_updates);
  require(replay_capacity >= 1, "replay.capacity must be positive, got {}",
          replay_capacity);
  reg.validate();
  gae.validate();
  require(entropy_beta >= 0.0, "policy.entropy_beta must be non-negative");
  require(lr >= 0.0, "opt.lr must be non-negative");
  require(rms_alpha > 0.0 && rms_alpha < 1.0, "opt.alpha must be in (0, 1)");
  require(rms_eps > 0.0, "opt.eps must be positive");
  require(enc_dim >= 1 && gru_hidden >= 1 && belief_mlp_hidden >= 1 && act_enc_dim >= 1 &&
              disc_hidden >= 1 && critic_hidden >= 1,
          "module widths must be positive");
  require(obstack_frames >= 1, "obstack.frames must be positive, got {}", obstack_frames);
  require(eval_interval >= 1, "eval.interval must be positive, got {}", eval_interval);
  require(eval_episodes >= 1, "eval.episodes must be positive, got {}", eval_episodes);
  if (uses_belief()) {
    const int w = effective_window();
    require(w >= 2, "window length {} is too short for belief training", w);
    require(w >= reg.max_offset() + 1,
            "window length {} cannot fit prediction offset {}", w, reg.max_offset());
  }
}

std::string TrainConfig::dump() const {
  std::string out;
  for (const KeySpec& ks : key_table())
    out += fmt::format("{} = {}\n", ks.key, ks.read(*this));
  return out;
}

const std::vector<std::pair<std::string, std::string>>& TrainConfig::key_docs() {
  static const std::vector<std::pair<std::string, std::string>> docs = [] {
    std::vector<std::pair<std::string, std::string>> d;
    for (const KeySpec& ks : key_table()) d.emplace_back(ks.key, ks.doc);
    return d;
  }();
  return docs;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open config file '{}'", path);
  TrainConfig cfg;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      require(line.back() == ']', "{}:{}: unterminated section header", path, lineno);
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    require(eq != std::string::npos, "{}:{}: expected key = value", path, lineno);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    require(!key.empty(), "{}:{}: empty key", path, lineno);
    try {
      cfg.set(section.empty() ? key : section + "." + key, value);
    } catch (const Error& e) {
      fail("{}:{}: {}", path, lineno, e.what());
    }
  }
  return cfg;
}

void apply_override(TrainConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos, "override '{}' is not of the form key=value",
          assignment);
  cfg.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

// ---- metrics ----------------------------------------------------------------

std::string metrics_header(const std::vector<int>& offsets) {
  std::string out =
      "iteration,env_steps,eval_mean,eval_std,policy_loss,disc_loss,"
      "imitation_loss,ar_loss";
  for (int k : offsets)
    out += fmt::format(",forward_k{0},inverse_k{0},action_k{0}", k);
  out += ",shaped_reward,wall_clock_s";
  return out;
}

std::string metrics_line(const MetricsRow& row) {
  std::string out = fmt::format("{},{},{},{},{},{},{},{}", row.iteration, row.env_steps,
                                row.eval_mean, row.eval_std, row.policy_loss,
                                row.disc_loss, row.imitation_loss, row.ar_loss);
  for (std::size_t i = 0; i < row.forward_k.size(); ++i)
    out += fmt::format(",{},{},{}", row.forward_k[i], row.inverse_k[i], row.action_k[i]);
  out += fmt::format(",{},{}", row.shaped_reward, row.wall_clock_s);
  return out;
}

// ---- the training loop ------------------------------------------------------

namespace {

// One contiguous span of the current segment inside its episode; keeps the
// episode alive so belief re-encoding can replay it during the updates.
struct SegmentPiece {
  std::shared_ptr<Trajectory> traj;
  int start = 0;
  int len = 0;
};

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg)
      : cfg_(cfg),
        reg_(cfg.effective_reg()),
        window_len_(cfg.effective_window()),
        master_(cfg.seed),
        rng_env_(master_.split(kEnvStream)),
        rng_policy_(master_.split(kPolicyStream)),
        rng_fetch_(master_.split(kFetchStream)),
        replay_(cfg.replay_capacity),
        started_(std::chrono::steady_clock::now()) {
    cfg_.validate();
    require(!cfg_.demo_path.empty(), "train needs a demonstration file (demos=...)");

    env_ = make_env(cfg_.env, /*eval_mode=*/false);
    eval_env_ = make_env(cfg_.env, /*eval_mode=*/true);
    require(env_->action_dim() > 0, "training supports continuous-action environments");

    DemoFile df = load_demos(cfg_.demo_path);
    require(df.env_id == env_->id(),
            "demo file '{}' was recorded on '{}' but the run is on '{}'",
            cfg_.demo_path, df.env_id, env_->id());
    require(df.obs_dim == env_->observation_dim() && df.act_dim == env_->action_dim(),
            "demo dims ({}, {}) do not match the environment ({}, {})", df.obs_dim,
            df.act_dim, env_->observation_dim(), env_->action_dim());
    demos_ = DemoBuffer(std::move(df.trajectories));
    require(demos_.size() > 0, "demo file '{}' holds no trajectories", cfg_.demo_path);
    int longest = 0;
    for (const Trajectory& tr : demos_.trajectories())
      longest = std::max(longest, tr.length());
    const int needed = cfg_.uses_belief() ? std::max(window_len_, cfg_.c) : cfg_.c;
    require(longest >= needed,
            "demos are too short: longest episode has {} steps but windows of {} "
            "are needed",
            longest, needed);

    Rng rng_init = master_.split(kInitStream);
    stack_ = build_stack(cfg_, env_->observation_dim(), env_->action_dim(), rng_init);
    pipe_ = stack_.make_pipe(cfg_);

    const long iters = (cfg_.total_steps + cfg_.c - 1) / cfg_.c;
    opt_policy_ = std::make_unique<RmsProp>(stack_.head->params(), cfg_.lr,
                                            cfg_.rms_alpha, cfg_.rms_eps);
    opt_policy_->set_linear_decay(iters);
    opt_critic_ = std::make_unique<RmsProp>(stack_.critic->params(), cfg_.lr,
                                            cfg_.rms_alpha, cfg_.rms_eps);
    opt_critic_->set_linear_decay(iters);
    opt_disc_ = std::make_unique<RmsProp>(stack_.disc->params(), cfg_.lr, cfg_.rms_alpha,
                                          cfg_.rms_eps);
    opt_disc_->set_linear_decay(iters * cfg_.disc_steps);
    if (stack_.belief) {
      opt_belief_ = std::make_unique<RmsProp>(stack_.belief->params(), cfg_.lr,
                                              cfg_.rms_alpha, cfg_.rms_eps);
      opt_belief_->set_linear_decay(iters * belief_steps_per_iter());
    }

    m_fwd_.resize(cfg_.reg.offsets.size());
    m_inv_.resize(cfg_.reg.offsets.size());
    m_act_.resize(cfg_.reg.offsets.size());
  }

  TrainResult run() {
    std::filesystem::create_directories(cfg_.out_dir);
    const std::string metrics_path =
        (std::filesystem::path(cfg_.out_dir) / "metrics.csv").string();
    const std::string ckpt_path =
        (std::filesystem::path(cfg_.out_dir) / "checkpoint.bmilckpt").string();
    csv_.open(metrics_path, std::ios::binary | std::ios::trunc);
    require(csv_.good(), "cannot write metrics file '{}'", metrics_path);
    csv_ << metrics_header(cfg_.reg.offsets) << '\n';

    long next_eval = 0;
    while (env_steps_ < cfg_.total_steps) {
      if (env_steps_ >= next_eval) {
        write_row();
        next_eval += cfg_.eval_interval;
      }
      iterate();
    }
    write_row();
    csv_.close();

    nlohmann::json header = stack_header(cfg_, stack_);
    header["env_steps"] = env_steps_;
    header["iterations"] = iteration_;
    save_checkpoint(ckpt_path, stack_.all_params(), header.dump());

    TrainResult out;
    out.metrics_path = metrics_path;
    out.checkpoint_path = ckpt_path;
    out.final_eval = last_eval_;
    out.env_steps = env_steps_;
    out.iterations = iteration_;
    return out;
  }

 private:
  bool uses_belief() const { return stack_.belief != nullptr || cfg_.uses_belief(); }
  bool phi_imitation() const { return cfg_.uses_belief() && cfg_.mode != "task-agnostic"; }
  bool reg_active() const {
    return !reg_.offsets.empty() &&
           (reg_.lambda1 > 0.0 || reg_.lambda2 > 0.0 || reg_.lambda3 > 0.0);
  }
  bool offpolicy_ar() const { return cfg_.mode == "task-agnostic"; }
  bool offpolicy_enabled() const {
    if (!cfg_.uses_belief() || cfg_.offpolicy_updates == 0) return false;
    return offpolicy_ar() || (phi_imitation() && reg_active());
  }
  long belief_steps_per_iter() const {
    long n = 0;
    if (phi_imitation()) n += 1;
    if (offpolicy_enabled()) n += cfg_.offpolicy_updates;
    return std::max<long>(n, 1);
  }

  void check(double v, const char* what) {
    if (!std::isfinite(v))
      abort_numeric(fmt::format("{} is not finite ({}) at iteration {}, env step {}",
                                what, v, iteration_, env_steps_));
  }

  [[noreturn]] void abort_numeric(const std::string& msg) {
    const std::string dump_path =
        (std::filesystem::path(cfg_.out_dir) / "abort.txt").string();
    std::ofstream dump(dump_path, std::ios::trunc);
    if (dump.good()) {
      dump << msg << "\n\nrunning means since the last metrics row:\n"
           << fmt::format("policy_loss {}\ndisc_loss {}\nimitation_loss {}\n"
                          "ar_loss {}\nshaped_reward {}\n",
                          m_policy_.value(), m_disc_.value(), m_im_.value(),
                          m_ar_.value(), m_reward_.value())
           << "\nconfig:\n"
           << cfg_.dump();
    }
    throw NumericalAbort(fmt::format("{} (diagnostics: {})", msg, dump_path));
  }

  void begin_episode() {
    obs_ = env_->reset(rng_env_);
    pipe_.reset();
    prev_action_ = Tensor::zeros({env_->action_dim()});
    episode_ = std::make_shared<Trajectory>();
    episode_->terminal = false;
    episode_active_ = true;
  }

  void collect_segment(RolloutBatch& batch, std::vector<SegmentPiece>& pieces) {
    batch.steps.reserve(static_cast<std::size_t>(cfg_.c));
    for (int i = 0; i < cfg_.c; ++i) {
      if (!episode_active_) begin_episode();
      const Tensor feat = pipe_.step(obs_, prev_action_);
      const Tensor act = stack_.head->sample(feat, rng_policy_);
      const double reward = shaped_reward(*stack_.disc, feat, act);
      const double value = stack_.critic->forward_numeric(feat).value();
      check(reward, "shaped reward");
      check(value, "critic value");

      const int row = episode_->length();
      episode_->observations.push_back(obs_);
      episode_->actions.push_back(act);
      if (!pieces.empty() && pieces.back().traj == episode_ &&
          pieces.back().start + pieces.back().len == row) {
        ++pieces.back().len;
      } else {
        pieces.push_back({episode_, row, 1});
      }

      auto [next_obs, done] = env_->step(act);
      batch.steps.push_back({feat, act, reward, value, done});
      ++env_steps_;
      m_reward_.add(reward);
      if (done) {
        episode_->terminal = true;
        replay_.push(*episode_);
        episode_active_ = false;
      } else {
        obs_ = next_obs;
        prev_action_ = act;
      }
    }
    if (!batch.steps.back().done) {
      const Tensor next_feat = pipe_.peek(obs_, prev_action_);
      batch.bootstrap_value = stack_.critic->forward_numeric(next_feat).value();
      check(batch.bootstrap_value, "bootstrap value");
    }
  }

  void theta_update(const RolloutBatch& batch, const GaeResult& g) {
    {
      Tape t;
      const Var loss = policy_loss(t, *stack_.head, batch, g.advantages,
                                   cfg_.entropy_beta);
      check(loss.value().value(), "policy loss");
      m_policy_.add(loss.value().value());
      opt_policy_->zero_grads();
      t.backward(loss);
      opt_policy_->step();
    }
    {
      Tape t;
      const Var loss = critic_loss(t, *stack_.critic, batch, g.returns);
      check(loss.value().value(), "critic loss");
      opt_critic_->zero_grads();
      t.backward(loss);
      opt_critic_->step();
    }
  }

  void omega_update(const RolloutBatch& batch) {
    for (int s = 0; s < cfg_.disc_steps; ++s) {
      const Window w = fetch_window(demos_, cfg_.c, rng_fetch_);
      const std::vector<Tensor> efeat = pipe_.window_features(w);
      Tape t;
      std::vector<BeliefAction> expert, policy;
      expert.reserve(static_cast<std::size_t>(w.len));
      for (int i = 0; i < w.len; ++i)
        expert.push_back({t.constant(efeat[static_cast<std::size_t>(i)]),
                          w.traj->actions[static_cast<std::size_t>(w.start + i)]});
      policy.reserve(batch.steps.size());
      for (const RolloutStep& st : batch.steps)
        policy.push_back({t.constant(st.belief), st.action});
      const Var loss = disc_loss(t, *stack_.disc, expert, policy);
      check(loss.value().value(), "discriminator loss");
      m_disc_.add(loss.value().value());
      opt_disc_->zero_grads();
      t.backward(loss);
      opt_disc_->step();
    }
  }

  void phi_update(const RolloutBatch& batch, const std::vector<SegmentPiece>& pieces,
                  const GaeResult& g) {
    Tape t;
    const Window we = fetch_window(demos_, window_len_, rng_fetch_);
    const std::vector<Var> eb = stack_.belief->encode_window(t, we, cfg_.bptt_prefix);
    std::vector<BeliefAction> expert;
    expert.reserve(static_cast<std::size_t>(we.len));
    for (int i = 0; i < we.len; ++i)
      expert.push_back(
          {eb[static_cast<std::size_t>(i)],
           we.traj->actions[static_cast<std::size_t>(we.start + i)]});

    std::vector<BeliefAction> on_policy;
    on_policy.reserve(batch.steps.size());
    for (const SegmentPiece& p : pieces) {
      const Window wp{p.traj.get(), p.start, p.len};
      const std::vector<Var> pb = stack_.belief->encode_window(t, wp, cfg_.bptt_prefix);
      for (int j = 0; j < p.len; ++j)
        on_policy.push_back({pb[static_cast<std::size_t>(j)],
                             p.traj->actions[static_cast<std::size_t>(p.start + j)]});
    }
    require(on_policy.size() == batch.steps.size(),
            "segment pieces disagree with the rollout ({} vs {})", on_policy.size(),
            batch.steps.size());

    // q_hat estimates the cost-to-go of log(1-D); the GAE advantages estimate
    // the shaped reward -log(1-D), so they enter negated.
    std::vector<double> q_hat(g.advantages.size());
    for (std::size_t i = 0; i < q_hat.size(); ++i) q_hat[i] = -g.advantages[i];

    const PhiPaths paths{cfg_.phi_expert_path, cfg_.phi_pg_path, cfg_.phi_pathwise_path};
    const Var lim =
        imitation_loss_phi(t, *stack_.disc, *stack_.head, expert, on_policy, q_hat, paths);
    RegReport rep;
    const Var total = stack_.belief->loss_belief_total(t, eb, we, reg_, lim, &rep);
    check(total.value().value(), "belief loss");
    m_im_.add(lim.value().value());
    add_report(rep);
    opt_belief_->zero_grads();
    t.backward(total);
    opt_belief_->step();
  }

  void offpolicy_phase() {
    for (int n = 0; n < cfg_.offpolicy_updates; ++n) {
      if (!replay_ready_) {
        for (int i = 0; i < replay_.size(); ++i) {
          if (replay_.at(i).length() >= window_len_) {
            replay_ready_ = true;
            break;
          }
        }
        if (!replay_ready_) return;
      }
      const Window w = fetch_window(replay_, window_len_, rng_fetch_);
      Tape t;
      const std::vector<Var> rb = stack_.belief->encode_window(t, w, cfg_.bptt_prefix);
      if (offpolicy_ar()) {
        const Var loss = stack_.belief->loss_ar(t, rb, w);
        check(loss.value().value(), "autoregressive belief loss");
        m_ar_.add(loss.value().value());
        opt_belief_->zero_grads();
        t.backward(loss);
        opt_belief_->step();
      } else {
        RegReport rep;
        const Var loss = stack_.belief->loss_regularizers(t, rb, w, reg_, &rep);
        check(loss.value().value(), "off-policy belief loss");
        add_report(rep);
        opt_belief_->zero_grads();
        t.backward(loss);
        opt_belief_->step();
      }
    }
  }

  void iterate() {
    RolloutBatch batch;
    std::vector<SegmentPiece> pieces;
    collect_segment(batch, pieces);

    GaeResult g = gae_advantages(batch, cfg_.gae);
    if (cfg_.adv_norm) normalize_advantages(g.advantages);

    theta_update(batch, g);
    omega_update(batch);
    if (phi_imitation()) phi_update(batch, pieces, g);
    if (offpolicy_enabled()) offpolicy_phase();

    ++iteration_;
  }

  void add_report(const RegReport& rep) {
    for (std::size_t i = 0; i < rep.forward.size() && i < m_fwd_.size(); ++i) {
      m_fwd_[i].add(rep.forward[i]);
      m_inv_[i].add(rep.inverse[i]);
      m_act_[i].add(rep.action[i]);
    }
  }

  void write_row() {
    Rng rng_eval = master_.split(kEvalStreamBase + static_cast<std::uint64_t>(eval_runs_));
    ++eval_runs_;
    const EvalStats ev =
        run_policy_eval(*eval_env_, pipe_, *stack_.head, cfg_.eval_episodes, rng_eval);
    last_eval_ = ev;

    MetricsRow row;
    row.iteration = iteration_;
    row.env_steps = env_steps_;
    row.eval_mean = ev.mean;
    row.eval_std = ev.stdev;
    row.policy_loss = m_policy_.value();
    row.disc_loss = m_disc_.value();
    row.imitation_loss = m_im_.value();
    row.ar_loss = m_ar_.value();
    for (const Mean& m : m_fwd_) row.forward_k.push_back(m.value());
    for (const Mean& m : m_inv_) row.inverse_k.push_back(m.value());
    for (const Mean& m : m_act_) row.action_k.push_back(m.value());
    row.shaped_reward = m_reward_.value();
    if (cfg_.log_wall_clock) {
      const auto dt = std::chrono::steady_clock::now() - started_;
      row.wall_clock_s = std::chrono::duration<double>(dt).count();
    }
    csv_ << metrics_line(row) << '\n';
    csv_.flush();
    require(csv_.good(), "writing the metrics file failed");

    fmt::print("iter {:>8}  steps {:>8}  eval {:.2f} +- {:.2f}\n", iteration_, env_steps_,
               ev.mean, ev.stdev);
    std::fflush(stdout);

    m_policy_.reset();
    m_disc_.reset();
    m_im_.reset();
    m_ar_.reset();
    m_reward_.reset();
    for (Mean& m : m_fwd_) m.reset();
    for (Mean& m : m_inv_) m.reset();
    for (Mean& m : m_act_) m.reset();
  }

  TrainConfig cfg_;
  RegWeights reg_;
  int window_len_;
  Rng master_;
  Rng rng_env_, rng_policy_, rng_fetch_;

  std::unique_ptr<PomdpEnv> env_, eval_env_;
  DemoBuffer demos_;
  ReplayBuffer replay_;
  Stack stack_;
  FeaturePipe pipe_;
  std::unique_ptr<RmsProp> opt_policy_, opt_critic_, opt_disc_, opt_belief_;

  // live episode
  std::shared_ptr<Trajectory> episode_;
  Tensor obs_, prev_action_;
  bool episode_active_ = false;
  bool replay_ready_ = false;

  long env_steps_ = 0;
  long iteration_ = 0;
  long eval_runs_ = 0;
  EvalStats last_eval_;
  std::ofstream csv_;
  std::chrono::steady_clock::time_point started_;

  Mean m_policy_, m_disc_, m_im_, m_ar_, m_reward_;
  std::vector<Mean> m_fwd_, m_inv_, m_act_;
};

}  // namespace

TrainResult train(const TrainConfig& cfg) {
  Trainer trainer(cfg);
  return trainer.run();
}

EvalStats evaluate_checkpoint(const std::string& checkpoint_path, int episodes,
                              std::uint64_t seed) {
  require(episodes >= 1, "evaluation needs at least one episode");
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  TrainConfig cfg;
  try {
    const nlohmann::json h = nlohmann::json::parse(ckpt.header_json);
    cfg.env = h.at("env").get<std::string>();
    cfg.mode = h.at("mode").get<std::string>();
    cfg.enc_dim = h.at("enc_dim").get<int>();
    cfg.gru_hidden = h.at("gru_hidden").get<int>();
    cfg.belief_mlp_hidden = h.at("mlp_hidden").get<int>();
    cfg.act_enc_dim = h.at("act_enc_dim").get<int>();
    cfg.disc_hidden = h.at("disc_hidden").get<int>();
    cfg.disc_belief_only = h.at("disc_belief_only").get<bool>();
    cfg.critic_hidden = h.at("critic_hidden").get<int>();
    cfg.obstack_frames = h.at("obstack_frames").get<int>();
    cfg.reg.offsets = h.at("offsets").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    fail("bad checkpoint header in '{}': {}", checkpoint_path, e.what());
  }
  auto env = make_env(cfg.env, /*eval_mode=*/true);
  Rng rng_init(0);  // values are overwritten by the checkpoint
  Stack stack = build_stack(cfg, env->observation_dim(), env->action_dim(), rng_init);
  apply_checkpoint(ckpt, stack.all_params());
  const FeaturePipe pipe = stack.make_pipe(cfg);
  Rng rng_eval = Rng(seed).split(kEvalStreamBase);
  return run_policy_eval(*env, pipe, *stack.head, episodes, rng_eval);
}

}  // namespace bmil
