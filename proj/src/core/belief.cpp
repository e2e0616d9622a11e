#include "core/belief.hpp"

#include <algorithm>

#include "core/error.hpp"

namespace bmil {

int RegWeights::max_offset() const {
  int m = 0;
  for (int k : offsets) m = std::max(m, k);
  return m;
}

void RegWeights::validate() const {
  require(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda3 >= 0.0,
          "regularizer weights must be nonnegative, got ({}, {}, {})", lambda1, lambda2,
          lambda3);
  for (int k : offsets) require(k >= 1, "regularizer offset must be positive, got {}", k);
}

BeliefModule::BeliefModule(const std::string& name, int obs_dim, int act_dim, int max_k,
                           Rng& rng, bool encoding_space, int enc_dim, int hidden,
                           int mlp_hidden, int act_enc_dim)
    : obs_dim_(obs_dim),
      act_dim_(act_dim),
      enc_dim_(enc_dim),
      max_k_(max_k),
      encoding_space_(encoding_space),
      enc_(name + ".enc", obs_dim, enc_dim, rng),
      gru_(name + ".gru", enc_dim + act_dim, hidden, rng),
      g_ar_(name + ".g_ar", hidden + act_dim, obs_dim, rng, mlp_hidden),
      g_f_(name + ".g_f", hidden + act_enc_dim, encoding_space ? enc_dim : obs_dim, rng,
           mlp_hidden),
      g_i_(name + ".g_i", hidden + act_enc_dim, encoding_space ? enc_dim : obs_dim, rng,
           mlp_hidden),
      g_a_(name + ".g_a", hidden + enc_dim, max_k * act_dim, rng, mlp_hidden),
      past_actions_(name + ".past_actions", act_dim, max_k, act_enc_dim, rng),
      future_actions_(name + ".future_actions", act_dim, max_k, act_enc_dim, rng) {
  require(obs_dim >= 1 && act_dim >= 1, "belief module needs positive obs/act dims");
  require(max_k >= 1, "belief module needs max_k >= 1, got {}", max_k);
}

Var BeliefModule::encode_obs(Tape& t, Var o) { return tanh(enc_.forward(t, o)); }

Var BeliefModule::step(Tape& t, Var b_prev, Var o, Var a_prev) {
  Var x = concat({encode_obs(t, o), a_prev});
  return gru_.step(t, b_prev, x);
}

std::vector<Var> BeliefModule::encode_sequence(Tape& t, const std::vector<Tensor>& obs,
                                               const std::vector<Tensor>& prev_actions,
                                               const Tensor& h0) {
  require(!obs.empty(), "encode_sequence: empty observation stream");
  require(obs.size() == prev_actions.size(),
          "encode_sequence: {} observations vs {} previous actions", obs.size(),
          prev_actions.size());
  require(h0.numel() == gru_.hidden_size(), "encode_sequence: h0 width {} want {}",
          h0.numel(), gru_.hidden_size());
  std::vector<Var> beliefs;
  beliefs.reserve(obs.size());
  Var h = t.constant(h0);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    require(obs[i].numel() == obs_dim_, "encode_sequence: obs[{}] width {} want {}", i,
            obs[i].numel(), obs_dim_);
    require(prev_actions[i].numel() == act_dim_,
            "encode_sequence: prev_actions[{}] width {} want {}", i,
            prev_actions[i].numel(), act_dim_);
    h = step(t, h, t.constant(obs[i]), t.constant(prev_actions[i]));
    beliefs.push_back(h);
  }
  return beliefs;
}

namespace {

void check_window(const Window& w) {
  require(w.traj != nullptr, "window has no trajectory");
  require(w.len >= 1 && w.start >= 0 && w.start + w.len <= w.traj->length(),
          "window [{}, {}) outside trajectory of length {}", w.start, w.start + w.len,
          w.traj ? w.traj->length() : 0);
}

}  // namespace

std::vector<Var> BeliefModule::encode_window(Tape& t, const Window& w, int graph_prefix) {
  check_window(w);
  const int end = w.start + w.len;
  const int graph_from =
      (graph_prefix < 0) ? 0 : std::max(0, w.start - graph_prefix);

  Tensor h = initial_belief();
  Tensor a_prev = Tensor::zeros({act_dim_});
  for (int i = 0; i < graph_from; ++i) {
    Tensor next;
    step_numeric(h, w.traj->observations[static_cast<std::size_t>(i)], a_prev, next);
    h = std::move(next);
    a_prev = w.traj->actions[static_cast<std::size_t>(i)];
  }

  std::vector<Tensor> obs(w.traj->observations.begin() + graph_from,
                          w.traj->observations.begin() + end);
  std::vector<Tensor> prev;
  prev.reserve(static_cast<std::size_t>(end - graph_from));
  // The action before the stream's first row: zero at an episode start,
  // otherwise the last warm-up action.
  prev.push_back(a_prev);
  for (int i = graph_from + 1; i < end; ++i)
    prev.push_back(w.traj->actions[static_cast<std::size_t>(i - 1)]);
  std::vector<Var> all = encode_sequence(t, obs, prev, h);
  return {all.begin() + (w.start - graph_from), all.end()};
}

void BeliefModule::step_numeric(const Tensor& b_prev, const Tensor& o, const Tensor& a_prev,
                                Tensor& out) const {
  require(o.numel() == obs_dim_ && a_prev.numel() == act_dim_,
          "belief step: obs/action widths {}/{} want {}/{}", o.numel(), a_prev.numel(),
          obs_dim_, act_dim_);
  Tensor e;
  enc_.forward_numeric(o, e);
  e.flat() = e.flat().array().tanh();
  Tensor x({enc_dim_ + act_dim_});
  std::copy_n(e.data(), enc_dim_, x.data());
  std::copy_n(a_prev.data(), act_dim_, x.data() + enc_dim_);
  gru_.step_numeric(b_prev, x, out);
}

Var BeliefModule::prediction_target(Tape& t, const Tensor& obs) {
  Var raw = t.constant(obs);
  if (!encoding_space_) return raw;
  return detach(encode_obs(t, raw));
}

Var BeliefModule::loss_ar(Tape& t, const std::vector<Var>& beliefs, const Window& w) {
  check_window(w);
  require(static_cast<int>(beliefs.size()) == w.len, "loss_ar: {} beliefs for window of {}",
          beliefs.size(), w.len);
  require(w.len >= 2, "loss_ar: window length {} < 2", w.len);
  std::vector<Var> terms;
  terms.reserve(static_cast<std::size_t>(w.len - 1));
  for (int i = 1; i < w.len; ++i) {
    const int row = w.start + i;
    Var input = concat({beliefs[static_cast<std::size_t>(i - 1)],
                        t.constant(w.traj->actions[static_cast<std::size_t>(row - 1)])});
    Var pred = g_ar_.forward(t, input);
    Var target = t.constant(w.traj->observations[static_cast<std::size_t>(row)]);
    terms.push_back(sum(square(pred - target)));
  }
  return mean_scalars(terms);
}

Var BeliefModule::loss_forward(Tape& t, const std::vector<Var>& beliefs, const Window& w,
                               int k) {
  check_window(w);
  require(static_cast<int>(beliefs.size()) == w.len,
          "loss_forward: {} beliefs for window of {}", beliefs.size(), w.len);
  require(k >= 1 && k <= max_k_, "loss_forward: offset {} outside [1, {}]", k, max_k_);
  require(w.len >= k + 1, "loss_forward: window length {} < k+1 = {}", w.len, k + 1);
  std::vector<Var> terms;
  for (int i = 0; i + k < w.len; ++i) {
    const int row = w.start + i;
    std::vector<Tensor> acts(w.traj->actions.begin() + row,
                             w.traj->actions.begin() + row + k);
    Var input = concat({beliefs[static_cast<std::size_t>(i)], future_actions_.encode(t, acts)});
    Var pred = g_f_.forward(t, input);
    Var target = prediction_target(t, w.traj->observations[static_cast<std::size_t>(row + k)]);
    terms.push_back(sum(square(pred - target)));
  }
  return mean_scalars(terms);
}

Var BeliefModule::loss_inverse(Tape& t, const std::vector<Var>& beliefs, const Window& w,
                               int k) {
  check_window(w);
  require(static_cast<int>(beliefs.size()) == w.len,
          "loss_inverse: {} beliefs for window of {}", beliefs.size(), w.len);
  require(k >= 1 && k <= max_k_, "loss_inverse: offset {} outside [1, {}]", k, max_k_);
  require(w.len >= k + 1, "loss_inverse: window length {} < k+1 = {}", w.len, k + 1);
  std::vector<Var> terms;
  for (int i = k; i < w.len; ++i) {
    const int row = w.start + i;
    std::vector<Tensor> acts(w.traj->actions.begin() + row - k,
                             w.traj->actions.begin() + row);
    Var input = concat({beliefs[static_cast<std::size_t>(i)], past_actions_.encode(t, acts)});
    Var pred = g_i_.forward(t, input);
    Var target = prediction_target(t, w.traj->observations[static_cast<std::size_t>(row - k)]);
    terms.push_back(sum(square(pred - target)));
  }
  return mean_scalars(terms);
}

Var BeliefModule::loss_action(Tape& t, const std::vector<Var>& beliefs, const Window& w,
                              int k) {
  check_window(w);
  require(static_cast<int>(beliefs.size()) == w.len,
          "loss_action: {} beliefs for window of {}", beliefs.size(), w.len);
  require(k >= 1 && k <= max_k_, "loss_action: offset {} outside [1, {}]", k, max_k_);
  require(w.len >= k + 1, "loss_action: window length {} < k+1 = {}", w.len, k + 1);
  std::vector<Var> terms;
  for (int i = 0; i + k < w.len; ++i) {
    const int row = w.start + i;
    Var obs_enc =
        encode_obs(t, t.constant(w.traj->observations[static_cast<std::size_t>(row + k)]));
    Var input = concat({beliefs[static_cast<std::size_t>(i)], obs_enc});
    Var pred = slice(g_a_.forward(t, input), 0, k * act_dim_);
    Tensor target({k * act_dim_});
    for (int j = 0; j < k; ++j)
      std::copy_n(w.traj->actions[static_cast<std::size_t>(row + j)].data(), act_dim_,
                  target.data() + j * act_dim_);
    terms.push_back(sum(square(pred - t.constant(target))));
  }
  return mean_scalars(terms);
}

Var BeliefModule::loss_regularizers(Tape& t, const std::vector<Var>& beliefs,
                                    const Window& w, const RegWeights& rw,
                                    RegReport* report) {
  rw.validate();
  if (report != nullptr) *report = RegReport{};
  std::vector<Var> terms;
  auto log_term = [&](std::vector<double> RegReport::* field, Var term) {
    if (report != nullptr) (report->*field).back() = term.value().value();
    return term;
  };
  for (int k : rw.offsets) {
    if (report != nullptr) {
      report->forward.push_back(0.0);
      report->inverse.push_back(0.0);
      report->action.push_back(0.0);
    }
    if (rw.lambda1 > 0.0)
      terms.push_back(scale(log_term(&RegReport::forward, loss_forward(t, beliefs, w, k)),
                            rw.lambda1));
    if (rw.lambda2 > 0.0)
      terms.push_back(scale(log_term(&RegReport::inverse, loss_inverse(t, beliefs, w, k)),
                            rw.lambda2));
    if (rw.lambda3 > 0.0)
      terms.push_back(scale(log_term(&RegReport::action, loss_action(t, beliefs, w, k)),
                            rw.lambda3));
  }
  if (terms.empty()) return t.constant(Tensor::scalar(0.0));
  return add_n(terms);
}

Var BeliefModule::loss_belief_total(Tape& t, const std::vector<Var>& beliefs,
                                    const Window& w, const RegWeights& rw,
                                    Var imitation_term, RegReport* report) {
  rw.validate();
  const bool any = !rw.offsets.empty() &&
                   (rw.lambda1 > 0.0 || rw.lambda2 > 0.0 || rw.lambda3 > 0.0);
  if (!any) {
    if (report != nullptr) {
      *report = RegReport{};
      report->forward.assign(rw.offsets.size(), 0.0);
      report->inverse.assign(rw.offsets.size(), 0.0);
      report->action.assign(rw.offsets.size(), 0.0);
    }
    return imitation_term;  // same node: the ablation is bitwise-exact
  }
  return imitation_term + loss_regularizers(t, beliefs, w, rw, report);
}

std::vector<Param*> BeliefModule::params() {
  std::vector<Param*> out;
  for (Param* p : enc_.params()) out.push_back(p);
  for (Param* p : gru_.params()) out.push_back(p);
  for (Param* p : g_ar_.params()) out.push_back(p);
  for (Param* p : g_f_.params()) out.push_back(p);
  for (Param* p : g_i_.params()) out.push_back(p);
  for (Param* p : g_a_.params()) out.push_back(p);
  for (Param* p : past_actions_.params()) out.push_back(p);
  for (Param* p : future_actions_.params()) out.push_back(p);
  return out;
}

}  // namespace bmil
