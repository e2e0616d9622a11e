#include <doctest.h>

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "core/belief.hpp"
#include "core/error.hpp"
#include "core/fdcheck.hpp"

using namespace bmil;

namespace {

// Small module so finite differences and hand computations stay fast.
constexpr int kObs = 3, kAct = 2;

BeliefModule small_module(Rng& rng, int max_k = 2, bool encoding_space = false,
                          int enc_dim = 4) {
  return BeliefModule("bm", kObs, kAct, max_k, rng, encoding_space, enc_dim,
                      /*hidden=*/5, /*mlp_hidden=*/5, /*act_enc_dim=*/4);
}

Trajectory random_traj(Rng& rng, int len) {
  Trajectory tr;
  for (int i = 0; i < len; ++i) {
    tr.observations.push_back(Tensor::uniform(rng, {kObs}, -2.0, 2.0));
    tr.actions.push_back(Tensor::uniform(rng, {kAct}, -2.0, 2.0));
  }
  return tr;
}

Trajectory const_traj(int len, const Tensor& o, const Tensor& a) {
  Trajectory tr;
  for (int i = 0; i < len; ++i) {
    tr.observations.push_back(o);
    tr.actions.push_back(a);
  }
  return tr;
}

Param* pget(BeliefModule& m, const std::string& name) {
  for (Param* p : m.params())
    if (p->name == name) return p;
  FAIL("no parameter named " << name);
  return nullptr;
}

// Forces an Mlp head to emit `bias` regardless of its input.
void force_constant_head(BeliefModule& m, const std::string& head, const Tensor& bias) {
  pget(m, "bm." + head + ".l3.W")->value.fill(0.0);
  Param* b = pget(m, "bm." + head + ".l3.b");
  REQUIRE(b->value.numel() == bias.numel());
  b->value = bias;
}

bool same_bits(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (int i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

// Streams for encode_sequence: obs rows [0, n) and the shifted action stream.
void streams(const Trajectory& tr, int n, std::vector<Tensor>& obs,
             std::vector<Tensor>& prev) {
  obs.assign(tr.observations.begin(), tr.observations.begin() + n);
  prev.clear();
  prev.push_back(Tensor::zeros({kAct}));
  for (int i = 1; i < n; ++i) prev.push_back(tr.actions[static_cast<std::size_t>(i - 1)]);
}

}  // namespace

TEST_CASE("zero GRU weights from a zero start give zero beliefs") {
  Rng rng(11);
  BeliefModule m = small_module(rng);
  for (Param* p : m.params())
    if (p->name.find(".gru.") != std::string::npos) p->value.fill(0.0);
  Trajectory tr = random_traj(rng, 6);
  std::vector<Tensor> obs, prev;
  streams(tr, 6, obs, prev);
  Tape t;
  std::vector<Var> beliefs = m.encode_sequence(t, obs, prev, m.initial_belief());
  REQUIRE(beliefs.size() == 6);
  for (const Var& b : beliefs)
    for (int i = 0; i < b.value().numel(); ++i) CHECK(b.value()[i] == 0.0);
}

TEST_CASE("beliefs are causal: shared prefix, then divergence") {
  Rng rng(12);
  BeliefModule m = small_module(rng);
  Trajectory a = random_traj(rng, 7);
  Trajectory b = a;
  // Mutate everything from row 4 on; rows 0..3 stay shared.
  for (int i = 4; i < 7; ++i) {
    b.observations[static_cast<std::size_t>(i)] = Tensor::uniform(rng, {kObs}, -2.0, 2.0);
    b.actions[static_cast<std::size_t>(i)] = Tensor::uniform(rng, {kAct}, -2.0, 2.0);
  }
  std::vector<Tensor> oa, pa, ob, pb;
  streams(a, 7, oa, pa);
  streams(b, 7, ob, pb);
  Tape t;
  std::vector<Var> ba = m.encode_sequence(t, oa, pa, m.initial_belief());
  std::vector<Var> bb = m.encode_sequence(t, ob, pb, m.initial_belief());
  // b_t depends on (o_{<=t}, a_{<t}): row 4's belief still agrees because only
  // o_4 onward and a_4 onward changed... o_4 itself changed, so divergence
  // starts exactly at index 4.
  for (int i = 0; i < 4; ++i) CHECK(same_bits(ba[static_cast<std::size_t>(i)].value(),
                                              bb[static_cast<std::size_t>(i)].value()));
  bool diverged = false;
  for (int i = 4; i < 7; ++i)
    diverged = diverged || !same_bits(ba[static_cast<std::size_t>(i)].value(),
                                      bb[static_cast<std::size_t>(i)].value());
  CHECK(diverged);
}

TEST_CASE("length-5 sequence: trunk gradients match finite differences") {
  Rng rng(13);
  auto m = std::make_shared<BeliefModule>("bm", kObs, kAct, 2, rng, false, 4, 5, 5, 4);
  Trajectory tr = random_traj(rng, 5);
  std::vector<Tensor> obs, prev;
  streams(tr, 5, obs, prev);
  std::vector<Param*> trunk;
  for (Param* p : m->params())
    if (p->name.find(".enc.") != std::string::npos ||
        p->name.find(".gru.") != std::string::npos)
      trunk.push_back(p);
  auto build = [m, obs, prev](Tape& t) {
    std::vector<Var> beliefs = m->encode_sequence(t, obs, prev, m->initial_belief());
    return sum(square(beliefs.back()));
  };
  verify::FdReport rep = verify::finite_diff_check(build, trunk, rng);
  INFO(rep.to_string());
  CHECK(rep.pass);
  CHECK(rep.worst_rel_err < 1e-4);
}

TEST_CASE("graph step and numeric step agree bitwise") {
  Rng rng(14);
  BeliefModule m = small_module(rng);
  Tensor b0 = Tensor::uniform(rng, {5}, -1.0, 1.0);
  Tensor o = Tensor::uniform(rng, {kObs}, -2.0, 2.0);
  Tensor a = Tensor::uniform(rng, {kAct}, -2.0, 2.0);
  Tape t;
  Var bg = m.step(t, t.constant(b0), t.constant(o), t.constant(a));
  Tensor bn;
  m.step_numeric(b0, o, a, bn);
  CHECK(same_bits(bg.value(), bn));
}

TEST_CASE("encode_window matches encode_sequence over the full prefix") {
  Rng rng(15);
  BeliefModule m = small_module(rng);
  Trajectory tr = random_traj(rng, 8);
  Window w{&tr, 3, 4};
  Tape t;
  std::vector<Var> win = m.encode_window(t, w);
  std::vector<Tensor> obs, prev;
  streams(tr, 7, obs, prev);  // rows [0, start+len)
  std::vector<Var> full = m.encode_sequence(t, obs, prev, m.initial_belief());
  REQUIRE(win.size() == 4);
  for (int i = 0; i < 4; ++i)
    CHECK(same_bits(win[static_cast<std::size_t>(i)].value(),
                    full[static_cast<std::size_t>(3 + i)].value()));
}

TEST_CASE("bounded graph prefix: values identical, gradients truncated") {
  Rng rng(31);
  BeliefModule m = small_module(rng);
  Trajectory tr = random_traj(rng, 9);
  Window w{&tr, 5, 3};

  // Belief values never depend on where the tape starts.
  Tape tf;
  std::vector<Var> full = m.encode_window(tf, w);
  for (int prefix : {0, 2, 5, 100}) {
    Tape tp;
    std::vector<Var> part = m.encode_window(tp, w, prefix);
    REQUIRE(part.size() == full.size());
    for (std::size_t i = 0; i < full.size(); ++i)
      CHECK(same_bits(part[i].value(), full[i].value()));
  }

  auto grads_with_prefix = [&](int prefix) {
    for (Param* p : m.params()) p->zero_grad();
    Tape t;
    std::vector<Var> beliefs = m.encode_window(t, w, prefix);
    t.backward(sum(square(beliefs.back())));
    std::vector<Tensor> out;
    for (Param* p : m.params()) out.push_back(p->grad);
    return out;
  };

  // A prefix covering the whole warm-up reproduces the full-unroll gradient.
  std::vector<Tensor> g_full = grads_with_prefix(-1);
  std::vector<Tensor> g_cover = grads_with_prefix(w.start);
  for (std::size_t i = 0; i < g_full.size(); ++i) CHECK(same_bits(g_full[i], g_cover[i]));

  // A shorter prefix drops the early steps' contribution.
  std::vector<Tensor> g_short = grads_with_prefix(1);
  bool differs = false;
  for (std::size_t i = 0; i < g_full.size(); ++i)
    differs = differs || !same_bits(g_full[i], g_short[i]);
  CHECK(differs);
}

TEST_CASE("autoregressive loss vanishes when the head emits the constant stream") {
  Rng rng(16);
  BeliefModule m = small_module(rng);
  Tensor oc({kObs}, {0.3, -0.7, 1.1});
  Tensor ac({kAct}, {0.5, -0.2});
  Trajectory tr = const_traj(6, oc, ac);
  force_constant_head(m, "g_ar", oc);
  Window w{&tr, 1, 5};
  Tape t;
  std::vector<Var> beliefs = m.encode_window(t, w);
  CHECK(m.loss_ar(t, beliefs, w).value().value() == 0.0);
}

TEST_CASE("autoregressive loss with a constant head matches the hand formula") {
  Rng rng(17);
  BeliefModule m = small_module(rng);
  Trajectory tr = random_traj(rng, 7);
  Tensor bias({kObs}, {0.25, -1.5, 0.6});
  force_constant_head(m, "g_ar", bias);
  Window w{&tr, 2, 4};
  Tape t;
  std::vector<Var> beliefs = m.encode_window(t, w);
  const double got = m.loss_ar(t, beliefs, w).value().value();
  double want = 0.0;
  for (int row = 3; row < 6; ++row) {  // targets o_3, o_4, o_5
    for (int j = 0; j < kObs; ++j) {
      const double d = tr.observations[static_cast<std::size_t>(row)][j] - bias[j];
      want += d * d;
    }
  }
  want /= 3.0;
  CHECK(got == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("window losses equal the mean of their single-pair sub-windows") {
  // Decomposing the window into one-pair windows recomputes every term on an
  // independent graph (beliefs re-unrolled from the episode start), which
  // pins pair enumeration, alignment, and averaging.
  Rng rng(18);
  BeliefModule m = small_module(rng, /*max_k=*/3);
  Trajectory tr = random_traj(rng, 9);
  Window w{&tr, 2, 5};
  Tape t;
  std::vector<Var> beliefs = m.encode_window(t, w);

  auto subwindow_value = [&](int start, int len, auto&& loss_of) {
    Tape sub;
    Window sw{&tr, start, len};
    std::vector<Var> sb = m.encode_window(sub, sw);
    return loss_of(sub, sb, sw).value().value();
  };

  SUBCASE("autoregressive") {
    const double full = m.loss_ar(t, beliefs, w).value().value();
    double acc = 0.0;
    for (int i = 1; i < w.len; ++i)
      acc += subwindow_value(w.start + i - 1, 2, [&](Tape& s, auto& b, Window& sw) {
        return m.loss_ar(s, b, sw);
      });
    CHECK(full == doctest::Approx(acc / (w.len - 1)).epsilon(1e-12));
  }
  SUBCASE("forward, every offset") {
    for (int k = 1; k <= 3; ++k) {
      const double full = m.loss_forward(t, beliefs, w, k).value().value();
      double acc = 0.0;
      int pairs = 0;
      for (int i = 0; i + k < w.len; ++i, ++pairs)
        acc += subwindow_value(w.start + i, k + 1, [&](Tape& s, auto& b, Window& sw) {
          return m.loss_forward(s, b, sw, k);
        });
      CHECK(full == doctest::Approx(acc / pairs).epsilon(1e-12));
    }
  }
  SUBCASE("inverse, every offset") {
    for (int k = 1; k <= 3; ++k) {
      const double full = m.loss_inverse(t, beliefs, w, k).value().value();
      double acc = 0.0;
      int pairs = 0;
      for (int i = k; i < w.len; ++i, ++pairs)
        acc += subwindow_value(w.start + i - k, k + 1, [&](Tape& s, auto& b, Window& sw) {
          return m.loss_inverse(s, b, sw, k);
        });
      CHECK(full == doctest::Approx(acc / pairs).epsilon(1e-12));
    }
  }
  SUBCASE("action, every offset") {
    for (int k = 1; k <= 3; ++k) {
      const double full = m.loss_action(t, beliefs, w, k).value().value();
      double acc = 0.0;
      int pairs = 0;
      for (int i = 0; i + k < w.len; ++i, ++pairs)
        acc += subwindow_value(w.start + i, k + 1, [&](Tape& s, auto& b, Window& sw) {
          return m.loss_action(s, b, sw, k);
        });
      CHECK(full == doctest::Approx(acc / pairs).epsilon(1e-12));
    }
  }
}

TEST_CASE("forward loss with a constant head matches the hand formula") {
  Rng rng(19);
  BeliefModule m = small_module(rng);
  Trajectory tr = random_traj(rng, 8);
  Tensor bias({kObs}, {0.1, 0.2, -0.4});
  force_constant_head(m, "g_f", bias);
  Window w{&tr, 1, 5};
  Tape t;
  std::vector<Var> beliefs = m.encode_window(t, w);
  for (int k = 1; k <= 2; ++k) {
    double want = 0.0;
    int pairs = 0;
    for (int i = 0; i + k < w.len; ++i, ++pairs) {
      const Tensor& o = tr.observations[static_cast<std::size_t>(w.start + i + k)];
      for (int j = 0; j < kObs; ++j) want += (o[j] - bias[j]) * (o[j] - bias[j]);
    }
    want /= pairs;
    CHECK(m.loss_forward(t, beliefs, w, k).value().value() ==
          doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("inverse loss with a constant head matches the hand formula") {
  Rng rng(20);
  BeliefModule m = small_module(rng);
  Trajectory tr = random_traj(rng, 8);
  Tensor bias({kObs}, {-0.9, 0.05, 0.7});
  force_constant_head(m, "g_i", bias);
  Window w{&tr, 2, 5};
  Tape t;
  std::vector<Var> beliefs = m.encode_window(t, w);
  for (int k = 1; k <= 2; ++k) {
    double want = 0.0;
    int pairs = 0;
    for (int i = k; i < w.len; ++i, ++pairs) {
      const Tensor& o = tr.observations[static_cast<std::size_t>(w.start + i - k)];
      for (int j = 0; j < kObs; ++j) want += (o[j] - bias[j]) * (o[j] - bias[j]);
    }
    want /= pairs;
    CHECK(m.loss_inverse(t, beliefs, w, k).value().value() ==
          doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("action loss: constant actions and a forced head give exactly zero") {
  Rng rng(21);
  BeliefModule m = small_module(rng, /*max_k=*/2);
  Tensor oc({kObs}, {0.4, -0.3, 0.9});
  Tensor ac({kAct}, {1.2, -0.8});
  Trajectory tr = const_traj(7, oc, ac);
  Tensor flat({2 * kAct}, {1.2, -0.8, 1.2, -0.8});  // k copies, up to max_k
  force_constant_head(m, "g_a", flat);
  Window w{&tr, 1, 5};
  Tape t;
  std::vector<Var> beliefs = m.encode_window(t, w);
  CHECK(m.loss_action(t, beliefs, w, 1).value().value() == 0.0);
  CHECK(m.loss_action(t, beliefs, w, 2).value().value() == 0.0);
}

TEST_CASE("regularizer losses feed gradients into the shared trunk") {
  Rng rng(22);
  BeliefModule m = small_module(rng);
  Trajectory tr = random_traj(rng, 7);
  Window w{&tr, 1, 5};
  Tape t;
  std::vector<Var> beliefs = m.encode_window(t, w);
  RegWeights rw;
  rw.offsets = {1, 2};
  Var total = m.loss_regularizers(t, beliefs, w, rw);
  t.backward(total);
  double gru_grad_mass = 0.0;
  for (Param* p : m.params())
    if (p->name.find(".gru.") != std::string::npos)
      for (int i = 0; i < p->grad.numel(); ++i) gru_grad_mass += std::abs(p->grad[i]);
  CHECK(gru_grad_mass > 0.0);
}

TEST_CASE("belief total with zero weights returns the imitation node itself") {
  Rng rng(23);
  BeliefModule m = small_module(rng);
  Trajectory tr = random_traj(rng, 7);
  Window w{&tr, 0, 6};
  Tape t;
  std::vector<Var> beliefs = m.encode_window(t, w);
  Var imitation = scale(sum(square(beliefs.back())), 0.1);
  RegWeights off;
  off.lambda1 = off.lambda2 = off.lambda3 = 0.0;
  Var total = m.loss_belief_total(t, beliefs, w, off, imitation);
  CHECK(total.n == imitation.n);  // same graph node: ablation is bitwise-exact
}

TEST_CASE("belief total equals the hand-assembled weighted sum at k={1,5}") {
  Rng rng(24);
  BeliefModule m("bm", kObs, kAct, 5, rng, false, 4, 5, 5, 4);
  Trajectory tr = random_traj(rng, 10);
  Window w{&tr, 2, 7};
  Tape t;
  std::vector<Var> beliefs = m.encode_window(t, w);
  Var imitation = scale(sum(square(beliefs.front())), 0.05);
  RegWeights rw;  // defaults: 0.2 each, offsets {1,5}
  const double got = m.loss_belief_total(t, beliefs, w, rw, imitation).value().value();
  double want = imitation.value().value();
  for (int k : {1, 5}) {
    want += 0.2 * m.loss_forward(t, beliefs, w, k).value().value();
    want += 0.2 * m.loss_inverse(t, beliefs, w, k).value().value();
    want += 0.2 * m.loss_action(t, beliefs, w, k).value().value();
  }
  CHECK(got == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("total with zero imitation and exact heads is exactly zero") {
  Rng rng(25);
  BeliefModule m = small_module(rng, /*max_k=*/2);
  Tensor oc({kObs}, {0.2, -0.6, 0.8});
  Tensor ac({kAct}, {-0.4, 0.9});
  Trajectory tr = const_traj(8, oc, ac);
  force_constant_head(m, "g_f", oc);
  force_constant_head(m, "g_i", oc);
  Tensor flat({2 * kAct}, {-0.4, 0.9, -0.4, 0.9});
  force_constant_head(m, "g_a", flat);
  Window w{&tr, 1, 6};
  Tape t;
  std::vector<Var> beliefs = m.encode_window(t, w);
  RegWeights rw;
  rw.offsets = {1, 2};
  Var total = m.loss_belief_total(t, beliefs, w, rw, t.constant(Tensor::scalar(0.0)));
  CHECK(total.value().value() == 0.0);
}

TEST_CASE("encoding-space mode blocks the gradient through the target") {
  Rng rng(26);
  BeliefModule m = small_module(rng, 2, /*encoding_space=*/true);
  Trajectory tr = random_traj(rng, 7);
  // Constant prediction head: the only route from the encoder to the loss is
  // the (detached) target, so the encoder gradient must be exactly zero even
  // though the loss value genuinely depends on the encoder weights.
  Tensor bias({4});
  bias.fill(0.3);
  force_constant_head(m, "g_f", bias);
  Window w{&tr, 1, 4};

  Tape t;
  std::vector<Var> beliefs = m.encode_window(t, w);
  Var loss = m.loss_forward(t, beliefs, w, 1);
  t.backward(loss);
  Param* encW = pget(m, "bm.enc.W");
  for (int i = 0; i < encW->grad.numel(); ++i) CHECK(encW->grad[i] == 0.0);

  // The value does move when the encoder moves (the dependence is real).
  const double before = loss.value().value();
  encW->value[0] += 0.05;
  Tape t2;
  std::vector<Var> b2 = m.encode_window(t2, w);
  const double after = m.loss_forward(t2, b2, w, 1).value().value();
  CHECK(before != after);
}

TEST_CASE("encoding-space with identity encoder is the tanh-observation MSE") {
  Rng rng(27);
  BeliefModule m = small_module(rng, 2, /*encoding_space=*/true, /*enc_dim=*/kObs);
  // enc = tanh(I o + 0): the target is tanh(o) elementwise.
  Param* encW = pget(m, "bm.enc.W");
  encW->value.fill(0.0);
  for (int i = 0; i < kObs; ++i) encW->value.at(i, i) = 1.0;
  pget(m, "bm.enc.b")->value.fill(0.0);
  Tensor bias({kObs}, {0.15, -0.25, 0.35});
  force_constant_head(m, "g_f", bias);
  Trajectory tr = random_traj(rng, 7);
  Window w{&tr, 1, 4};
  Tape t;
  std::vector<Var> beliefs = m.encode_window(t, w);
  const int k = 1;
  double want = 0.0;
  int pairs = 0;
  for (int i = 0; i + k < w.len; ++i, ++pairs) {
    const Tensor& o = tr.observations[static_cast<std::size_t>(w.start + i + k)];
    for (int j = 0; j < kObs; ++j) {
      const double d = std::tanh(o[j]) - bias[j];
      want += d * d;
    }
  }
  want /= pairs;
  CHECK(m.loss_forward(t, beliefs, w, k).value().value() ==
        doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("encoding-space: prediction equal to the detached encoding gives zero") {
  Rng rng(28);
  BeliefModule m = small_module(rng, 2, /*encoding_space=*/true);
  Tensor oc({kObs}, {0.5, -0.1, 0.9});
  Tensor ac({kAct}, {0.3, 0.3});
  Trajectory tr = const_traj(6, oc, ac);
  Tape probe;
  Tensor enc_oc = m.encode_obs(probe, probe.constant(oc)).value();
  force_constant_head(m, "g_f", enc_oc);
  force_constant_head(m, "g_i", enc_oc);
  Window w{&tr, 0, 4};
  Tape t;
  std::vector<Var> beliefs = m.encode_window(t, w);
  CHECK(m.loss_forward(t, beliefs, w, 1).value().value() == 0.0);
  CHECK(m.loss_inverse(t, beliefs, w, 1).value().value() == 0.0);
}

TEST_CASE("window and offset preconditions are enforced") {
  Rng rng(29);
  BeliefModule m = small_module(rng, /*max_k=*/2);
  Trajectory tr = random_traj(rng, 6);
  Tape t;

  Window w1{&tr, 0, 1};
  std::vector<Var> b1 = m.encode_window(t, w1);
  CHECK_THROWS_AS(m.loss_ar(t, b1, w1), Error);

  Window w2{&tr, 0, 2};
  std::vector<Var> b2 = m.encode_window(t, w2);
  CHECK_THROWS_AS(m.loss_forward(t, b2, w2, 2), Error);   // len < k+1
  CHECK_THROWS_AS(m.loss_inverse(t, b2, w2, 2), Error);   // len < k+1
  CHECK_THROWS_AS(m.loss_action(t, b2, w2, 2), Error);    // len < k+1
  CHECK_THROWS_AS(m.loss_forward(t, b2, w2, 3), Error);   // k > max_k
  CHECK_THROWS_AS(m.loss_forward(t, b2, w2, 0), Error);   // k < 1

  Window w3{&tr, 4, 3};  // runs past the trajectory end
  CHECK_THROWS_AS(m.encode_window(t, w3), Error);
  Window w4{nullptr, 0, 2};
  CHECK_THROWS_AS(m.encode_window(t, w4), Error);

  // Mismatched belief list length.
  Window w5{&tr, 0, 4};
  std::vector<Var> b5 = m.encode_window(t, w5);
  b5.pop_back();
  CHECK_THROWS_AS(m.loss_ar(t, b5, w5), Error);
}

TEST_CASE("encode_sequence validates stream shapes") {
  Rng rng(30);
  BeliefModule m = small_module(rng);
  std::vector<Tensor> obs = {Tensor::zeros({kObs})};
  std::vector<Tensor> prev = {Tensor::zeros({kAct})};
  Tape t;
  CHECK_THROWS_AS(m.encode_sequence(t, {}, {}, m.initial_belief()), Error);
  CHECK_THROWS_AS(m.encode_sequence(t, obs, {}, m.initial_belief()), Error);
  CHECK_THROWS_AS(m.encode_sequence(t, obs, prev, Tensor::zeros({3})), Error);
  std::vector<Tensor> bad_obs = {Tensor::zeros({kObs + 1})};
  CHECK_THROWS_AS(m.encode_sequence(t, bad_obs, prev, m.initial_belief()), Error);
  std::vector<Tensor> bad_prev = {Tensor::zeros({kAct + 1})};
  CHECK_THROWS_AS(m.encode_sequence(t, obs, bad_prev, m.initial_belief()), Error);
}

TEST_CASE("regularizer weight validation") {
  RegWeights rw;
  CHECK(rw.max_offset() == 5);
  rw.offsets = {};
  CHECK(rw.max_offset() == 0);
  rw.offsets = {1, 5};
  rw.lambda2 = -0.1;
  CHECK_THROWS_AS(rw.validate(), Error);
  rw.lambda2 = 0.2;
  rw.offsets = {1, 0};
  CHECK_THROWS_AS(rw.validate(), Error);
}
