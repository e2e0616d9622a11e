#include "core/gradcases.hpp"

#include <fmt/format.h>

#include <memory>
#include <utility>

#include "core/adversarial.hpp"
#include "core/belief.hpp"
#include "core/demos.hpp"
#include "core/nn.hpp"
#include "core/policy.hpp"

namespace bmil::verify {

namespace {

Param* add_param(GradInstance& gi, const std::string& name, Tensor t) {
  gi.owned.push_back(std::make_unique<Param>(name, std::move(t)));
  gi.params.push_back(gi.owned.back().get());
  return gi.params.back();
}

template <typename M>
std::shared_ptr<M> hold_module(GradInstance& gi, std::shared_ptr<M> m) {
  gi.module = m;
  gi.params = m->params();
  return m;
}

// Keeps only the parameter blocks whose names contain one of the fragments;
// loss-specific cases perturb just the blocks that feed their loss.
void take_params(GradInstance& gi, const std::vector<Param*>& ps,
                 std::initializer_list<const char*> keep) {
  for (Param* p : ps) {
    for (const char* s : keep) {
      if (p->name.find(s) != std::string::npos) {
        gi.params.push_back(p);
        break;
      }
    }
  }
}

// Everything a windowed belief-loss instance owns. The build lambda holds a
// shared_ptr to this, keeping the Window's trajectory pointer valid.
struct BeliefRig {
  std::shared_ptr<Trajectory> traj;
  std::shared_ptr<BeliefModule> belief;
  std::shared_ptr<Discriminator> disc;
  std::shared_ptr<GaussianHead> head;
  Window window;
};

constexpr int kRigObs = 3, kRigAct = 2, kRigHidden = 5, kRigMaxK = 2;

std::shared_ptr<BeliefRig> make_rig(Rng& rng, bool encoding_space = false) {
  auto rig = std::make_shared<BeliefRig>();
  rig->traj = std::make_shared<Trajectory>();
  for (int i = 0; i < 8; ++i) {
    rig->traj->observations.push_back(Tensor::uniform(rng, {kRigObs}, -2.0, 2.0));
    rig->traj->actions.push_back(Tensor::uniform(rng, {kRigAct}, -2.0, 2.0));
  }
  rig->belief = std::make_shared<BeliefModule>("bm", kRigObs, kRigAct, kRigMaxK, rng,
                                               encoding_space, /*enc_dim=*/4,
                                               /*hidden=*/kRigHidden, /*mlp_hidden=*/5,
                                               /*act_enc_dim=*/4);
  rig->disc = std::make_shared<Discriminator>("disc", kRigHidden, kRigAct, rng,
                                              /*mlp_hidden=*/5);
  rig->head = std::make_shared<GaussianHead>("pi", kRigHidden, kRigAct, rng);
  rig->window = Window{rig->traj.get(), rng.uniform_int(3), 5};
  return rig;
}

// Belief-action tuples for the rig's window rows, with live graph beliefs.
std::vector<BeliefAction> window_tuples(Tape& t, BeliefRig& rig) {
  std::vector<Var> beliefs = rig.belief->encode_window(t, rig.window);
  std::vector<BeliefAction> tuples;
  for (int i = 0; i < rig.window.len; ++i)
    tuples.push_back(
        {beliefs[static_cast<std::size_t>(i)],
         rig.traj->actions[static_cast<std::size_t>(rig.window.start + i)]});
  return tuples;
}

Tensor box(Rng& rng, std::vector<int> shape) {
  return Tensor::uniform(rng, std::move(shape), -2.0, 2.0);
}

// Strictly positive inputs for log's domain; perturbations of 1e-5 stay inside.
Tensor box_pos(Rng& rng, std::vector<int> shape) {
  return Tensor::uniform(rng, std::move(shape), 0.25, 2.0);
}

int rdim(Rng& rng) { return 1 + rng.uniform_int(6); }

GradCase unary_case(const std::string& name, Var (*op)(Var), bool positive = false) {
  return {name, [op, positive](Rng& rng) {
            GradInstance gi;
            Param* x = add_param(gi, "x", positive ? box_pos(rng, {rdim(rng)})
                                                   : box(rng, {rdim(rng)}));
            gi.build = [x, op](Tape& t) { return sum(op(t.var(*x))); };
            return gi;
          }};
}

}  // namespace

const std::vector<GradCase>& grad_cases() {
  static const std::vector<GradCase> cases = [] {
    std::vector<GradCase> c;

    c.push_back({"add", [](Rng& rng) {
                   GradInstance gi;
                   const int n = rdim(rng);
                   Param* x = add_param(gi, "x", box(rng, {n}));
                   Param* y = add_param(gi, "y", box(rng, {n}));
                   gi.build = [x, y](Tape& t) { return sum(square(t.var(*x) + t.var(*y))); };
                   return gi;
                 }});
    c.push_back({"sub", [](Rng& rng) {
                   GradInstance gi;
                   const int n = rdim(rng);
                   Param* x = add_param(gi, "x", box(rng, {n}));
                   Param* y = add_param(gi, "y", box(rng, {n}));
                   gi.build = [x, y](Tape& t) { return sum(square(t.var(*x) - t.var(*y))); };
                   return gi;
                 }});
    c.push_back({"mul", [](Rng& rng) {
                   GradInstance gi;
                   const int n = rdim(rng);
                   Param* x = add_param(gi, "x", box(rng, {n}));
                   Param* y = add_param(gi, "y", box(rng, {n}));
                   gi.build = [x, y](Tape& t) { return mean(square(t.var(*x) * t.var(*y))); };
                   return gi;
                 }});
    c.push_back({"scale", [](Rng& rng) {
                   GradInstance gi;
                   Param* x = add_param(gi, "x", box(rng, {rdim(rng)}));
                   const double s = rng.uniform(-2.0, 2.0);
                   gi.build = [x, s](Tape& t) { return sum(square(scale(t.var(*x), s))); };
                   return gi;
                 }});
    c.push_back({"add_const", [](Rng& rng) {
                   GradInstance gi;
                   Param* x = add_param(gi, "x", box(rng, {rdim(rng)}));
                   const double s = rng.uniform(-2.0, 2.0);
                   gi.build = [x, s](Tape& t) { return sum(square(add_const(t.var(*x), s))); };
                   return gi;
                 }});
    c.push_back({"matmul_vec", [](Rng& rng) {
                   GradInstance gi;
                   const int m = rdim(rng), n = rdim(rng);
                   Param* W = add_param(gi, "W", box(rng, {m, n}));
                   Param* v = add_param(gi, "v", box(rng, {n}));
                   gi.build = [W, v](Tape& t) {
                     return mean(square(matmul(t.var(*W), t.var(*v))));
                   };
                   return gi;
                 }});
    c.push_back({"matmul_mat", [](Rng& rng) {
                   GradInstance gi;
                   const int m = rdim(rng), n = rdim(rng), p = rdim(rng);
                   Param* A = add_param(gi, "A", box(rng, {m, n}));
                   Param* B = add_param(gi, "B", box(rng, {n, p}));
                   gi.build = [A, B](Tape& t) {
                     return mean(square(matmul(t.var(*A), t.var(*B))));
                   };
                   return gi;
                 }});
    c.push_back({"dot", [](Rng& rng) {
                   GradInstance gi;
                   const int n = rdim(rng);
                   Param* x = add_param(gi, "x", box(rng, {n}));
                   Param* y = add_param(gi, "y", box(rng, {n}));
                   gi.build = [x, y](Tape& t) { return square(dot(t.var(*x), t.var(*y))); };
                   return gi;
                 }});

    c.push_back(unary_case("tanh", &bmil::tanh));
    c.push_back(unary_case("sigmoid", &bmil::sigmoid));
    c.push_back(unary_case("log", &bmil::log, /*positive=*/true));
    c.push_back(unary_case("exp", &bmil::exp));
    c.push_back(unary_case("square", &bmil::square));
    c.push_back(unary_case("softplus", &bmil::softplus));

    c.push_back({"sum", [](Rng& rng) {
                   GradInstance gi;
                   const int n = rdim(rng);
                   Param* x = add_param(gi, "x", box(rng, {n}));
                   Param* y = add_param(gi, "y", box(rng, {n}));
                   gi.build = [x, y](Tape& t) { return sum(t.var(*x) * t.var(*y)); };
                   return gi;
                 }});
    c.push_back({"mean", [](Rng& rng) {
                   GradInstance gi;
                   const int n = rdim(rng);
                   Param* x = add_param(gi, "x", box(rng, {n}));
                   gi.build = [x](Tape& t) { return mean(square(t.var(*x))); };
                   return gi;
                 }});
    c.push_back({"add_n", [](Rng& rng) {
                   GradInstance gi;
                   const int n = rdim(rng);
                   Param* x = add_param(gi, "x", box(rng, {n}));
                   Param* y = add_param(gi, "y", box(rng, {n}));
                   Param* z = add_param(gi, "z", box(rng, {n}));
                   gi.build = [x, y, z](Tape& t) {
                     return sum(square(add_n({t.var(*x), t.var(*y), t.var(*z)})));
                   };
                   return gi;
                 }});
    c.push_back({"mean_scalars", [](Rng& rng) {
                   GradInstance gi;
                   Param* x = add_param(gi, "x", box(rng, {rdim(rng)}));
                   Param* y = add_param(gi, "y", box(rng, {rdim(rng)}));
                   gi.build = [x, y](Tape& t) {
                     return mean_scalars({sum(square(t.var(*x))), sum(tanh(t.var(*y)))});
                   };
                   return gi;
                 }});
    c.push_back({"concat", [](Rng& rng) {
                   GradInstance gi;
                   Param* x = add_param(gi, "x", box(rng, {rdim(rng)}));
                   Param* y = add_param(gi, "y", box(rng, {rdim(rng)}));
                   gi.build = [x, y](Tape& t) {
                     return sum(square(concat({t.var(*x), t.var(*y)})));
                   };
                   return gi;
                 }});
    c.push_back({"slice", [](Rng& rng) {
                   GradInstance gi;
                   const int n = 2 + rng.uniform_int(6);
                   Param* x = add_param(gi, "x", box(rng, {n}));
                   const int start = rng.uniform_int(n - 1);
                   const int len = 1 + rng.uniform_int(n - start - 1);
                   gi.build = [x, start, len](Tape& t) {
                     return sum(square(slice(t.var(*x), start, len)));
                   };
                   return gi;
                 }});
    c.push_back({"add_rowvec", [](Rng& rng) {
                   GradInstance gi;
                   const int r = rdim(rng), cdim = rdim(rng);
                   Param* M = add_param(gi, "M", box(rng, {r, cdim}));
                   Param* v = add_param(gi, "v", box(rng, {cdim}));
                   gi.build = [M, v](Tape& t) {
                     return sum(square(add_rowvec(t.var(*M), t.var(*v))));
                   };
                   return gi;
                 }});
    c.push_back({"conv1d", [](Rng& rng) {
                   GradInstance gi;
                   const int L = 3 + rng.uniform_int(6);
                   const int cin = 1 + rng.uniform_int(3);
                   const int cout = 1 + rng.uniform_int(3);
                   Param* X = add_param(gi, "X", box(rng, {L, cin}));
                   Param* K = add_param(gi, "K", box(rng, {cout, cin, 3}));
                   gi.build = [X, K](Tape& t) {
                     return mean(square(conv1d(t.var(*X), t.var(*K))));
                   };
                   return gi;
                 }});

    // nn bricks exercised end to end through their fused/composed forwards.
    c.push_back({"mlp", [](Rng& rng) {
                   GradInstance gi;
                   const int in = 2 + rng.uniform_int(3), out = 1 + rng.uniform_int(3);
                   auto mlp = hold_module(gi, std::make_shared<Mlp>("mlp", in, out, rng, 6));
                   Tensor x = box(rng, {in});
                   gi.build = [mlp, x](Tape& t) {
                     return sum(square(mlp->forward(t, t.constant(x))));
                   };
                   return gi;
                 }});
    c.push_back({"gru_step", [](Rng& rng) {
                   GradInstance gi;
                   const int in = 2 + rng.uniform_int(3), hid = 3 + rng.uniform_int(4);
                   auto cell =
                       hold_module(gi, std::make_shared<GruCell>("gru", in, hid, rng));
                   Tensor h0 = box(rng, {hid});
                   Tensor x0 = box(rng, {in});
                   Tensor x1 = box(rng, {in});
                   gi.build = [cell, h0, x0, x1](Tape& t) {
                     Var h1 = cell->step(t, t.constant(h0), t.constant(x0));
                     Var h2 = cell->step(t, h1, t.constant(x1));
                     return sum(square(h2));
                   };
                   return gi;
                 }});
    c.push_back({"action_seq_encoder", [](Rng& rng) {
                   GradInstance gi;
                   const int act = 1 + rng.uniform_int(3), max_k = 4;
                   auto enc = hold_module(
                       gi, std::make_shared<ActionSeqEncoder>("enc", act, max_k, 6, rng));
                   const int k = 1 + rng.uniform_int(max_k);
                   std::vector<Tensor> actions;
                   for (int i = 0; i < k; ++i) actions.push_back(box(rng, {act}));
                   gi.build = [enc, actions](Tape& t) {
                     return sum(square(enc->encode(t, actions)));
                   };
                   return gi;
                 }});
    c.push_back({"gaussian_log_prob", [](Rng& rng) {
                   GradInstance gi;
                   const int in = 2 + rng.uniform_int(3), act = 1 + rng.uniform_int(3);
                   auto head =
                       hold_module(gi, std::make_shared<GaussianHead>("pi", in, act, rng));
                   Tensor b = box(rng, {in});
                   Tensor a = box(rng, {act});
                   gi.build = [head, b, a](Tape& t) {
                     return head->log_prob(t, t.constant(b), a);
                   };
                   return gi;
                 }});
    c.push_back({"clamp", [](Rng& rng) {
                   GradInstance gi;
                   Param* x = add_param(gi, "x", box(rng, {rdim(rng)}));
                   gi.build = [x](Tape& t) {
                     return sum(square(clamp(t.var(*x), -1.2, 0.9)));
                   };
                   return gi;
                 }});

    // Belief-module losses on a random trajectory window with a warm-up
    // prefix, each perturbing only the parameter blocks that feed it.
    c.push_back({"belief_trunk", [](Rng& rng) {
                   GradInstance gi;
                   auto rig = make_rig(rng);
                   gi.module = rig;
                   take_params(gi, rig->belief->params(), {".enc.", ".gru."});
                   gi.build = [rig](Tape& t) {
                     std::vector<Var> beliefs = rig->belief->encode_window(t, rig->window);
                     return sum(square(beliefs.back()));
                   };
                   return gi;
                 }});
    c.push_back({"loss_ar", [](Rng& rng) {
                   GradInstance gi;
                   auto rig = make_rig(rng);
                   gi.module = rig;
                   take_params(gi, rig->belief->params(), {".enc.", ".gru.", ".g_ar."});
                   gi.build = [rig](Tape& t) {
                     std::vector<Var> beliefs = rig->belief->encode_window(t, rig->window);
                     return rig->belief->loss_ar(t, beliefs, rig->window);
                   };
                   return gi;
                 }});
    c.push_back({"loss_forward", [](Rng& rng) {
                   GradInstance gi;
                   auto rig = make_rig(rng);
                   gi.module = rig;
                   const int k = 1 + rng.uniform_int(kRigMaxK);
                   take_params(gi, rig->belief->params(),
                               {".enc.", ".gru.", ".g_f.", ".future_actions."});
                   gi.build = [rig, k](Tape& t) {
                     std::vector<Var> beliefs = rig->belief->encode_window(t, rig->window);
                     return rig->belief->loss_forward(t, beliefs, rig->window, k);
                   };
                   return gi;
                 }});
    c.push_back({"loss_forward_encoding_space", [](Rng& rng) {
                   GradInstance gi;
                   auto rig = make_rig(rng, /*encoding_space=*/true);
                   gi.module = rig;
                   const int k = 1 + rng.uniform_int(kRigMaxK);
                   // The detached target is a function of the observation
                   // encoder, so the loss-as-a-function-of-enc-params is not
                   // what the (deliberately cut) analytic gradient descends;
                   // the encoder blocks are checked by the constant-target
                   // equivalence test instead.
                   take_params(gi, rig->belief->params(),
                               {".gru.", ".g_f.", ".future_actions."});
                   gi.build = [rig, k](Tape& t) {
                     std::vector<Var> beliefs = rig->belief->encode_window(t, rig->window);
                     return rig->belief->loss_forward(t, beliefs, rig->window, k);
                   };
                   return gi;
                 }});
    c.push_back({"loss_inverse", [](Rng& rng) {
                   GradInstance gi;
                   auto rig = make_rig(rng);
                   gi.module = rig;
                   const int k = 1 + rng.uniform_int(kRigMaxK);
                   take_params(gi, rig->belief->params(),
                               {".enc.", ".gru.", ".g_i.", ".past_actions."});
                   gi.build = [rig, k](Tape& t) {
                     std::vector<Var> beliefs = rig->belief->encode_window(t, rig->window);
                     return rig->belief->loss_inverse(t, beliefs, rig->window, k);
                   };
                   return gi;
                 }});
    c.push_back({"loss_action", [](Rng& rng) {
                   GradInstance gi;
                   auto rig = make_rig(rng);
                   gi.module = rig;
                   const int k = 1 + rng.uniform_int(kRigMaxK);
                   take_params(gi, rig->belief->params(), {".enc.", ".gru.", ".g_a."});
                   gi.build = [rig, k](Tape& t) {
                     std::vector<Var> beliefs = rig->belief->encode_window(t, rig->window);
                     return rig->belief->loss_action(t, beliefs, rig->window, k);
                   };
                   return gi;
                 }});
    c.push_back({"loss_belief_total", [](Rng& rng) {
                   GradInstance gi;
                   auto rig = make_rig(rng);
                   gi.module = rig;
                   for (Param* p : rig->belief->params())
                     if (p->name.find(".g_ar.") == std::string::npos)
                       gi.params.push_back(p);
                   gi.build = [rig](Tape& t) {
                     std::vector<Var> beliefs = rig->belief->encode_window(t, rig->window);
                     RegWeights rw;
                     rw.offsets = {1, 2};
                     Var imitation = scale(sum(square(beliefs.front())), 0.05);
                     return rig->belief->loss_belief_total(t, beliefs, rig->window, rw,
                                                           imitation);
                   };
                   return gi;
                 }});

    // Adversarial and actor-critic losses.
    c.push_back({"disc_loss", [](Rng& rng) {
                   GradInstance gi;
                   auto disc = hold_module(
                       gi, std::make_shared<Discriminator>("disc", 4, 2, rng, 6));
                   std::vector<Tensor> eb, ea, pb, pa;
                   for (int i = 0; i < 2; ++i) {
                     eb.push_back(box(rng, {4}));
                     ea.push_back(box(rng, {2}));
                     pb.push_back(box(rng, {4}));
                     pa.push_back(box(rng, {2}));
                   }
                   gi.build = [disc, eb, ea, pb, pa](Tape& t) {
                     std::vector<BeliefAction> expert, policy;
                     for (std::size_t i = 0; i < eb.size(); ++i) {
                       expert.push_back({t.constant(eb[i]), ea[i]});
                       policy.push_back({t.constant(pb[i]), pa[i]});
                     }
                     return disc_loss(t, *disc, expert, policy);
                   };
                   return gi;
                 }});
    c.push_back({"imitation_pathwise", [](Rng& rng) {
                   GradInstance gi;
                   auto rig = make_rig(rng);
                   gi.module = rig;
                   take_params(gi, rig->belief->params(), {".enc.", ".gru."});
                   take_params(gi, rig->disc->params(), {"disc."});
                   gi.build = [rig](Tape& t) {
                     return imitation_loss_phi(t, *rig->disc, *rig->head, {},
                                               window_tuples(t, *rig), {},
                                               PhiPaths{false, false, true});
                   };
                   return gi;
                 }});
    c.push_back({"imitation_expert_path", [](Rng& rng) {
                   GradInstance gi;
                   auto rig = make_rig(rng);
                   gi.module = rig;
                   take_params(gi, rig->belief->params(), {".enc.", ".gru."});
                   take_params(gi, rig->disc->params(), {"disc."});
                   gi.build = [rig](Tape& t) {
                     return imitation_loss_phi(t, *rig->disc, *rig->head,
                                               window_tuples(t, *rig), {}, {},
                                               PhiPaths{true, false, false});
                   };
                   return gi;
                 }});
    c.push_back({"imitation_pg_path", [](Rng& rng) {
                   GradInstance gi;
                   auto rig = make_rig(rng);
                   gi.module = rig;
                   std::vector<double> qhat;
                   for (int i = 0; i < rig->window.len; ++i)
                     qhat.push_back(rng.uniform(-1.0, 1.0));
                   take_params(gi, rig->belief->params(), {".enc.", ".gru."});
                   take_params(gi, rig->head->params(), {"pi."});
                   gi.build = [rig, qhat](Tape& t) {
                     return imitation_loss_phi(t, *rig->disc, *rig->head, {},
                                               window_tuples(t, *rig), qhat,
                                               PhiPaths{false, true, false});
                   };
                   return gi;
                 }});
    c.push_back({"policy_loss", [](Rng& rng) {
                   GradInstance gi;
                   const int in = 4, act = 2;
                   auto head =
                       hold_module(gi, std::make_shared<GaussianHead>("pi", in, act, rng));
                   auto batch = std::make_shared<RolloutBatch>();
                   std::vector<double> adv;
                   for (int i = 0; i < 3; ++i) {
                     RolloutStep s;
                     s.belief = box(rng, {in});
                     s.action = box(rng, {act});
                     batch->steps.push_back(s);
                     adv.push_back(rng.uniform(-1.0, 1.0));
                   }
                   gi.build = [head, batch, adv](Tape& t) {
                     return policy_loss(t, *head, *batch, adv, 0.001);
                   };
                   return gi;
                 }});
    c.push_back({"critic_loss", [](Rng& rng) {
                   GradInstance gi;
                   const int in = 4;
                   auto critic =
                       hold_module(gi, std::make_shared<Mlp>("critic", in, 1, rng, 6));
                   auto batch = std::make_shared<RolloutBatch>();
                   std::vector<double> returns;
                   for (int i = 0; i < 3; ++i) {
                     RolloutStep s;
                     s.belief = box(rng, {in});
                     batch->steps.push_back(s);
                     returns.push_back(rng.uniform(-2.0, 2.0));
                   }
                   gi.build = [critic, batch, returns](Tape& t) {
                     return critic_loss(t, *critic, *batch, returns);
                   };
                   return gi;
                 }});

    return c;
  }();
  return cases;
}

std::vector<std::string> run_grad_suite(int instances, std::uint64_t seed,
                                        std::vector<std::string>* log) {
  std::vector<std::string> failures;
  for (const GradCase& gc : grad_cases()) {
    Rng rng(seed ^ std::hash<std::string>{}(gc.name));
    double worst = 0.0;
    bool ok = true;
    for (int i = 0; i < instances; ++i) {
      GradInstance gi = gc.make(rng);
      FdReport rep = finite_diff_check(gi.build, gi.param_ptrs(), rng);
      worst = std::max(worst, rep.worst_rel_err);
      if (!rep.pass) {
        ok = false;
        if (log)
          log->push_back(fmt::format("{} instance {}:\n{}", gc.name, i, rep.to_string()));
      }
    }
    if (log)
      log->push_back(fmt::format("grad case {:<24} instances={} worst_rel_err={:.3e} {}",
                                 gc.name, instances, worst, ok ? "ok" : "FAIL"));
    if (!ok) failures.push_back(gc.name);
  }
  return failures;
}

}  // namespace bmil::verify
