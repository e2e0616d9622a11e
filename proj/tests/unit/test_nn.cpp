#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "core/checkpoint.hpp"
#include "core/error.hpp"
#include "core/fdcheck.hpp"
#include "core/nn.hpp"

using namespace bmil;

TEST_CASE("orthogonal init: Q^T Q = I") {
  Rng rng(3);
  Tensor Q = orthogonal_init(rng, 6, 4);
  Tensor::Mat gram = Q.mat().transpose() * Q.mat();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(gram(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-9));
}

TEST_CASE("gru: zero weights halve the hidden state") {
  Rng rng(1);
  GruCell cell("g", 3, 4, rng);
  for (Param* p : cell.params()) p->value.fill(0.0);

  Tensor h0 = Tensor({4}, {1.0, -2.0, 0.5, 4.0});
  Tensor x({3});
  Tensor h1;
  cell.step_numeric(h0, x, h1);
  for (int i = 0; i < 4; ++i) CHECK(h1[i] == doctest::Approx(0.5 * h0[i]));

  // and through the tape op
  Tape t;
  Var hv = cell.step(t, t.constant(h0), t.constant(x));
  for (int i = 0; i < 4; ++i) CHECK(hv.value()[i] == doctest::Approx(0.5 * h0[i]));

  // zero h_prev as well -> exactly zero
  Tensor z({4}), hz;
  cell.step_numeric(z, x, hz);
  for (int i = 0; i < 4; ++i) CHECK(hz[i] == 0.0);
}

namespace {

// The same GRU update built from primitive ops; an independent oracle for the
// fused kernel's forward and backward.
Var composed_gru_step(Tape& t, GruCell& cell, Var h_prev, Var x) {
  auto ps = cell.params();
  Var wzr = t.var(*ps[0]), bzr = t.var(*ps[1]), wh = t.var(*ps[2]), bh = t.var(*ps[3]);
  const int H = cell.hidden_size();
  Var u = concat({h_prev, x});
  Var pre_zr = matmul(wzr, u) + bzr;
  Var z = sigmoid(slice(pre_zr, 0, H));
  Var r = sigmoid(slice(pre_zr, H, H));
  Var v = concat({r * h_prev, x});
  Var htil = bmil::tanh(matmul(wh, v) + bh);
  Var ones = t.constant(Tensor::full({H}, 1.0));
  return (ones - z) * h_prev + z * htil;
}

}  // namespace

TEST_CASE("fused gru matches the composed-op reference, forward and backward") {
  Rng rng(17);
  const int I = 3, H = 5;
  GruCell cell("g", I, H, rng);
  Tensor h0 = Tensor::uniform(rng, {H}, -1, 1);
  Tensor x0 = Tensor::uniform(rng, {I}, -1, 1);
  Tensor x1 = Tensor::uniform(rng, {I}, -1, 1);

  auto run = [&](bool fused) {
    for (Param* p : cell.params()) p->zero_grad();
    Tape t;
    Var h = t.constant(h0);
    Var loss;
    if (fused) {
      Var h1 = cell.step(t, h, t.constant(x0));
      Var h2 = cell.step(t, h1, t.constant(x1));
      loss = sum(square(h2));
    } else {
      Var h1 = composed_gru_step(t, cell, h, t.constant(x0));
      Var h2 = composed_gru_step(t, cell, h1, t.constant(x1));
      loss = sum(square(h2));
    }
    t.backward(loss);
    std::vector<Tensor> grads;
    for (Param* p : cell.params()) grads.push_back(p->grad);
    return std::make_pair(loss.value().value(), grads);
  };

  auto [loss_f, grads_f] = run(true);
  auto [loss_c, grads_c] = run(false);
  CHECK(loss_f == doctest::Approx(loss_c).epsilon(1e-12));
  for (std::size_t i = 0; i < grads_f.size(); ++i)
    for (int j = 0; j < grads_f[i].numel(); ++j)
      CHECK(grads_f[i][j] == doctest::Approx(grads_c[i][j]).epsilon(1e-9));
}

TEST_CASE("gru single step gradients vs finite differences") {
  Rng rng(23);
  GruCell cell("g", 3, 4, rng);
  Tensor h0 = Tensor::uniform(rng, {4}, -1, 1);
  Tensor x = Tensor::uniform(rng, {3}, -1, 1);
  auto build = [&](Tape& t) { return sum(square(cell.step(t, t.constant(h0), t.constant(x)))); };
  auto report = verify::finite_diff_check(build, cell.params(), rng);
  INFO(report.to_string());
  CHECK(report.pass);
}

TEST_CASE("fresh tapes at a reused address still flush gru weight grads") {
  // A stack-allocated tape can land at a destroyed tape's address. The fused
  // GRU identifies backward sweeps to arm its flush finalizer once per sweep;
  // if (address, per-tape counter) were the identity, the second sweep here
  // would be mistaken for the first and the weight GEMM would never run.
  Rng rng(29);
  GruCell cell("g", 3, 4, rng);
  std::vector<Tensor> xs;
  for (int i = 0; i < 3; ++i) xs.push_back(Tensor::uniform(rng, {3}, -1, 1));

  auto run = [&] {
    for (Param* p : cell.params()) p->zero_grad();
    Tape t;
    Var h = t.constant(Tensor::zeros({4}));
    for (const Tensor& x : xs) h = cell.step(t, h, t.constant(x));
    t.backward(sum(square(h)));
    std::vector<Tensor> out;
    for (Param* p : cell.params()) out.push_back(p->grad);
    return out;
  };

  std::vector<Tensor> g1 = run();
  std::vector<Tensor> g2 = run();
  for (std::size_t i = 0; i < g1.size(); ++i) {
    double mass = 0.0;
    for (int j = 0; j < g1[i].numel(); ++j) {
      CHECK(g2[i][j] == g1[i][j]);
      mass += std::abs(g1[i][j]);
    }
    CHECK(mass > 0.0);
  }
}

TEST_CASE("gaussian head: log density values") {
  Rng rng(5);
  GaussianHead head("pi", 3, 1, rng);
  Tensor b = Tensor::uniform(rng, {3}, -1, 1);
  Tensor mu = head.mean_action(b);

  // a = mu, sigma = 1
  CHECK(head.log_prob_numeric(b, mu) == doctest::Approx(-0.9189385332046727));

  // one-sigma point
  Tensor a1 = mu;
  a1[0] += 1.0;  // sigma = e^0 = 1
  CHECK(head.log_prob_numeric(b, a1) == doctest::Approx(-0.9189385332046727 - 0.5));

  GaussianHead head2("pi2", 3, 2, rng);
  Tensor mu2 = head2.mean_action(b);
  CHECK(head2.log_prob_numeric(b, mu2) == doctest::Approx(-1.8378770664093453));

  // tape version agrees with numeric version
  Tape t;
  Var lp = head.log_prob(t, t.constant(b), a1);
  CHECK(lp.value().value() == doctest::Approx(head.log_prob_numeric(b, a1)));
}

TEST_CASE("gaussian head: sampling") {
  Rng rng(7);
  GaussianHead head("pi", 2, 2, rng);
  Tensor b = Tensor::uniform(rng, {2}, -1, 1);

  SUBCASE("log_std -> -20 collapses to the mean") {
    for (Param* p : head.params())
      if (p->name == "pi.log_std") p->value.fill(-20.0);
    Rng r2(99);
    Tensor a = head.sample(b, r2);
    Tensor mu = head.mean_action(b);
    for (int i = 0; i < 2; ++i) CHECK(std::abs(a[i] - mu[i]) < 1e-6);
  }

  SUBCASE("identical rng clones give identical samples") {
    Rng r1(123), r2(123);
    Tensor a1 = head.sample(b, r1);
    Tensor a2 = head.sample(b, r2);
    for (int i = 0; i < 2; ++i) CHECK(a1[i] == a2[i]);
  }

  SUBCASE("sample moments match mu=0 sigma=1 over 1e5 draws") {
    // Force mu = 0 via zero weights, log_std = 0.
    for (Param* p : head.params()) p->value.fill(0.0);
    Rng r(2024);
    double s = 0.0, s2 = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      Tensor a = head.sample(b, r);
      s += a[0];
      s2 += a[0] * a[0];
    }
    const double m = s / n;
    const double sd = std::sqrt(s2 / n - m * m);
    CHECK(std::abs(m) < 0.02);
    CHECK(std::abs(sd - 1.0) < 0.02);
  }
}

TEST_CASE("gaussian head entropy") {
  Rng rng(9);
  GaussianHead head("pi", 2, 3, rng);
  Tape t;
  // log_std = 0: entropy = D/2 * (1 + ln 2pi)
  const double want = 0.5 * 3 * (1.0 + 1.8378770664093453);
  CHECK(head.entropy(t).value().value() == doctest::Approx(want));
}

TEST_CASE("action encoder ignores padding content") {
  Rng rng(11);
  ActionSeqEncoder enc("enc", 2, 5, 8, rng);
  std::vector<Tensor> actions = {Tensor({2}, {0.3, -0.7}), Tensor({2}, {1.1, 0.2})};

  Tensor clean({5, 2});
  std::copy_n(actions[0].data(), 2, clean.data());
  std::copy_n(actions[1].data(), 2, clean.data() + 2);
  Tensor garbage = clean;
  for (int i = 4; i < 10; ++i) garbage[i] = 1e3 * (i - 3);

  Tape t;
  Var a = enc.encode(t, actions);
  Var bclean = enc.encode_padded(t, clean, 2);
  Var bgarb = enc.encode_padded(t, garbage, 2);
  for (int i = 0; i < a.value().numel(); ++i) {
    CHECK(a.value()[i] == bclean.value()[i]);
    CHECK(a.value()[i] == bgarb.value()[i]);
  }
}

TEST_CASE("mlp output width and purity") {
  Rng rng(13);
  Mlp mlp("m", 4, 3, rng);
  Tensor x = Tensor::uniform(rng, {4}, -1, 1);
  Tensor y1 = mlp.forward_numeric(x);
  Tensor y2 = mlp.forward_numeric(x);
  REQUIRE(y1.shape() == std::vector<int>{3});
  for (int i = 0; i < 3; ++i) CHECK(y1[i] == y2[i]);

  Tape t;
  Var y = mlp.forward(t, t.constant(x));
  for (int i = 0; i < 3; ++i) CHECK(y.value()[i] == doctest::Approx(y1[i]).epsilon(1e-12));
}

TEST_CASE("checkpoint round-trip is bitwise and strict") {
  Rng rng(15);
  Mlp mlp("m", 3, 2, rng);
  GruCell cell("g", 2, 3, rng);
  std::vector<Param*> params = mlp.params();
  for (Param* p : cell.params()) params.push_back(p);

  const std::string path = "/tmp/bmil_test_ckpt.bin";
  save_checkpoint(path, params, "{\"purpose\":\"test\"}");

  std::vector<Tensor> before;
  for (Param* p : params) before.push_back(p->value);
  for (Param* p : params) p->value.fill(0.0);

  Checkpoint ck = load_checkpoint(path);
  CHECK(ck.header_json == "{\"purpose\":\"test\"}");
  apply_checkpoint(ck, params);
  for (std::size_t i = 0; i < params.size(); ++i)
    for (int j = 0; j < params[i]->value.numel(); ++j)
      CHECK(params[i]->value[j] == before[i][j]);

  SUBCASE("missing tensor rejected") {
    std::vector<Param*> extra = params;
    Param stray("not_in_file", Tensor::zeros({2}));
    extra.push_back(&stray);
    CHECK_THROWS_AS(apply_checkpoint(ck, extra), Error);
  }
  SUBCASE("unmatched stored tensor rejected") {
    std::vector<Param*> fewer(params.begin(), params.end() - 1);
    CHECK_THROWS_AS(apply_checkpoint(ck, fewer), Error);
  }
  SUBCASE("bad magic rejected") {
    std::FILE* f = std::fopen("/tmp/bmil_test_bad.bin", "wb");
    std::fwrite("NOTACKPT", 1, 8, f);
    std::fclose(f);
    CHECK_THROWS_AS(load_checkpoint("/tmp/bmil_test_bad.bin"), Error);
  }
  std::remove(path.c_str());
}
