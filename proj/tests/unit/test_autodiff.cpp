#include <doctest.h>

#include <cmath>

#include "core/error.hpp"
#include "core/fdcheck.hpp"
#include "core/gradcases.hpp"
#include "core/graph.hpp"
#include "core/optim.hpp"

using namespace bmil;

TEST_CASE("product rule: x*y at (3,4)") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(3.0));
  Var y = t.leaf(Tensor::scalar(4.0));
  Var z = x * y;
  CHECK(z.value().value() == doctest::Approx(12.0));
  t.backward(z);
  CHECK(t.grad_of(x).value() == doctest::Approx(4.0));
  CHECK(t.grad_of(y).value() == doctest::Approx(3.0));
}

TEST_CASE("sum(tanh(W v)) at W=0: grad W rows equal v") {
  Tape t;
  Var W = t.leaf(Tensor::zeros({3, 4}));
  Tensor vdata({4}, {0.5, -1.0, 2.0, 0.25});
  Var v = t.constant(vdata);
  Var loss = sum(tanh(matmul(W, v)));
  CHECK(loss.value().value() == doctest::Approx(0.0));
  t.backward(loss);
  Tensor g = t.grad_of(W);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) CHECK(g.at(r, c) == doctest::Approx(vdata[c]));
}

TEST_CASE("pointwise basics") {
  Tape t;
  Var z = t.leaf(Tensor::scalar(0.0));
  CHECK(sigmoid(z).value().value() == doctest::Approx(0.5));
  CHECK(bmil::tanh(z).value().value() == doctest::Approx(0.0));
}

TEST_CASE("conv1d hand example: [1..5] * [1,1,1] with zero padding") {
  Tape t;
  Var x = t.constant(Tensor({5, 1}, {1, 2, 3, 4, 5}));
  Var k = t.constant(Tensor({1, 1, 3}, {1, 1, 1}));
  Var y = conv1d(x, k);
  REQUIRE(y.value().shape() == std::vector<int>{5, 1});
  const double want[5] = {3, 6, 9, 12, 9};
  for (int i = 0; i < 5; ++i) CHECK(y.value()[i] == doctest::Approx(want[i]));
}

TEST_CASE("conv1d zero kernels give zero output of input length") {
  Rng rng(7);
  Tape t;
  Var x = t.constant(Tensor::uniform(rng, {6, 3}, -2, 2));
  Var k = t.constant(Tensor::zeros({4, 3, 3}));
  Var y = conv1d(x, k);
  REQUIRE(y.value().shape() == std::vector<int>{6, 4});
  for (int i = 0; i < y.value().numel(); ++i) CHECK(y.value()[i] == 0.0);
}

TEST_CASE("random 3-layer composition matches finite differences") {
  Rng rng(42);
  for (int trial = 0; trial < 5; ++trial) {
    Param W1("W1", Tensor::uniform(rng, {4, 3}, -1, 1));
    Param b1("b1", Tensor::uniform(rng, {4}, -1, 1));
    Param W2("W2", Tensor::uniform(rng, {4, 4}, -1, 1));
    Param b2("b2", Tensor::uniform(rng, {4}, -1, 1));
    Param W3("W3", Tensor::uniform(rng, {2, 4}, -1, 1));
    Tensor x = Tensor::uniform(rng, {3}, -2, 2);

    auto build = [&](Tape& t) {
      Var h1 = bmil::tanh(matmul(t.var(W1), t.constant(x)) + t.var(b1));
      Var h2 = sigmoid(matmul(t.var(W2), h1) + t.var(b2));
      return sum(square(matmul(t.var(W3), h2)));
    };
    auto report =
        verify::finite_diff_check(build, {&W1, &b1, &W2, &b2, &W3}, rng);
    INFO(report.to_string());
    CHECK(report.pass);
  }
}

TEST_CASE("every registered op passes finite differences (sampled)") {
  // Acceptance runs >=100 instances per op; unit stays quick.
  std::vector<std::string> failures = verify::run_grad_suite(8, 1234);
  for (const auto& f : failures) FAIL_CHECK("grad case failed: ", f);
  CHECK(failures.empty());
}

TEST_CASE("registry covers the full op vocabulary") {
  std::vector<std::string> expected = {"add",  "mul", "matmul_vec", "matmul_mat",
                                       "tanh", "sigmoid", "log",    "exp",
                                       "square", "mean", "sum",     "concat",
                                       "slice", "conv1d", "softplus", "add_rowvec",
                                       "clamp",
                                       // module losses
                                       "belief_trunk", "loss_ar", "loss_forward",
                                       "loss_forward_encoding_space", "loss_inverse",
                                       "loss_action", "loss_belief_total", "disc_loss",
                                       "imitation_pathwise", "imitation_expert_path",
                                       "imitation_pg_path", "policy_loss", "critic_loss"};
  const auto& cases = verify::grad_cases();
  for (const auto& name : expected) {
    bool found = false;
    for (const auto& c : cases) found = found || c.name == name;
    INFO("missing op case: ", name);
    CHECK(found);
  }
}

TEST_CASE("detach blocks gradient flow") {
  Tape t;
  Var x = t.leaf(Tensor({3}, {1.0, -2.0, 0.5}));
  Var loss = sum(x * detach(x));
  t.backward(loss);
  // d/dx sum(x * const(x)) = const(x), not 2x.
  Tensor g = t.grad_of(x);
  CHECK(g[0] == doctest::Approx(1.0));
  CHECK(g[1] == doctest::Approx(-2.0));
  CHECK(g[2] == doctest::Approx(0.5));
}

TEST_CASE("backward twice after zeroing grads is identical") {
  Rng rng(5);
  Param W("W", Tensor::uniform(rng, {3, 3}, -1, 1));
  Tensor x = Tensor::uniform(rng, {3}, -1, 1);
  Tape t;
  Var loss = sum(square(matmul(t.var(W), t.constant(x))));

  W.zero_grad();
  t.backward(loss);
  Tensor g1 = W.grad;
  W.zero_grad();
  t.backward(loss);
  for (int i = 0; i < g1.numel(); ++i) CHECK(W.grad[i] == g1[i]);  // bitwise
}

TEST_CASE("backward without zeroing accumulates") {
  Param w("w", Tensor::scalar(2.0));
  Tape t;
  Var loss = square(t.var(w));
  t.backward(loss);
  CHECK(w.grad.value() == doctest::Approx(4.0));
  t.backward(loss);
  CHECK(w.grad.value() == doctest::Approx(8.0));
}

TEST_CASE("identical graphs and seeds give bit-identical grads") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Param W("W", Tensor::uniform(rng, {4, 4}, -1, 1));
    Tensor x = Tensor::uniform(rng, {4}, -1, 1);
    Tape t;
    Var loss = sum(bmil::tanh(matmul(t.var(W), t.constant(x))));
    t.backward(loss);
    return W.grad;
  };
  Tensor a = run(99), b = run(99);
  for (int i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("error paths: non-scalar root, shape mismatch, non-finite values") {
  Tape t;
  Var v = t.leaf(Tensor({2}, {1.0, 2.0}));
  CHECK_THROWS_AS(t.backward(v), Error);

  Var w = t.leaf(Tensor({3}, {1.0, 2.0, 3.0}));
  CHECK_THROWS_AS((void)(v + w), Error);

  Var neg = t.constant(Tensor({1}, {-1.0}));
  CHECK_THROWS_AS((void)log(neg), Error);  // log(-1) = NaN -> hard error
}

TEST_CASE("rmsprop: zero grad leaves params unchanged, counts the step") {
  Param w("w", Tensor::scalar(1.5));
  RmsProp opt({&w}, 3e-4);
  opt.zero_grads();
  opt.step();
  CHECK(w.value.value() == doctest::Approx(1.5));
  CHECK(opt.steps_taken() == 1);
}

TEST_CASE("rmsprop: one-step delta from a fresh state") {
  // sq = 0.01*1^2 = 0.01; delta = -3e-4/(sqrt(0.01)+1e-8) ~ -3e-3
  Param w("w", Tensor::scalar(0.0));
  RmsProp opt({&w}, 3e-4, 0.99, 1e-8);
  w.grad.fill(1.0);
  opt.step();
  CHECK(w.value.value() == doctest::Approx(-3e-3).epsilon(1e-6));
}

TEST_CASE("rmsprop: linear decay reaches zero and stays a no-op") {
  Param w("w", Tensor::scalar(1.0));
  RmsProp opt({&w}, 1e-2);
  opt.set_linear_decay(2);
  w.grad.fill(1.0);
  opt.step();  // lr = 1e-2 * (1 - 0/2)
  const double after_first = w.value.value();
  CHECK(after_first < 1.0);

  w.grad.fill(1.0);
  opt.step();  // lr = 1e-2 * (1 - 1/2)
  const double after_second = w.value.value();
  CHECK(after_second < after_first);

  w.grad.fill(1.0);
  opt.step();  // schedule exhausted -> no movement
  CHECK(w.value.value() == after_second);
  CHECK(opt.exhausted());
  CHECK(opt.steps_taken() == 3);
}

TEST_CASE("finite_diff_check flags a corrupted gradient") {
  // Build a loss via an op wrapper whose backward is deliberately scaled.
  Rng rng(11);
  Param w("w", Tensor::uniform(rng, {4}, -1, 1));
  auto corrupted = [&w](Tape& t) {
    Var x = t.var(w);
    // square's true gradient is 2x; sneak in an extra factor via scale of
    // the loss but not of the analytic path: emulate by perturbing the loss
    // with a detached copy so analytic grad misses a term.
    Var good = sum(square(x));
    Var bias = sum(detach(x) * x);  // analytic sees only one factor
    return good + scale(bias, 0.01);
  };
  auto report = verify::finite_diff_check(corrupted, {&w}, rng);
  CHECK(!report.pass);
}

TEST_CASE("finite_diff_check: linear loss matches to machine precision") {
  Rng rng(13);
  Param w("w", Tensor::uniform(rng, {5}, -1, 1));
  Tensor x = Tensor::uniform(rng, {5}, -1, 1);
  auto build = [&](Tape& t) { return dot(t.var(w), t.constant(x)); };
  auto report = verify::finite_diff_check(build, {&w}, rng, 1e-5, 1e-9);
  INFO(report.to_string());
  CHECK(report.pass);
}
