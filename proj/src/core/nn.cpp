#include "core/nn.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "core/error.hpp"

namespace bmil {

namespace {
constexpr double kLn2Pi = 1.8378770664093453;  // ln(2*pi)
}

Tensor orthogonal_init(Rng& rng, int rows, int cols, double gain) {
  // QR of a square Gaussian matrix covering the larger dimension, then crop.
  const int n = std::max(rows, cols);
  Tensor::Mat A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = rng.normal();
  Eigen::HouseholderQR<Tensor::Mat> qr(A);
  Tensor::Mat Q = qr.householderQ() * Tensor::Mat::Identity(n, n);
  Tensor::Mat R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < n; ++j)
    if (R(j, j) < 0) Q.col(j) = -Q.col(j);

  Tensor out({rows, cols});
  out.mat() = gain * Q.topLeftCorner(rows, cols);
  return out;
}

Tensor fanin_uniform(Rng& rng, int rows, int cols) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  return Tensor::uniform(rng, {rows, cols}, -bound, bound);
}

// ---- Linear / Mlp ---------------------------------------------------------

Linear::Linear(const std::string& name, int in, int out, Rng& rng)
    : W_(name + ".W", fanin_uniform(rng, out, in)), b_(name + ".b", Tensor::zeros({out})) {}

Var Linear::forward(Tape& t, Var x) {
  return matmul(t.var(W_), x) + t.var(b_);
}

void Linear::forward_numeric(const Tensor& x, Tensor& out) const {
  out = Tensor::zeros({W_.value.dim(0)});
  out.flat() = W_.value.mat() * x.flat() + b_.value.flat();
}

std::vector<Param*> Linear::params() { return {&W_, &b_}; }

Mlp::Mlp(const std::string& name, int in, int out, Rng& rng, int hidden)
    : l1_(name + ".l1", in, hidden, rng),
      l2_(name + ".l2", hidden, hidden, rng),
      l3_(name + ".l3", hidden, out, rng) {}

Var Mlp::forward(Tape& t, Var x) {
  Var h1 = bmil::tanh(l1_.forward(t, x));
  Var h2 = bmil::tanh(l2_.forward(t, h1));
  return l3_.forward(t, h2);
}

Tensor Mlp::forward_numeric(const Tensor& x) const {
  Tensor h1, h2, out;
  l1_.forward_numeric(x, h1);
  h1.flat() = h1.flat().array().tanh();
  l2_.forward_numeric(h1, h2);
  h2.flat() = h2.flat().array().tanh();
  l3_.forward_numeric(h2, out);
  return out;
}

std::vector<Param*> Mlp::params() {
  std::vector<Param*> out;
  for (Linear* l : {&l1_, &l2_, &l3_})
    for (Param* p : l->params()) out.push_back(p);
  return out;
}

// ---- GruCell ---------------------------------------------------------------

GruCell::GruCell(const std::string& name, int input, int hidden, Rng& rng)
    : input_(input),
      hidden_(hidden),
      wzr_(name + ".wzr", orthogonal_init(rng, 2 * hidden, hidden + input)),
      bzr_(name + ".bzr", Tensor::zeros({2 * hidden})),
      wh_(name + ".wh", orthogonal_init(rng, hidden, hidden + input)),
      bh_(name + ".bh", Tensor::zeros({hidden})) {}

std::vector<Param*> GruCell::params() { return {&wzr_, &bzr_, &wh_, &bh_}; }

namespace {

inline double sigmoid_s(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void GruCell::step_numeric(const Tensor& h_prev, const Tensor& x, Tensor& h_out) const {
  const int H = hidden_, I = input_;
  require(h_prev.numel() == H && x.numel() == I, "gru_step: widths {}/{} want {}/{}",
          h_prev.numel(), x.numel(), H, I);
  Tensor u({H + I});
  std::copy_n(h_prev.data(), H, u.data());
  std::copy_n(x.data(), I, u.data() + H);

  Tensor pre_zr({2 * H});
  pre_zr.flat() = wzr_.value.mat() * u.flat() + bzr_.value.flat();

  Tensor v({H + I});
  for (int i = 0; i < H; ++i) v[i] = sigmoid_s(pre_zr[H + i]) * h_prev[i];
  std::copy_n(x.data(), I, v.data() + H);

  Tensor pre_h({H});
  pre_h.flat() = wh_.value.mat() * v.flat() + bh_.value.flat();

  h_out = Tensor::zeros({H});
  for (int i = 0; i < H; ++i) {
    const double z = sigmoid_s(pre_zr[i]);
    h_out[i] = (1.0 - z) * h_prev[i] + z * std::tanh(pre_h[i]);
  }
}

Var GruCell::step(Tape& t, Var h_prev, Var x) {
  const int H = hidden_, I = input_;
  require(h_prev.n->value.numel() == H && x.n->value.numel() == I,
          "gru_step: widths {}/{} want {}/{}", h_prev.n->value.numel(), x.n->value.numel(), H,
          I);

  Tensor u({H + I});
  std::copy_n(h_prev.n->value.data(), H, u.data());
  std::copy_n(x.n->value.data(), I, u.data() + H);

  Tensor pre_zr({2 * H});
  pre_zr.flat() = wzr_.value.mat() * u.flat() + bzr_.value.flat();

  Tensor z({H}), r({H});
  for (int i = 0; i < H; ++i) {
    z[i] = sigmoid_s(pre_zr[i]);
    r[i] = sigmoid_s(pre_zr[H + i]);
  }

  Tensor v({H + I});
  for (int i = 0; i < H; ++i) v[i] = r[i] * h_prev.n->value[i];
  std::copy_n(x.n->value.data(), I, v.data() + H);

  Tensor htil({H});
  htil.flat() = wh_.value.mat() * v.flat() + bh_.value.flat();
  for (int i = 0; i < H; ++i) htil[i] = std::tanh(htil[i]);

  Tensor h_new({H});
  for (int i = 0; i < H; ++i) h_new[i] = (1.0 - z[i]) * h_prev.n->value[i] + z[i] * htil[i];

  Node* n = t.make(
      "gru_step", std::move(h_new), {h_prev.n, x.n},
      [this, tp = &t, u, v, z, r, htil](Node& self) {
        const int H = hidden_, I = input_;
        const Tensor& g = self.grad;
        Node* hp = self.parents[0];
        Node* xn = self.parents[1];

        Tensor dpre_zr({2 * H}), dpre_h({H});
        for (int i = 0; i < H; ++i) {
          const double dhtil = g[i] * z[i];
          dpre_h[i] = dhtil * (1.0 - htil[i] * htil[i]);
        }

        Tensor dv({H + I});
        dv.flat() = wh_.value.mat().transpose() * dpre_h.flat();

        for (int i = 0; i < H; ++i) {
          const double dz = g[i] * (htil[i] - hp->value[i]);
          const double dr = dv[i] * hp->value[i];
          dpre_zr[i] = dz * z[i] * (1.0 - z[i]);
          dpre_zr[H + i] = dr * r[i] * (1.0 - r[i]);
        }

        Tensor du({H + I});
        du.flat() = wzr_.value.mat().transpose() * dpre_zr.flat();

        if (hp->requires_grad) {
          Tensor dh({H});
          for (int i = 0; i < H; ++i)
            dh[i] = g[i] * (1.0 - z[i]) + dv[i] * r[i] + du[i];
          accumulate_grad(*hp, dh.data(), H);
        }
        if (xn->requires_grad) {
          Tensor dx({I});
          for (int i = 0; i < I; ++i) dx[i] = dv[H + i] + du[H + i];
          accumulate_grad(*xn, dx.data(), I);
        }

        bzr_.grad.flat() += dpre_zr.flat();
        bh_.grad.flat() += dpre_h.flat();

        // Weight gradients are deferred: stage this step's rows and flush all
        // of them as two GEMMs when the sweep finishes.
        if (stage_.tape != tp || stage_.pass_id != tp->backward_pass_id()) {
          stage_.clear();
          stage_.tape = tp;
          stage_.pass_id = tp->backward_pass_id();
          tp->add_finalizer([this] { flush_stage(); });
        }
        stage_.u_rows.insert(stage_.u_rows.end(), u.data(), u.data() + H + I);
        stage_.v_rows.insert(stage_.v_rows.end(), v.data(), v.data() + H + I);
        stage_.dzr_rows.insert(stage_.dzr_rows.end(), dpre_zr.data(),
                               dpre_zr.data() + 2 * H);
        stage_.dh_rows.insert(stage_.dh_rows.end(), dpre_h.data(), dpre_h.data() + H);
        ++stage_.rows;
      });
  n->requires_grad = true;  // weight gradients flow even off constant inputs
  return t.wrap(n);
}

void GruCell::flush_stage() {
  if (stage_.rows == 0) return;
  const int H = hidden_, I = input_;
  using CMap = Tensor::ConstMatMap;
  CMap U(stage_.u_rows.data(), stage_.rows, H + I);
  CMap V(stage_.v_rows.data(), stage_.rows, H + I);
  CMap DZR(stage_.dzr_rows.data(), stage_.rows, 2 * H);
  CMap DH(stage_.dh_rows.data(), stage_.rows, H);
  wzr_.grad.mat() += DZR.transpose() * U;
  wh_.grad.mat() += DH.transpose() * V;
  stage_.clear();
}

// ---- ActionSeqEncoder -------------------------------------------------------

ActionSeqEncoder::ActionSeqEncoder(const std::string& name, int act_dim, int max_k, int out,
                                   Rng& rng, int filters)
    : act_dim_(act_dim),
      max_k_(max_k),
      filters_(filters),
      k1_(name + ".conv1.k",
          Tensor::uniform(rng, {filters, act_dim, 3}, -1.0 / std::sqrt(3.0 * act_dim),
                          1.0 / std::sqrt(3.0 * act_dim))),
      b1_(name + ".conv1.b", Tensor::zeros({filters})),
      k2_(name + ".conv2.k",
          Tensor::uniform(rng, {filters, filters, 3}, -1.0 / std::sqrt(3.0 * filters),
                          1.0 / std::sqrt(3.0 * filters))),
      b2_(name + ".conv2.b", Tensor::zeros({filters})),
      proj_(name + ".proj", max_k * filters, out, rng) {}

Var ActionSeqEncoder::encode(Tape& t, const std::vector<Tensor>& actions) {
  require(!actions.empty() && static_cast<int>(actions.size()) <= max_k_,
          "action sequence length {} outside [1, {}]", actions.size(), max_k_);
  Tensor padded({max_k_, act_dim_});
  for (std::size_t i = 0; i < actions.size(); ++i) {
    require(actions[i].numel() == act_dim_, "action dim {} want {}", actions[i].numel(),
            act_dim_);
    std::copy_n(actions[i].data(), act_dim_, padded.data() + i * act_dim_);
  }
  return encode_padded(t, padded, static_cast<int>(actions.size()));
}

Var ActionSeqEncoder::encode_padded(Tape& t, const Tensor& padded, int valid_k) {
  require(padded.ndim() == 2 && padded.dim(0) == max_k_ && padded.dim(1) == act_dim_,
          "padded action block {} want [{},{}]", padded.shape_str(), max_k_, act_dim_);
  require(valid_k >= 1 && valid_k <= max_k_, "valid_k {} outside [1, {}]", valid_k, max_k_);
  Tensor masked = padded;
  std::fill(masked.data() + valid_k * act_dim_, masked.data() + masked.numel(), 0.0);
  Var x = t.constant(std::move(masked));
  Var h1 = bmil::tanh(add_rowvec(conv1d(x, t.var(k1_)), t.var(b1_)));
  Var h2 = bmil::tanh(add_rowvec(conv1d(h1, t.var(k2_)), t.var(b2_)));
  return proj_.forward(t, flatten(h2));
}

std::vector<Param*> ActionSeqEncoder::params() {
  std::vector<Param*> out = {&k1_, &b1_, &k2_, &b2_};
  for (Param* p : proj_.params()) out.push_back(p);
  return out;
}

// ---- GaussianHead -----------------------------------------------------------

GaussianHead::GaussianHead(const std::string& name, int in, int act_dim, Rng& rng)
    : act_dim_(act_dim),
      mean_(name + ".mean", in, act_dim, rng),
      log_std_(name + ".log_std", Tensor::zeros({act_dim})) {}

void GaussianHead::mean_std_numeric(const Tensor& b, Tensor& mu, Tensor& sigma) const {
  mu = mean_.forward_numeric(b);
  sigma = Tensor::zeros({act_dim_});
  for (int i = 0; i < act_dim_; ++i) sigma[i] = std::exp(log_std_.value[i]);
}

Tensor GaussianHead::sample(const Tensor& b, Rng& rng) const {
  Tensor mu, sigma;
  mean_std_numeric(b, mu, sigma);
  for (int i = 0; i < act_dim_; ++i) mu[i] += sigma[i] * rng.normal();
  return mu;
}

Tensor GaussianHead::mean_action(const Tensor& b) const { return mean_.forward_numeric(b); }

double GaussianHead::log_prob_numeric(const Tensor& b, const Tensor& a) const {
  Tensor mu, sigma;
  mean_std_numeric(b, mu, sigma);
  double lp = -0.5 * act_dim_ * kLn2Pi;
  for (int i = 0; i < act_dim_; ++i) {
    const double zi = (a[i] - mu[i]) / sigma[i];
    lp += -0.5 * zi * zi - log_std_.value[i];
  }
  return lp;
}

Var GaussianHead::log_prob(Tape& t, Var b, const Tensor& a) {
  require(a.numel() == act_dim_, "log_prob: action dim {} want {}", a.numel(), act_dim_);
  Var mu = mean_.forward(t, b);
  Var ls = t.var(log_std_);
  Var zv = (t.constant(a) - mu) * bmil::exp(scale(ls, -1.0));
  return add_const(scale(sum(square(zv)), -0.5) - sum(ls), -0.5 * act_dim_ * kLn2Pi);
}

Var GaussianHead::entropy(Tape& t) {
  return add_const(sum(t.var(log_std_)), 0.5 * act_dim_ * (1.0 + kLn2Pi));
}

std::vector<Param*> GaussianHead::params() {
  std::vector<Param*> out = mean_.params();
  out.push_back(&log_std_);
  return out;
}

}  // namespace bmil
