#include "core/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "core/error.hpp"

namespace bmil {

RmsProp::RmsProp(std::vector<Param*> params, double lr, double alpha, double eps)
    : params_(std::move(params)), lr0_(lr), alpha_(alpha), eps_(eps) {
  square_avg_.reserve(params_.size());
  for (Param* p : params_) square_avg_.push_back(Tensor::zeros(p->value.shape()));
}

double RmsProp::current_lr() const {
  if (decay_total_ <= 0) return lr0_;
  const double frac = 1.0 - static_cast<double>(step_count_) / static_cast<double>(decay_total_);
  return lr0_ * std::max(0.0, frac);
}

void RmsProp::zero_grads() {
  for (Param* p : params_) p->zero_grad();
}

void RmsProp::step() {
  if (decay_total_ > 0 && step_count_ >= decay_total_) {
    // Schedule fully decayed: leave params untouched but keep counting.
    exhausted_ = true;
    if (!warned_) {
      warned_ = true;
      std::fputs("warning: optimizer stepped past its decay schedule; updates are no-ops\n",
                 stderr);
    }
    ++step_count_;
    return;
  }
  const double lr = current_lr();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    Tensor& s = square_avg_[i];
    require(p.grad.all_finite(), "non-finite gradient in param '{}'", p.name);
    double* sv = s.data();
    double* pv = p.value.data();
    const double* g = p.grad.data();
    for (int j = 0; j < p.value.numel(); ++j) {
      sv[j] = alpha_ * sv[j] + (1.0 - alpha_) * g[j] * g[j];
      pv[j] -= lr * g[j] / (std::sqrt(sv[j]) + eps_);
    }
  }
  ++step_count_;
}

}  // namespace bmil
