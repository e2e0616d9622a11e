#include "core/fdcheck.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "core/error.hpp"

namespace bmil::verify {

std::string FdReport::to_string() const {
  std::string s;
  for (const FdBlock& b : blocks)
    s += fmt::format("  {:<28} coords={:<4} max_rel_err={:.3e} {}\n", b.name, b.coords_checked,
                     b.max_rel_err, b.pass ? "ok" : "FAIL");
  s += fmt::format("  worst={:.3e} -> {}\n", worst_rel_err, pass ? "pass" : "FAIL");
  return s;
}

namespace {

double eval_loss(const std::function<Var(Tape&)>& build_loss) {
  Tape tape;
  Var loss = build_loss(tape);
  require(loss.value().is_scalar(), "finite_diff_check: loss must be scalar, got {}",
          loss.value().shape_str());
  return loss.value().value();
}

}  // namespace

FdReport finite_diff_check(const std::function<Var(Tape&)>& build_loss,
                           const std::vector<Param*>& params, Rng& rng, double h, double tol,
                           int max_coords) {
  // A loss builder that depends on hidden mutable state would make the
  // numeric differences meaningless; demand bit-identical re-evaluation.
  const double v1 = eval_loss(build_loss);
  const double v2 = eval_loss(build_loss);
  require(v1 == v2, "finite_diff_check: loss builder is not reproducible ({} vs {})", v1, v2);

  for (Param* p : params) p->zero_grad();
  {
    Tape tape;
    Var loss = build_loss(tape);
    tape.backward(loss);
  }

  FdReport report;
  for (Param* p : params) {
    FdBlock block;
    block.name = p->name;
    const int n = p->value.numel();

    std::vector<int> coords;
    if (n <= max_coords) {
      coords.resize(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
    } else {
      // Partial Fisher-Yates over indices: max_coords distinct draws.
      std::vector<int> all(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
      for (int i = 0; i < max_coords; ++i) {
        const int j = i + rng.uniform_int(n - i);
        std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(j)]);
      }
      coords.assign(all.begin(), all.begin() + max_coords);
    }

    for (int idx : coords) {
      const double saved = p->value[idx];
      p->value[idx] = saved + h;
      const double fp = eval_loss(build_loss);
      p->value[idx] = saved - h;
      const double fm = eval_loss(build_loss);
      p->value[idx] = saved;

      const double fd = (fp - fm) / (2.0 * h);
      const double an = p->grad[idx];
      const double rel = std::abs(an - fd) / std::max(1e-8, std::abs(an) + std::abs(fd));
      block.max_rel_err = std::max(block.max_rel_err, rel);
    }
    block.coords_checked = static_cast<int>(coords.size());
    block.pass = block.max_rel_err < tol;
    report.worst_rel_err = std::max(report.worst_rel_err, block.max_rel_err);
    report.pass = report.pass && block.pass;
    report.blocks.push_back(std::move(block));
  }
  return report;
}

}  // namespace bmil::verify
