#pragma once

#include <functional>
#include <string>
#include <vector>

#include "core/graph.hpp"
#include "core/rng.hpp"

namespace bmil::verify {

struct FdBlock {
  std::string name;
  int coords_checked = 0;
  double max_rel_err = 0.0;
  bool pass = true;
};

struct FdReport {
  std::vector<FdBlock> blocks;
  double worst_rel_err = 0.0;
  bool pass = true;

  std::string to_string() const;
};

// Central-difference gradient check. `build_loss` must be a pure function of
// the current values of `params` (plus fixed data): it is rebuilt on a fresh
// tape per evaluation. Analytic gradients come from one backward pass;
// numeric ones from (f(x+h)-f(x-h))/2h per coordinate, sub-sampled to at most
// `max_coords` coordinates per parameter block. Relative error is
// |a-f| / max(1e-8, |a|+|f|).
FdReport finite_diff_check(const std::function<Var(Tape&)>& build_loss,
                           const std::vector<Param*>& params, Rng& rng, double h = 1e-5,
                           double tol = 1e-4, int max_coords = 200);

}  // namespace bmil::verify
