#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "core/fdcheck.hpp"
#include "core/graph.hpp"
#include "core/rng.hpp"

namespace bmil::verify {

// One randomized gradient-check instance: owns its parameters (free-standing
// or inside a module object) and fixed data; `build` re-creates the scalar
// loss on any tape from the current param values.
struct GradInstance {
  std::vector<std::unique_ptr<Param>> owned;  // free-standing params
  std::shared_ptr<void> module;               // keeps a module's params alive
  std::vector<Param*> params;                 // blocks the harness perturbs
  std::function<Var(Tape&)> build;

  const std::vector<Param*>& param_ptrs() const { return params; }
};

struct GradCase {
  std::string name;
  std::function<GradInstance(Rng&)> make;
};

// Registry of every differentiable op and module loss, each wrapped as a
// randomized scalar-loss builder for the finite-difference harness.
const std::vector<GradCase>& grad_cases();

// Runs `instances` randomized instances of each registered case.
// Returns the names of failing cases (empty = all pass).
std::vector<std::string> run_grad_suite(int instances, std::uint64_t seed,
                                        std::vector<std::string>* log = nullptr);

}  // namespace bmil::verify
