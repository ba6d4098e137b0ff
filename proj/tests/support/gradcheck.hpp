#pragma once

// Central-finite-difference gradient checker: the oracle every
// differentiable operation is verified against.

#include <functional>
#include <string>
#include <vector>

#include "traj/graph.hpp"
#include "traj/nn.hpp"

namespace traj::testing {

// Builds the scalar loss graph on the given tape against the given store.
using LossBuilder = std::function<VarId(Tape&, const ParameterStore&)>;

struct GradCheck {
  double max_rel_err = 0.0;
  int probes = 0;
};

// Compares analytic gradients against central differences (step h) at
// `probes` random parameter coordinates. Relative error uses
// |fd - analytic| / max(|fd|, |analytic|, 0.01).
GradCheck finite_difference_check(ParameterStore& store, const LossBuilder& build, int probes,
                                  uint64_t seed, double h = 1e-4);

// Convenience: random-normal fill of every parameter (scaled), for checks
// that want a generic position in parameter space.
void randomize_params(ParameterStore& store, uint64_t seed, double scale = 0.3);

}  // namespace traj::testing
