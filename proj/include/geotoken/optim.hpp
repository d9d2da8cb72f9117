#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>

#include "geotoken/autodiff.hpp"

namespace geotoken::ad {

/// Adam with bias correction. Moment buffers are keyed by Parameter::id and
/// created on first use.
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  std::size_t step_count = 0;
  std::map<std::size_t, Tensor> m;
  std::map<std::size_t, Tensor> v;
};

/// One optimizer step over `params` using their current gradients.
void adam_step(std::span<Parameter* const> params, AdamState& state);

void zero_grads(std::span<Parameter* const> params);

/// Builds a fresh tape, records the loss, and returns the scalar loss node.
using LossFn = std::function<Var(Tape&)>;

/// Compares the analytic gradient of `loss_fn` w.r.t. `param` against the
/// central difference (f(x+h) - f(x-h)) / 2h at each flat index in
/// `indices`. Returns the worst relative error, with denominator
/// max(|analytic|, |numeric|, 1e-8). `param.grad` is zeroed and left holding
/// the analytic gradient; other parameters bound by `loss_fn` accumulate.
double finite_diff_check(const LossFn& loss_fn, Parameter& param,
                         std::span<const std::size_t> indices, double h);

struct Coordinate {
  Parameter* param;
  std::size_t index;
};

/// Same check across several parameters with a single analytic pass.
double finite_diff_check(const LossFn& loss_fn, std::span<Parameter* const> params,
                         std::span<const Coordinate> coords, double h);

}  // namespace geotoken::ad
