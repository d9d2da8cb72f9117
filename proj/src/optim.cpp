#include "geotoken/optim.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "geotoken/errors.hpp"

namespace geotoken::ad {

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

void adam_step(std::span<Parameter* const> params, AdamState& state) {
  ++state.step_count;
  const auto t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (Parameter* p : params) {
    auto [mit, m_new] = state.m.try_emplace(p->id, Tensor::zeros_like(p->value));
    auto [vit, v_new] = state.v.try_emplace(p->id, Tensor::zeros_like(p->value));
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    if (!m.same_shape(p->value) || !v.same_shape(p->value)) {
      throw ShapeError("adam_step: moment shape mismatch for " + p->name);
    }
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p->value[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
    p->value.check_finite(p->name);
  }
}

double finite_diff_check(const LossFn& loss_fn, std::span<Parameter* const> params,
                         std::span<const Coordinate> coords, double h) {
  if (!(h > 0.0)) throw DomainError("finite_diff_check: step must be positive");
  const auto evaluate = [&] {
    Tape tape;
    return tape.value(loss_fn(tape)).item();
  };

  zero_grads(params);
  {
    Tape tape;
    tape.backward(loss_fn(tape));
  }

  double worst = 0.0;
  for (const Coordinate& c : coords) {
    Parameter& p = *c.param;
    if (c.index >= p.value.size()) {
      throw IndexError("finite_diff_check: index " + std::to_string(c.index) + " outside " + p.name);
    }
    const double original = p.value[c.index];
    p.value[c.index] = original + h;
    const double plus = evaluate();
    p.value[c.index] = original - h;
    const double minus = evaluate();
    p.value[c.index] = original;

    const double numeric = (plus - minus) / (2.0 * h);
    const double analytic = p.grad[c.index];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

double finite_diff_check(const LossFn& loss_fn, Parameter& param,
                         std::span<const std::size_t> indices, double h) {
  std::vector<Coordinate> coords;
  coords.reserve(indices.size());
  for (std::size_t i : indices) coords.push_back({&param, i});
  Parameter* const one[] = {&param};
  return finite_diff_check(loss_fn, one, coords, h);
}

}  // namespace geotoken::ad
