#pragma once

// Trainable parameters, Adam with a step learning-rate schedule, and the
// central-difference harness used to verify reverse-mode gradients.

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "baformer/numeric.hpp"
#include "baformer/rng.hpp"

namespace baformer {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::zeros(value.rows, value.cols)) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

struct OptimState {
  std::vector<Matrix> m;  // first moments, aligned with the parameter list
  std::vector<Matrix> v;  // second moments
  int64_t step = 0;
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double decay_factor = 0.5;
  int decay_interval = 100;  // epochs between learning-rate decays

  static OptimState init(const std::vector<Parameter>& params, double lr,
                         double decay_factor = 0.5, int decay_interval = 100) {
    OptimState s;
    s.learning_rate = lr;
    s.decay_factor = decay_factor;
    s.decay_interval = decay_interval;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const Parameter& p : params) {
      s.m.push_back(Matrix::zeros(p.value.rows, p.value.cols));
      s.v.push_back(Matrix::zeros(p.value.rows, p.value.cols));
    }
    return s;
  }

  // Step schedule: lr scaled by decay_factor every decay_interval epochs.
  double lr_at_epoch(int epoch) const {
    if (decay_interval <= 0) return learning_rate;
    return learning_rate * std::pow(decay_factor, epoch / decay_interval);
  }
};

// One Adam update with bias correction over params[i].grad. Throws on
// non-finite gradients before touching any value.
inline void adam_step(std::vector<Parameter>& params, OptimState& state, int epoch = 0) {
  if (params.size() != state.m.size())
    throw std::invalid_argument("adam_step: state tracks " + std::to_string(state.m.size()) +
                                " parameters, got " + std::to_string(params.size()));
  for (const Parameter& p : params) {
    if (!p.grad.same_shape(p.value))
      throw std::invalid_argument("adam_step: grad shape mismatch for " + p.name);
    if (!p.grad.all_finite())
      throw std::runtime_error("adam_step: non-finite gradient in " + p.name);
  }
  const double lr = state.lr_at_epoch(epoch);
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Matrix& value = params[i].value;
    const Matrix& grad = params[i].grad;
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    for (size_t k = 0; k < value.size(); ++k) {
      const double g = grad.data[k];
      m.data[k] = state.beta1 * m.data[k] + (1.0 - state.beta1) * g;
      v.data[k] = state.beta2 * v.data[k] + (1.0 - state.beta2) * g * g;
      const double mhat = m.data[k] / bc1;
      const double vhat = v.data[k] / bc2;
      value.data[k] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

struct GradCheckOptions {
  double eps = 1e-5;
  // Per tensor: this many largest-|grad| entries plus one seeded random entry.
  int top_entries_per_param = 3;
  uint64_t seed = 0;
};

// Verifies analytically computed gradients against central differences.
//
// loss_fn must read the current parameter values, return the scalar loss, and
// fill every Parameter::grad. The first call records the analytic gradients;
// subsequent calls evaluate perturbed losses (their grads are ignored).
// Returns the max over sampled entries of
//   |analytic - fd| / max(|analytic|, |fd|, 1e-8).
inline double finite_diff_check(const std::function<double()>& loss_fn,
                                std::vector<Parameter>& params,
                                const GradCheckOptions& opt = {}) {
  if (opt.eps <= 0.0) throw std::invalid_argument("finite_diff_check: eps must be > 0");
  const double base = loss_fn();
  if (!std::isfinite(base)) throw std::runtime_error("finite_diff_check: non-finite loss");

  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (const Parameter& p : params) analytic.push_back(p.grad);

  Rng rng(opt.seed);
  double max_rel = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Matrix& value = params[pi].value;
    const Matrix& ga = analytic[pi];
    if (value.size() == 0) continue;

    // Largest-magnitude analytic entries; tiny-gradient entries drown in
    // cancellation noise relative to the 1e-8 denominator floor.
    std::vector<size_t> idx(value.size());
    for (size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    const size_t take = std::min<size_t>(static_cast<size_t>(opt.top_entries_per_param), idx.size());
    std::partial_sort(idx.begin(), idx.begin() + take, idx.end(), [&](size_t a, size_t b) {
      return std::abs(ga.data[a]) > std::abs(ga.data[b]);
    });
    std::vector<size_t> picks(idx.begin(), idx.begin() + take);
    picks.push_back(rng.below(value.size()));

    for (size_t k : picks) {
      const double saved = value.data[k];
      value.data[k] = saved + opt.eps;
      const double up = loss_fn();
      value.data[k] = saved - opt.eps;
      const double down = loss_fn();
      value.data[k] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw std::runtime_error("finite_diff_check: non-finite loss at " + params[pi].name);
      const double fd = (up - down) / (2.0 * opt.eps);
      const double a = ga.data[k];
      const double rel =
          std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8});
      max_rel = std::max(max_rel, rel);
    }
  }

  // Restore analytic grads so callers can keep using them.
  for (size_t pi = 0; pi < params.size(); ++pi) params[pi].grad = analytic[pi];
  (void)base;
  return max_rel;
}

}  // namespace baformer
