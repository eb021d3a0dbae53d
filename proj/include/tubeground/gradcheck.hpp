#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "tubeground/autodiff.hpp"

namespace tubeground::ad {

// Builds a scalar graph from parameter leaves that are already on the tape.
using GraphBuilder = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

inline double evaluate(const GraphBuilder& f, std::span<const Tensor> params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.param(p));
  return f(tape, leaves).item();
}

// Analytic gradients of f at params.
inline std::vector<Tensor> gradients(const GraphBuilder& f, std::span<const Tensor> params) {
  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& p : params) leaves.push_back(tape.param(p));
  Var root = f(tape, leaves);
  tape.backward(root);
  std::vector<Tensor> out;
  for (const Var& l : leaves) out.push_back(l.grad());
  return out;
}

// Compares reverse-mode gradients with central differences of step h over
// every entry of every parameter.
inline GradCheckResult grad_check(const GraphBuilder& f, std::vector<Tensor> params,
                                  double h = 1e-5) {
  if (!(h > 0.0)) throw ContractError("grad_check: step must be positive");
  const std::vector<Tensor> analytic = gradients(f, params);
  GradCheckResult res;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double x0 = params[p][i];
      params[p][i] = x0 + h;
      const double fp = evaluate(f, params);
      params[p][i] = x0 - h;
      const double fm = evaluate(f, params);
      params[p][i] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = relative_error(analytic[p][i], numeric);
      ++res.checked;
      if (err > res.max_rel_error || res.checked == 1) {
        res.max_rel_error = err;
        res.worst_param = p;
        res.worst_index = i;
        res.analytic = analytic[p][i];
        res.numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace tubeground::ad
