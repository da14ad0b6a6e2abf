#pragma once

// Test-only oracles: finite differences, brute-force scans, clustering
// agreement. Nothing here may call the implementation path it is checking.

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "gnem/autodiff.hpp"
#include "gnem/tensor.hpp"

namespace oracle {

using gnem::Tensor;

/// Builds a scalar loss on a fresh tape from the given leaf inputs.
using LossBuilder =
    std::function<gnem::Var(gnem::Tape<double>&, const std::vector<gnem::Var>&)>;

struct GradCheck {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::string worst;
};

inline double loss_value(const LossBuilder& build, const std::vector<Tensor<double>>& inputs) {
  gnem::Tape<double> tape;
  std::vector<gnem::Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.input(t, true));
  return tape.val(build(tape, vars))[0];
}

/// Central finite differences against tape gradients for every input element.
/// rel err uses max(|analytic|, |numeric|, floor) as denominator so that
/// structurally zero gradients are compared absolutely at floor * tol.
inline GradCheck check_gradients(const LossBuilder& build,
                                 std::vector<Tensor<double>> inputs, double h = 1e-5,
                                 double denom_floor = 1e-4) {
  gnem::Tape<double> tape;
  std::vector<gnem::Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.input(t, true));
  gnem::Var loss = build(tape, vars);
  tape.backward(loss);

  GradCheck rep;
  for (size_t pi = 0; pi < inputs.size(); ++pi) {
    const auto& analytic = tape.grad(vars[pi]);
    for (size_t e = 0; e < inputs[pi].numel(); ++e) {
      double keep = inputs[pi][e];
      inputs[pi][e] = keep + h;
      double up = loss_value(build, inputs);
      inputs[pi][e] = keep - h;
      double down = loss_value(build, inputs);
      inputs[pi][e] = keep;
      double numeric = (up - down) / (2.0 * h);
      double a = analytic[e];
      double abs_err = std::abs(a - numeric);
      double rel = abs_err / std::max({std::abs(a), std::abs(numeric), denom_floor});
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = "input " + std::to_string(pi) + " elem " + std::to_string(e) +
                    " analytic " + std::to_string(a) + " numeric " + std::to_string(numeric);
      }
      rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
    }
  }
  return rep;
}

inline Tensor<double> random_tensor(std::vector<size_t> shape, gnem::Rng& rng, double lo = -1.0,
                                    double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

/// Normalized mutual information between two labelings (1.0 = identical
/// partitions up to renaming).
inline double nmi(const std::vector<size_t>& a, const std::vector<size_t>& b) {
  size_t n = a.size();
  if (n == 0 || n != b.size()) return 0.0;
  std::map<size_t, double> pa, pb;
  std::map<std::pair<size_t, size_t>, double> pj;
  for (size_t i = 0; i < n; ++i) {
    pa[a[i]] += 1.0;
    pb[b[i]] += 1.0;
    pj[{a[i], b[i]}] += 1.0;
  }
  double mi = 0, ha = 0, hb = 0;
  for (auto& [k, v] : pa) {
    v /= double(n);
    ha -= v * std::log(v);
  }
  for (auto& [k, v] : pb) {
    v /= double(n);
    hb -= v * std::log(v);
  }
  for (auto& [k, v] : pj) {
    v /= double(n);
    mi += v * std::log(v / (pa[k.first] * pb[k.second]));
  }
  if (ha <= 0 || hb <= 0) return ha == hb ? 1.0 : 0.0;
  return mi / std::sqrt(ha * hb);
}

}  // namespace oracle
