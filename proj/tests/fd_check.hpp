#pragma once

// Test-only finite-difference gradient oracle. Central differences in f64,
// independent of the reverse-mode path it checks.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "trajcast/graph.hpp"
#include "trajcast/tensor.hpp"

namespace trajcast::testing {

struct FdReport {
  double max_rel_err = 0.0;
  std::string worst;  // "input#k[i]"
  std::size_t checked = 0;
};

// build() constructs the computation from leaf vars and returns the scalar
// root. Every element of every input is perturbed by +/-h and the central
// difference is compared against the reverse-mode gradient.
// rel err = |ad - fd| / max(|ad|, |fd|, scale).
inline FdReport fd_check_root(
    const std::function<Var<double>(Graph<double>&, std::vector<Var<double>>&)>& build,
    std::vector<Tensor<double>> inputs, double h = 1e-5, double scale = 1e-6) {
  for (auto& t : inputs) t.requires_grad = true;

  auto value_at = [&](const std::vector<Tensor<double>>& ins) {
    Graph<double> g;
    std::vector<Var<double>> vars;
    vars.reserve(ins.size());
    for (const auto& t : ins) vars.push_back(g.leaf(t));
    Var<double> root = build(g, vars);
    return root.val().data[0];
  };

  std::vector<Tensor<double>> ad_grads;
  {
    Graph<double> g;
    std::vector<Var<double>> vars;
    vars.reserve(inputs.size());
    for (const auto& t : inputs) vars.push_back(g.leaf(t));
    Var<double> root = build(g, vars);
    g.backward(root);
    for (const auto& v : vars)
      ad_grads.push_back(g.has_grad(v.id) ? g.grad(v.id)
                                          : Tensor<double>::zeros(v.val().shape));
  }

  FdReport rep;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].data.size(); ++i) {
      const double orig = inputs[k].data[i];
      inputs[k].data[i] = orig + h;
      const double up = value_at(inputs);
      inputs[k].data[i] = orig - h;
      const double dn = value_at(inputs);
      inputs[k].data[i] = orig;
      const double fd = (up - dn) / (2.0 * h);
      const double adv = ad_grads[k].data[i];
      const double denom = std::max({std::abs(adv), std::abs(fd), scale});
      const double rel = std::abs(adv - fd) / denom;
      ++rep.checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = "input#" + std::to_string(k) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return rep;
}

}  // namespace trajcast::testing
