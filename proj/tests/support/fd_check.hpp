#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "latentaug/graph.hpp"
#include "latentaug/rng.hpp"
#include "latentaug/tensor.hpp"

namespace latentaug::testing {

struct FdReport {
  int checked = 0;
  int failed = 0;
  double worst_rel = 0.0;
  std::string worst_where;
};

// Central finite difference of the graph output w.r.t. one input element.
inline double fd_partial(Graph& graph, const std::string& name, const Tensor& base, int64_t index,
                         double h) {
  Tensor bumped = base;
  bumped[index] = base[index] + h;
  graph.bind(name, bumped);
  double up = graph.evaluate();
  bumped[index] = base[index] - h;
  graph.bind(name, bumped);
  double down = graph.evaluate();
  graph.bind(name, base);
  return (up - down) / (2.0 * h);
}

// Compares backprop gradients against central differences for every listed
// input, probing at most `probes_per_input` random elements of each. The
// relative error uses a magnitude floor so near-zero gradients do not
// divide by zero.
inline FdReport fd_check(Graph& graph, const std::map<std::string, Tensor>& inputs,
                         const std::vector<std::string>& names, Rng& rng, double tol = 1e-4,
                         int probes_per_input = 5, double h = 1e-5, double floor = 1e-6) {
  FdReport report;
  for (const auto& [name, value] : inputs) graph.bind(name, value);
  graph.evaluate();
  auto grads = graph.backprop(names);

  for (const auto& name : names) {
    const Tensor& base = inputs.at(name);
    const Tensor& grad = grads.at(name);
    int probes = static_cast<int>(std::min<int64_t>(probes_per_input, base.numel()));
    for (int p = 0; p < probes; ++p) {
      int64_t idx = rng.uniform_int(0, base.numel() - 1);
      double ad = grad[idx];
      auto rel_at = [&](double step) {
        double fd = fd_partial(graph, name, base, idx, step);
        return std::fabs(ad - fd) / std::max({floor, std::fabs(fd), std::fabs(ad)});
      };
      double rel = rel_at(h);
      // A probe that lands within h of an activation kink sees an O(1)
      // difference error; shrinking the step disambiguates that from a
      // genuinely wrong gradient.
      if (rel > tol) rel = std::min(rel, rel_at(h * 0.1));
      if (rel > tol) rel = std::min(rel, rel_at(h * 0.01));
      ++report.checked;
      if (rel > report.worst_rel) {
        report.worst_rel = rel;
        report.worst_where = name + "[" + std::to_string(idx) + "]";
      }
      if (rel > tol) ++report.failed;
    }
  }
  // Leave the graph evaluated on the unperturbed inputs.
  graph.evaluate();
  return report;
}

}  // namespace latentaug::testing
