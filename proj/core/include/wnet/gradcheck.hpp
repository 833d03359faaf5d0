#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "wnet/autograd.hpp"

namespace wnet {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool finite = true;
  std::int64_t checked_elements = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;
  bool pass = false;

  double worst() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_err);
    return m;
  }
};

/// Compares analytic gradients against central finite differences.
///
/// forward() must rebuild the graph from the leaves on every call (it is
/// invoked twice per checked element). The comparison contracts the output
/// with a fixed random cotangent R, |R_i| in [0.5, 1.5]: analytic gradients
/// come from one backward pass seeded with R, numeric ones from
/// (L(x+h) - L(x-h)) / 2h with L = sum(out * R).
///
/// Per element the reported error is |a - n| / max(|a| + |n|, 0.01), a
/// relative error with an absolute floor for near-zero gradients.
/// Non-finite values anywhere are reported as failures, never thrown.
///
/// max_elements_per_tensor = 0 checks every element; otherwise a seeded
/// random subset of that size.
GradCheckReport grad_check(const std::function<NodePtr<double>()>& forward,
                           const std::vector<NodePtr<double>>& leaves,
                           double tolerance, double step = 1e-5,
                           std::uint64_t seed = 0,
                           int max_elements_per_tensor = 0);

}  // namespace wnet
