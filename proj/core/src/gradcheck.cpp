#include "wnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "wnet/rng.hpp"

namespace wnet {

namespace {

double contract(const Tensor<double>& out, const Tensor<double>& cotangent) {
  double acc = 0.0;
  const double* o = out.data();
  const double* r = cotangent.data();
  for (std::int64_t i = 0; i < out.numel(); ++i) acc += o[i] * r[i];
  return acc;
}

}  // namespace

GradCheckReport grad_check(const std::function<NodePtr<double>()>& forward,
                           const std::vector<NodePtr<double>>& leaves,
                           double tolerance, double step, std::uint64_t seed,
                           int max_elements_per_tensor) {
  GradCheckReport report;
  report.tolerance = tolerance;

  NodePtr<double> out = forward();
  Rng rng(Rng::mix(seed, 0x67c0de));
  Tensor<double> cotangent(out->value.dims());
  for (std::int64_t i = 0; i < cotangent.numel(); ++i) {
    const double mag = rng.uniform(0.5, 1.5);
    cotangent.data()[i] = rng.bernoulli(0.5) ? mag : -mag;
  }

  for (const auto& leaf : leaves) leaf->zero_grad();
  backward(out, cotangent);
  out.reset();

  // Numeric passes only need values.
  autograd::NoGradGuard no_grad;

  bool all_ok = true;
  int leaf_idx = 0;
  for (const auto& leaf : leaves) {
    GradCheckEntry entry;
    entry.name = leaf->name.empty() ? "leaf" + std::to_string(leaf_idx) : leaf->name;
    const Tensor<double> analytic = leaf->grad_ref();  // copy: forward() reruns below

    std::vector<std::int64_t> indices;
    const std::int64_t numel = leaf->value.numel();
    if (max_elements_per_tensor > 0 && numel > max_elements_per_tensor) {
      Rng pick(Rng::mix(seed, 0x5e1ec7 + leaf_idx));
      std::vector<char> taken(numel, 0);
      while (static_cast<int>(indices.size()) < max_elements_per_tensor) {
        const std::int64_t j = pick.uniform_int(0, numel - 1);
        if (!taken[j]) {
          taken[j] = 1;
          indices.push_back(j);
        }
      }
      std::sort(indices.begin(), indices.end());
    } else {
      indices.resize(numel);
      for (std::int64_t j = 0; j < numel; ++j) indices[j] = j;
    }

    for (std::int64_t j : indices) {
      double* slot = leaf->value.data() + j;
      const double saved = *slot;
      *slot = saved + step;
      const double plus = contract(forward()->value, cotangent);
      *slot = saved - step;
      const double minus = contract(forward()->value, cotangent);
      *slot = saved;

      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic.data()[j];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        entry.finite = false;
        continue;
      }
      const double rel =
          std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 0.01);
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    entry.checked_elements = static_cast<std::int64_t>(indices.size());
    if (!entry.finite || entry.max_rel_err > tolerance) all_ok = false;
    report.entries.push_back(std::move(entry));
    ++leaf_idx;
  }
  report.pass = all_ok;
  return report;
}

}  // namespace wnet
