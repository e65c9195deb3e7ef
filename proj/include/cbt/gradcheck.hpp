#ifndef CBT_GRADCHECK_HPP
#define CBT_GRADCHECK_HPP

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cbt/tensor.hpp"

// Central-difference verification of reverse-mode gradients, 64-bit only.
// The callable rebuilds its graph from the current values of `inputs` on
// every invocation, so perturbing an input element and re-evaluating gives
// the numeric directional derivative.

namespace cbt {

struct GradCheckReport {
  // |analytic - numeric| / max(1, |analytic|, |numeric|), worst coordinate
  double max_err = 0.0;
  std::string worst;
};

inline GradCheckReport finite_diff_report(const std::function<TensorD()>& f,
                                          std::vector<TensorD> inputs,
                                          double h = 1e-5, int max_coords = 0,
                                          RandomSource* rng = nullptr) {
  for (auto& t : inputs) t.set_requires_grad(true);

  TensorD y = f();
  y.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    if (t.has_grad())
      analytic.push_back(t.grad());
    else
      analytic.emplace_back(static_cast<size_t>(t.numel()), 0.0);
    t.zero_grad();
  }

  GradCheckReport report;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& vals = inputs[ti].data();
    const int64_t n = inputs[ti].numel();
    std::vector<int64_t> coords;
    if (max_coords > 0 && n > max_coords) {
      CBT_REQUIRE(rng, "finite_diff_report: sampling requires an rng");
      std::vector<int64_t> all(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
      rng->shuffle(all);
      coords.assign(all.begin(), all.begin() + max_coords);
    } else {
      coords.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    }
    for (int64_t i : coords) {
      const double orig = vals[static_cast<size_t>(i)];
      const double hi = h * std::max(1.0, std::abs(orig));
      vals[static_cast<size_t>(i)] = orig + hi;
      const double yp = f().item();
      vals[static_cast<size_t>(i)] = orig - hi;
      const double ym = f().item();
      vals[static_cast<size_t>(i)] = orig;
      const double numeric = (yp - ym) / (2.0 * hi);
      const double a = analytic[ti][static_cast<size_t>(i)];
      const double err = std::abs(a - numeric) /
                         std::max({1.0, std::abs(a), std::abs(numeric)});
      if (err > report.max_err) {
        report.max_err = err;
        report.worst = cat("input ", ti, " @ ", i, ": analytic ", a,
                           " vs numeric ", numeric);
      }
    }
  }
  return report;
}

inline double finite_diff_check(const std::function<TensorD()>& f,
                                std::vector<TensorD> inputs, double h = 1e-5,
                                int max_coords = 0,
                                RandomSource* rng = nullptr) {
  return finite_diff_report(f, std::move(inputs), h, max_coords, rng).max_err;
}

}  // namespace cbt

#endif
