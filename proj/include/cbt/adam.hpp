#ifndef CBT_ADAM_HPP
#define CBT_ADAM_HPP

#include <vector>

#include "cbt/tensor.hpp"

namespace cbt {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  int64_t step_count = 0;
  std::vector<std::vector<T>> m, v;  // one entry per parameter, same order

  void init(const std::vector<TensorT<T>>& params) {
    step_count = 0;
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(static_cast<size_t>(p.numel()), T(0));
      v.emplace_back(static_cast<size_t>(p.numel()), T(0));
    }
  }

  bool matches(const std::vector<TensorT<T>>& params) const {
    if (m.size() != params.size() || v.size() != params.size()) return false;
    for (size_t i = 0; i < params.size(); ++i)
      if (static_cast<int64_t>(m[i].size()) != params[i].numel() ||
          static_cast<int64_t>(v[i].size()) != params[i].numel())
        return false;
    return true;
  }
};

// Standard bias-corrected update; refuses non-finite gradients so a diverged
// run stops at the last good parameters.
template <typename T>
void adam_step(std::vector<TensorT<T>>& params, AdamState<T>& state,
               const AdamConfig& cfg);

using AdamStateF = AdamState<float>;

}  // namespace cbt

#endif
