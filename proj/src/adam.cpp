#include "cbt/adam.hpp"

#include <cmath>

namespace cbt {

template <typename T>
void adam_step(std::vector<TensorT<T>>& params, AdamState<T>& state,
               const AdamConfig& cfg) {
  CBT_REQUIRE(state.matches(params), "adam_step: state does not mirror the ",
              params.size(), " parameter tensors");
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& g = params[i].grad();
    if (!g.empty())
      CBT_REQUIRE(all_finite(g.data(), params[i].numel()),
                  "adam_step: non-finite gradient in parameter ", i,
                  ", update refused");
  }

  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step_count));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step_count));

  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].data();
    auto& gv = params[i].grad();  // allocates zeros when never written
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    const int64_t n = params[i].numel();
    for (int64_t j = 0; j < n; ++j) {
      const double g = double(gv[j]);
      const double mj = cfg.beta1 * double(m[j]) + (1.0 - cfg.beta1) * g;
      const double vj = cfg.beta2 * double(v[j]) + (1.0 - cfg.beta2) * g * g;
      m[j] = T(mj);
      v[j] = T(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      p[j] = T(double(p[j]) - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

template void adam_step<float>(std::vector<TensorT<float>>&, AdamState<float>&,
                               const AdamConfig&);
template void adam_step<double>(std::vector<TensorT<double>>&,
                                AdamState<double>&, const AdamConfig&);

}  // namespace cbt
