#include "dforge/adam.hpp"

#include <cmath>

namespace dforge::ad {

void Adam::step(ParamSet& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (NamedParam& p : params) {
    if (!p.value.has_grad())
      fail("adam: parameter '" + p.name + "' has no gradient");
    Moments& m = state_[p.name];
    const size_t n = p.value.values().size();
    if (m.m1.empty()) {
      m.m1.assign(n, 0.0);
      m.m2.assign(n, 0.0);
    }
    std::vector<double>& v = p.value.values();
    std::vector<double>& g = p.value.grad();
    for (size_t i = 0; i < n; ++i) {
      const double gi = g[i] + weight_decay_ * v[i];
      m.m1[i] = beta1_ * m.m1[i] + (1.0 - beta1_) * gi;
      m.m2[i] = beta2_ * m.m2[i] + (1.0 - beta2_) * gi * gi;
      const double mh = m.m1[i] / bc1;
      const double vh = m.m2[i] / bc2;
      v[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
    }
    p.value.zero_grad();
  }
}

void zero_grads(ParamSet& params) {
  for (NamedParam& p : params) p.value.zero_grad();
}

}  // namespace dforge::ad
